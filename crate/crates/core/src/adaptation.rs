//! Greedy merge-list adaptation under a fixed budget.
//!
//! Start from the first `N` merges of a pretrained list. While the least
//! frequent actual merge is rarer (by more than the margin) than the most
//! frequent remaining candidate pair, demote the former to a virtual merge,
//! unapply it, apply the candidate, and append it to the active list. The
//! active list always holds exactly `N` actual merges and stays proper:
//! a candidate with a non-zero count has both parents present in the
//! tokenized corpus, so they are produced by earlier active merges.

use std::fmt;

use memchr::memmem;
use serde::{Deserialize, Serialize};

use crate::engine::{Encoder, TokenizedCorpus, WordEdit};
use crate::error::{Error, Result};
use crate::freq_index::FrequencyIndex;
use crate::merge_model::{MergeKind, MergeTable, SymbolId};
use crate::pretokenize::WordHistogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    /// Incremental corpus: unapply the demoted merge, apply the promoted one.
    #[default]
    Fast,
    /// Canonical re-tokenization of affected words after each swap; a swap
    /// that would not shrink the canonical corpus ends the loop.
    Strict,
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptMode::Fast => "fast",
            AdaptMode::Strict => "strict",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptConfig {
    /// Number of actual merges to keep (N).
    pub budget: usize,
    /// Stop-rule slack: swap only while `min + margin < max`.
    pub margin: u64,
    pub mode: AdaptMode,
    pub max_swaps: Option<usize>,
}

impl AdaptConfig {
    pub fn new(budget: usize) -> Self {
        AdaptConfig {
            budget,
            margin: 0,
            mode: AdaptMode::Fast,
            max_swaps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SwapRecord {
    pub step: usize,
    pub demoted_rank: u32,
    pub demoted_freq: u64,
    pub promoted_rank: u32,
    pub promoted_freq: u64,
    /// Corpus size after the swap, in the loop's own accounting.
    pub incremental_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The smallest actual frequency is no longer beaten by the best candidate.
    Margin,
    /// No candidate (or no demotable merge) is left.
    Exhausted,
    /// `max_swaps` reached.
    SwapCap,
    /// Strict mode: the best swap would not shrink the canonical corpus.
    NoCanonicalGain,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Margin => "margin",
            StopReason::Exhausted => "exhausted",
            StopReason::SwapCap => "swap-cap",
            StopReason::NoCanonicalGain => "no-canonical-gain",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Continue(SwapRecord),
    Stop(StopReason),
}

#[derive(Debug, Clone)]
pub struct AdaptationResult {
    /// Active list: the initial prefix in original order (demoted merges kept
    /// in place as virtual), then promoted merges in promotion order.
    pub table: MergeTable,
    pub swap_trace: Vec<SwapRecord>,
    pub stop: StopReason,
    /// Highest origin rank among actual merges.
    pub merge_depth: Option<u32>,
    /// Corpus size under the initial `N`-prefix.
    pub initial_token_total: u64,
    pub incremental_token_total: u64,
    /// Corpus size when the exported table tokenizes it canonically.
    pub canonical_token_total: u64,
}

/// Loop state of one adaptation run, over the positions of `table`.
pub struct Adapter<'t> {
    table: &'t MergeTable,
    config: AdaptConfig,
    encoder: Encoder<'t>,
    corpus: TokenizedCorpus,
    index: FrequencyIndex,
    trace: Vec<SwapRecord>,
    initial_total: u64,
}

impl<'t> Adapter<'t> {
    pub fn new(table: &'t MergeTable, hist: &WordHistogram, config: AdaptConfig) -> Result<Self> {
        if config.budget > table.len() {
            return Err(Error::BudgetTooLarge {
                budget: config.budget,
                available: table.len(),
            });
        }
        if hist.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let prefix: Vec<_> = (0..config.budget).map(|i| (i, MergeKind::Actual)).collect();
        let encoder = Encoder::with_order(table, &prefix)?;
        let corpus = encoder.tokenize_corpus(hist)?;
        let demotable: Vec<usize> = (0..config.budget).collect();
        let candidates: Vec<usize> = (config.budget..table.len()).collect();
        let index = FrequencyIndex::build(&corpus, table, &demotable, &candidates);
        let initial_total = corpus.token_total();
        Ok(Adapter {
            table,
            config,
            encoder,
            corpus,
            index,
            trace: Vec::new(),
            initial_total,
        })
    }

    pub fn corpus(&self) -> &TokenizedCorpus {
        &self.corpus
    }

    pub fn index(&self) -> &FrequencyIndex {
        &self.index
    }

    pub fn trace(&self) -> &[SwapRecord] {
        &self.trace
    }

    /// The active list as `(table position, kind)`.
    pub fn active(&self) -> &[(usize, MergeKind)] {
        self.encoder.order()
    }

    pub fn active_table(&self) -> Result<MergeTable> {
        self.table.select(self.encoder.order())
    }

    pub fn token_total(&self) -> u64 {
        self.corpus.token_total()
    }

    /// One loop iteration.
    pub fn swap_step(&mut self) -> Result<Step> {
        let Ok((p, fp)) = self.index.min_actual() else {
            return Ok(Step::Stop(StopReason::Exhausted));
        };
        let Ok((q, fq)) = self.index.max_candidate() else {
            return Ok(Step::Stop(StopReason::Exhausted));
        };
        if fp.saturating_add(self.config.margin) >= fq {
            return Ok(Step::Stop(StopReason::Margin));
        }
        if self
            .config
            .max_swaps
            .is_some_and(|cap| self.trace.len() >= cap)
        {
            return Ok(Step::Stop(StopReason::SwapCap));
        }
        let before = self.corpus.token_total();
        let edits = match self.config.mode {
            AdaptMode::Fast => self.swap_incremental(p, fp, q, fq)?,
            AdaptMode::Strict => match self.swap_canonical(p, q)? {
                Some(edits) => edits,
                None => return Ok(Step::Stop(StopReason::NoCanonicalGain)),
            },
        };
        self.index
            .update_after_swap(&self.corpus, Some(p), Some(q), &edits);
        let after = self.corpus.token_total();
        assert!(
            after < before,
            "swap must shrink the corpus ({before} -> {after})"
        );
        let record = SwapRecord {
            step: self.trace.len() + 1,
            demoted_rank: self.table.rules()[p].origin_rank,
            demoted_freq: fp,
            promoted_rank: self.table.rules()[q].origin_rank,
            promoted_freq: fq,
            incremental_tokens: after,
        };
        log::debug!(
            "swap {}: demote #{} ({}) promote #{} ({}) -> {} tokens",
            record.step,
            record.demoted_rank,
            fp,
            record.promoted_rank,
            fq,
            after
        );
        self.trace.push(record);
        Ok(Step::Continue(record))
    }

    fn swap_incremental(&mut self, p: usize, fp: u64, q: usize, fq: u64) -> Result<Vec<WordEdit>> {
        let rules = self.table.rules();
        self.encoder.set_kind(p, MergeKind::Virtual)?;
        let split = self.corpus.unapply_one(&rules[p]);
        debug_assert_eq!(
            split.count, fp,
            "every occurrence of the demoted token is split"
        );
        let merged = self.corpus.apply_one(&rules[q]);
        // Splitting can only create new (left, right) pairs, never remove one.
        debug_assert!(merged.count >= fq);
        self.encoder.append(q, MergeKind::Actual)?;
        let mut edits = split.edits;
        edits.extend(merged.edits);
        Ok(edits)
    }

    /// Re-tokenizes every word that can be affected by the swap. Returns
    /// `None` (and leaves the state untouched) if the canonical corpus
    /// would not shrink.
    fn swap_canonical(&mut self, p: usize, q: usize) -> Result<Option<Vec<WordEdit>>> {
        let rules = self.table.rules();
        let demoted_bytes = self.table.symbol_bytes(rules[p].result);
        let promoted_bytes = self.table.symbol_bytes(rules[q].result);
        let demoted_finder = memmem::Finder::new(demoted_bytes);
        let promoted_finder = memmem::Finder::new(promoted_bytes);

        self.encoder.set_kind(p, MergeKind::Virtual)?;
        self.encoder.append(q, MergeKind::Actual)?;
        let mut updates: Vec<(u32, Vec<SymbolId>)> = Vec::new();
        let mut delta: i64 = 0;
        for (i, w) in self.corpus.words().iter().enumerate() {
            if demoted_finder.find(&w.surface).is_none()
                && promoted_finder.find(&w.surface).is_none()
            {
                continue;
            }
            let tokens = self.encoder.encode_word(&w.surface)?;
            if tokens != w.tokens {
                delta += (tokens.len() as i64 - w.tokens.len() as i64) * w.count as i64;
                updates.push((i as u32, tokens));
            }
        }
        if delta >= 0 {
            self.encoder.pop();
            self.encoder.set_kind(p, MergeKind::Actual)?;
            return Ok(None);
        }
        let mut edits = Vec::with_capacity(updates.len());
        for (word, tokens) in updates {
            edits.extend(self.corpus.replace_tokens(word, tokens));
        }
        Ok(Some(edits))
    }

    /// Runs [`Adapter::swap_step`] until it stops.
    pub fn run(&mut self) -> Result<StopReason> {
        loop {
            if let Step::Stop(reason) = self.swap_step()? {
                return Ok(reason);
            }
        }
    }

    pub fn finish(self, stop: StopReason, hist: &WordHistogram) -> Result<AdaptationResult> {
        let table = self.table.select(self.encoder.order())?;
        let canonical_token_total = Encoder::new(&table).tokenize_corpus(hist)?.token_total();
        Ok(AdaptationResult {
            merge_depth: table.merge_depth(),
            table,
            swap_trace: self.trace,
            stop,
            initial_token_total: self.initial_total,
            incremental_token_total: self.corpus.token_total(),
            canonical_token_total,
        })
    }
}

/// Adapts `table` to the corpus `hist` under `config`.
pub fn adapt(
    table: &MergeTable,
    hist: &WordHistogram,
    config: AdaptConfig,
) -> Result<AdaptationResult> {
    let mut adapter = Adapter::new(table, hist, config)?;
    let stop = adapter.run()?;
    log::info!(
        "adaptation stopped ({stop}) after {} swaps: {} -> {} tokens",
        adapter.trace().len(),
        adapter.initial_total,
        adapter.token_total()
    );
    adapter.finish(stop, hist)
}

/// Writes a swap trace as CSV.
pub fn write_trace_csv<W: std::io::Write>(trace: &[SwapRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "step",
        "demoted_rank",
        "demoted_freq",
        "promoted_rank",
        "promoted_freq",
        "incremental_tokens",
    ])?;
    for r in trace {
        w.write_record([
            r.step.to_string(),
            r.demoted_rank.to_string(),
            r.demoted_freq.to_string(),
            r.promoted_rank.to_string(),
            r.promoted_freq.to_string(),
            r.incremental_tokens.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
