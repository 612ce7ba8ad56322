//! Compression utility, fertility, merge depth and budget sweeps.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::adaptation::{adapt, AdaptConfig, AdaptMode};
use crate::baselines::{first_k, first_k_positive, top_k, Method};
use crate::engine::Encoder;
use crate::error::{Error, Result};
use crate::merge_model::MergeTable;
use crate::pretokenize::{Pretokenizer, WordHistogram};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cu: f64,
    pub fertility: f64,
    pub base_symbols: u64,
    pub token_total: u64,
    pub word_count: u64,
    pub merge_depth: Option<u32>,
    pub actual_count: usize,
}

/// `(base − tokens) / base`.
pub fn compression_utility(base_symbols: u64, token_total: u64) -> f64 {
    (base_symbols as f64 - token_total as f64) / base_symbols as f64
}

/// Highest origin rank among actual merges.
pub fn merge_depth(table: &MergeTable) -> Option<u32> {
    table.merge_depth()
}

/// Canonical tokenization of `hist` with `table`, measured against the
/// histogram's base-symbol count.
pub fn evaluate(table: &MergeTable, hist: &WordHistogram) -> Result<EvalReport> {
    evaluate_against(table, hist, hist.total_base_symbols())
}

/// Like [`evaluate`] with an explicit denominator, e.g. [`char_count`].
pub fn evaluate_against(
    table: &MergeTable,
    hist: &WordHistogram,
    base_symbols: u64,
) -> Result<EvalReport> {
    if hist.is_empty() || base_symbols == 0 {
        return Err(Error::EmptyCorpus);
    }
    let corpus = Encoder::new(table).tokenize_corpus(hist)?;
    let token_total = corpus.token_total();
    let word_count = hist.word_count();
    Ok(EvalReport {
        cu: compression_utility(base_symbols, token_total),
        fertility: token_total as f64 / word_count as f64,
        base_symbols,
        token_total,
        word_count,
        merge_depth: table.merge_depth(),
        actual_count: table.actual_count(),
    })
}

/// Unicode scalar values of the original text behind `hist`; invalid UTF-8
/// counts one per replacement character.
pub fn char_count(hist: &WordHistogram, pretok: &Pretokenizer) -> u64 {
    hist.iter()
        .map(|(word, count)| {
            let original = pretok.decode(word).unwrap_or_else(|| word.to_vec());
            String::from_utf8_lossy(&original).chars().count() as u64 * count
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepConfig {
    pub margin: u64,
    pub mode: AdaptMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            margin: 0,
            mode: AdaptMode::Fast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub method: Method,
    pub budget: usize,
    /// Adaptation-corpus size: the loop's incremental total for adaptbpe,
    /// canonical tokenization for the baselines.
    pub dev_tokens: u64,
    /// Canonical tokenization of the test corpus, when one is given.
    pub test_tokens: Option<u64>,
    /// Measured on the test corpus when given, else on the dev corpus.
    pub cu: f64,
    pub fertility: f64,
    pub merge_depth: Option<u32>,
    pub seconds: f64,
    /// Canonical dev-corpus size, kept for monotonicity reporting.
    #[serde(skip)]
    pub dev_canonical: u64,
}

/// Builds the table of one method at one budget. Returns it with the dev
/// token total as defined for [`SweepRecord::dev_tokens`].
pub fn build_method(
    method: Method,
    table: &MergeTable,
    dev: &WordHistogram,
    budget: usize,
    config: SweepConfig,
) -> Result<(MergeTable, Option<u64>)> {
    Ok(match method {
        Method::AdaptBpe => {
            let r = adapt(
                table,
                dev,
                AdaptConfig {
                    budget,
                    margin: config.margin,
                    mode: config.mode,
                    max_swaps: None,
                },
            )?;
            (r.table, Some(r.incremental_token_total))
        }
        Method::FirstK => (first_k(table, budget)?, None),
        Method::FirstKPositive => (first_k_positive(table, dev, budget)?, None),
        Method::TopK => (top_k(table, dev, budget)?, None),
    })
}

fn sweep_one(
    method: Method,
    budget: usize,
    table: &MergeTable,
    dev: &WordHistogram,
    test: Option<&WordHistogram>,
    config: SweepConfig,
) -> Result<SweepRecord> {
    let start = Instant::now();
    let (derived, incremental) = build_method(method, table, dev, budget, config)?;
    let dev_report = evaluate(&derived, dev)?;
    let test_report = test.map(|t| evaluate(&derived, t)).transpose()?;
    let shown = test_report.as_ref().unwrap_or(&dev_report);
    Ok(SweepRecord {
        method,
        budget,
        dev_tokens: incremental.unwrap_or(dev_report.token_total),
        test_tokens: test_report.as_ref().map(|r| r.token_total),
        cu: shown.cu,
        fertility: shown.fertility,
        merge_depth: derived.merge_depth(),
        seconds: start.elapsed().as_secs_f64(),
        dev_canonical: dev_report.token_total,
    })
}

/// One record per `(method, budget)`, methods outermost, in input order.
/// first_k_pos budgets above the number of merges that fire are skipped.
/// Entries run in parallel; the output order does not depend on scheduling.
pub fn sweep(
    table: &MergeTable,
    dev: &WordHistogram,
    test: Option<&WordHistogram>,
    budgets: &[usize],
    methods: &[Method],
    config: SweepConfig,
) -> Result<Vec<SweepRecord>> {
    if dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| budgets.iter().map(move |&b| (m, b)))
        .collect();
    let results: Vec<Result<SweepRecord>> = jobs
        .par_iter()
        .map(|&(m, b)| sweep_one(m, b, table, dev, test, config))
        .collect();
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            // Budgets beyond the live merges of the corpus have no
            // first_k_pos tokenizer; the rest of the sweep is still valid.
            Err(Error::InsufficientLiveMerges { budget, live }) => {
                log::warn!("first_k_pos: skipping budget {budget}, only {live} merges fire on the dev corpus")
            }
            Err(e) => return Err(e),
        }
    }
    check_monotonicity(&records);
    Ok(records)
}

/// First-k dev totals cannot grow with the budget; adaptbpe canonical totals
/// usually do not, and are only reported when they do.
fn check_monotonicity(records: &[SweepRecord]) {
    for method in [Method::FirstK, Method::AdaptBpe] {
        let mut series: Vec<&SweepRecord> = records.iter().filter(|r| r.method == method).collect();
        series.sort_by_key(|r| r.budget);
        for w in series.windows(2) {
            if w[1].dev_canonical > w[0].dev_canonical {
                match method {
                    Method::FirstK => panic!(
                        "first_k dev total grew from {} (budget {}) to {} (budget {})",
                        w[0].dev_canonical, w[0].budget, w[1].dev_canonical, w[1].budget
                    ),
                    _ => log::warn!(
                        "{method}: canonical dev total grew from {} (budget {}) to {} (budget {})",
                        w[0].dev_canonical,
                        w[0].budget,
                        w[1].dev_canonical,
                        w[1].budget
                    ),
                }
            }
        }
    }
}

pub const SWEEP_HEADER: [&str; 8] = [
    "method",
    "budget",
    "dev_tokens",
    "test_tokens",
    "cu",
    "fertility",
    "merge_depth",
    "seconds",
];

/// Writes sweep records as CSV. With `timing == false` the `seconds` column
/// is left empty so that repeated runs produce identical files.
pub fn write_sweep_csv<W: std::io::Write>(
    records: &[SweepRecord],
    out: W,
    timing: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in records {
        w.write_record([
            r.method.name().to_string(),
            r.budget.to_string(),
            r.dev_tokens.to_string(),
            r.test_tokens.map(|t| t.to_string()).unwrap_or_default(),
            format!("{:.6}", r.cu),
            format!("{:.6}", r.fertility),
            r.merge_depth.map(|d| d.to_string()).unwrap_or_default(),
            if timing {
                format!("{:.3}", r.seconds)
            } else {
                String::new()
            },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
