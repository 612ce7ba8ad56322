//! Unigram and candidate-bigram frequencies over a tokenized corpus.
//!
//! Unigram counts are kept for every symbol. Bigram counts are kept only for
//! candidate merges: the pair of a candidate rule, counted without overlap
//! (a run of `k` copies of `x` holds `k / 2` occurrences of `(x, x)`), which
//! is exactly the number of replacements applying that rule would make.
//!
//! Selection uses two binary heaps with lazy invalidation: every count change
//! pushes a fresh entry, and stale entries are discarded when they surface.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::engine::{TokenizedCorpus, WordEdit};
use crate::error::{Error, Result};
use crate::merge_model::{MergeTable, SymbolId};

type MinEntry = Reverse<(u64, Reverse<u32>, u32)>;
type MaxEntry = (u64, Reverse<u32>, u32);

#[derive(Debug, Clone)]
pub struct FrequencyIndex {
    unigram: Vec<u64>,
    bigram: Vec<u64>,
    candidate_pairs: FxHashMap<(SymbolId, SymbolId), u32>,
    candidate: Vec<bool>,
    demotable: Vec<bool>,
    result_of: Vec<SymbolId>,
    pair_of: Vec<(SymbolId, SymbolId)>,
    origin: Vec<u32>,
    alphabet_len: usize,
    min_heap: BinaryHeap<MinEntry>,
    max_heap: BinaryHeap<MaxEntry>,
}

/// Calls `f(pair, n)` for each adjacent pair of `tokens` with its
/// non-overlapping occurrence count (runs of equal symbols counted `k / 2`).
pub fn for_each_pair(tokens: &[SymbolId], mut f: impl FnMut((SymbolId, SymbolId), u64)) {
    let mut i = 0;
    while i + 1 < tokens.len() {
        let (a, b) = (tokens[i], tokens[i + 1]);
        if a != b {
            f((a, b), 1);
            i += 1;
        } else {
            let mut j = i;
            while j < tokens.len() && tokens[j] == a {
                j += 1;
            }
            f((a, a), ((j - i) / 2) as u64);
            i = j - 1;
        }
    }
}

impl FrequencyIndex {
    /// Counts unigrams over `corpus`, and bigrams for the pairs of the
    /// `candidates` rules. `demotable` are the actual merges eligible for
    /// demotion. Both are table positions.
    pub fn build(
        corpus: &TokenizedCorpus,
        table: &MergeTable,
        demotable: &[usize],
        candidates: &[usize],
    ) -> Self {
        let rules = table.rules();
        let mut index = FrequencyIndex {
            unigram: vec![0; table.symbols().len()],
            bigram: vec![0; rules.len()],
            candidate_pairs: FxHashMap::default(),
            candidate: vec![false; rules.len()],
            demotable: vec![false; rules.len()],
            result_of: rules.iter().map(|r| r.result).collect(),
            pair_of: rules.iter().map(|r| (r.left, r.right)).collect(),
            origin: rules.iter().map(|r| r.origin_rank).collect(),
            alphabet_len: table.alphabet_len(),
            min_heap: BinaryHeap::new(),
            max_heap: BinaryHeap::new(),
        };
        for &c in candidates {
            let r = &rules[c];
            index.candidate[c] = true;
            index.candidate_pairs.insert((r.left, r.right), c as u32);
        }
        for &d in demotable {
            index.demotable[d] = true;
        }
        for w in corpus.words() {
            index.add_word(&w.tokens, w.count as i64);
        }
        index.min_heap = demotable
            .iter()
            .map(|&d| {
                Reverse((
                    index.unigram[rules[d].result as usize],
                    Reverse(index.origin[d]),
                    d as u32,
                ))
            })
            .collect();
        index.max_heap = candidates
            .iter()
            .map(|&c| (index.bigram[c], Reverse(index.origin[c]), c as u32))
            .collect();
        index
    }

    fn add_word(&mut self, tokens: &[SymbolId], sign: i64) {
        for &t in tokens {
            self.unigram[t as usize] = (self.unigram[t as usize] as i64 + sign) as u64;
        }
        if self.candidate_pairs.is_empty() {
            return;
        }
        let pairs = &self.candidate_pairs;
        let bigram = &mut self.bigram;
        for_each_pair(tokens, |pair, n| {
            if n > 0 {
                if let Some(&c) = pairs.get(&pair) {
                    bigram[c as usize] = (bigram[c as usize] as i64 + sign * n as i64) as u64;
                }
            }
        });
    }

    /// Unigram count of a symbol.
    pub fn unigram(&self, symbol: SymbolId) -> u64 {
        self.unigram[symbol as usize]
    }

    /// Frequency of a merge: the unigram count of its result token.
    pub fn merge_frequency(&self, position: usize) -> u64 {
        self.unigram[self.result_of[position] as usize]
    }

    /// Non-overlapping count of a candidate's pair; 0 for non-candidates.
    pub fn bigram(&self, position: usize) -> u64 {
        if self.candidate[position] {
            self.bigram[position]
        } else {
            0
        }
    }

    pub fn is_candidate(&self, position: usize) -> bool {
        self.candidate[position]
    }

    pub fn is_demotable(&self, position: usize) -> bool {
        self.demotable[position]
    }

    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        self.candidate
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| i)
    }

    pub fn demotables(&self) -> impl Iterator<Item = usize> + '_ {
        self.demotable
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| i)
    }

    pub fn origin_rank(&self, position: usize) -> u32 {
        self.origin[position]
    }

    /// Demotable merge with the smallest frequency; ties go to the highest
    /// origin rank.
    pub fn min_actual(&mut self) -> Result<(usize, u64)> {
        while let Some(&Reverse((count, _, pos))) = self.min_heap.peek() {
            let p = pos as usize;
            if self.demotable[p] && self.merge_frequency(p) == count {
                return Ok((p, count));
            }
            self.min_heap.pop();
        }
        Err(Error::EmptySet("no demotable merge"))
    }

    /// Candidate with the largest bigram count; ties go to the lowest origin
    /// rank.
    pub fn max_candidate(&mut self) -> Result<(usize, u64)> {
        while let Some(&(count, _, pos)) = self.max_heap.peek() {
            let p = pos as usize;
            if self.candidate[p] && self.bigram[p] == count {
                return Ok((p, count));
            }
            self.max_heap.pop();
        }
        Err(Error::EmptySet("no candidate merge"))
    }

    /// Moves `promoted` from the candidates to the demotable set, removes
    /// `demoted` from the demotable set, and re-counts the words listed in
    /// `edits` (their previous tokens against their current ones in `corpus`).
    pub fn update_after_swap(
        &mut self,
        corpus: &TokenizedCorpus,
        demoted: Option<usize>,
        promoted: Option<usize>,
        edits: &[WordEdit],
    ) {
        if let Some(d) = demoted {
            self.demotable[d] = false;
        }
        if let Some(p) = promoted {
            if self.candidate[p] {
                self.candidate[p] = false;
                self.bigram[p] = 0;
                self.candidate_pairs.remove(&self.pair_of[p]);
            }
            self.demotable[p] = true;
        }

        let mut touched_symbols = FxHashSet::default();
        let mut touched_candidates = FxHashSet::default();
        let mut seen = FxHashSet::default();
        for edit in edits {
            if !seen.insert(edit.word) {
                continue;
            }
            let word = &corpus.words()[edit.word as usize];
            self.add_word(&edit.before, -(word.count as i64));
            self.add_word(&word.tokens, word.count as i64);
            for tokens in [&edit.before, &word.tokens] {
                touched_symbols.extend(tokens.iter().copied());
                for_each_pair(tokens, |pair, _| {
                    if let Some(&c) = self.candidate_pairs.get(&pair) {
                        touched_candidates.insert(c);
                    }
                });
            }
        }
        if let Some(p) = promoted {
            touched_symbols.insert(self.result_of[p]);
        }

        let mut symbols: Vec<_> = touched_symbols.into_iter().collect();
        symbols.sort_unstable();
        for s in symbols {
            if (s as usize) < self.alphabet_len {
                continue;
            }
            let pos = s as usize - self.alphabet_len;
            if pos < self.demotable.len() && self.demotable[pos] {
                self.min_heap.push(Reverse((
                    self.unigram[s as usize],
                    Reverse(self.origin[pos]),
                    pos as u32,
                )));
            }
        }
        let mut cands: Vec<_> = touched_candidates.into_iter().collect();
        cands.sort_unstable();
        for c in cands {
            let c = c as usize;
            self.max_heap
                .push((self.bigram[c], Reverse(self.origin[c]), c as u32));
        }
    }

    /// Counts as `(kind, key, count)` rows: unigrams for every symbol that
    /// occurs, bigrams for every candidate.
    pub fn rows(&self, table: &MergeTable) -> Vec<(&'static str, String, u64)> {
        let name = |s: SymbolId| String::from_utf8_lossy(table.symbol_bytes(s)).into_owned();
        let mut rows = Vec::new();
        for (s, &c) in self.unigram.iter().enumerate() {
            if c > 0 {
                rows.push(("unigram", name(s as SymbolId), c));
            }
        }
        for c in self.candidates() {
            let r = &table.rules()[c];
            rows.push((
                "bigram",
                format!("{} {}", name(r.left), name(r.right)),
                self.bigram[c],
            ));
        }
        rows
    }

    /// Writes [`FrequencyIndex::rows`] as CSV with header `kind,token,count`.
    pub fn write_csv<W: std::io::Write>(&self, table: &MergeTable, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "token", "count"])?;
        for (kind, key, count) in self.rows(table) {
            w.write_record([kind, key.as_str(), count.to_string().as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
