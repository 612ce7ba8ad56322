//! Comparison tokenizers built from the same pretrained list and budget.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::Encoder;
use crate::error::{Error, Result};
use crate::merge_model::{MergeKind, MergeTable};
use crate::pretokenize::WordHistogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "adaptbpe")]
    AdaptBpe,
    #[serde(rename = "first_k")]
    FirstK,
    #[serde(rename = "first_k_pos")]
    FirstKPositive,
    #[serde(rename = "top_k")]
    TopK,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::AdaptBpe,
        Method::FirstK,
        Method::FirstKPositive,
        Method::TopK,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::AdaptBpe => "adaptbpe",
            Method::FirstK => "first_k",
            Method::FirstKPositive => "first_k_pos",
            Method::TopK => "top_k",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown method {s:?} (expected adaptbpe, first_k, first_k_pos or top_k)")
            })
    }
}

fn check_budget(table: &MergeTable, n: usize) -> Result<()> {
    if n > table.len() {
        return Err(Error::BudgetTooLarge {
            budget: n,
            available: table.len(),
        });
    }
    Ok(())
}

/// The first `n` merges, all actual.
pub fn first_k(table: &MergeTable, n: usize) -> Result<MergeTable> {
    check_budget(table, n)?;
    let picks: Vec<_> = (0..n).map(|i| (i, MergeKind::Actual)).collect();
    table.select(&picks)
}

/// Scans merges in order over an incrementally tokenized corpus. Merges that
/// fire become actual and use up the budget; merges that never fire are kept
/// as virtual for free. Stops after `n` actual merges.
pub fn first_k_positive(table: &MergeTable, hist: &WordHistogram, n: usize) -> Result<MergeTable> {
    let mut corpus = Encoder::empty(table).tokenize_corpus(hist)?;
    let mut picks = Vec::new();
    let mut live = 0;
    for (i, rule) in table.rules().iter().enumerate() {
        if live == n {
            break;
        }
        if corpus.apply_one(rule).count > 0 {
            live += 1;
            picks.push((i, MergeKind::Actual));
        } else {
            picks.push((i, MergeKind::Virtual));
        }
    }
    if live < n {
        return Err(Error::InsufficientLiveMerges { budget: n, live });
    }
    table.select(&picks)
}

/// Surface frequency of each merge result under full tokenization with
/// `table`, indexed by table position.
pub fn surface_frequencies(table: &MergeTable, hist: &WordHistogram) -> Result<Vec<u64>> {
    let corpus = Encoder::new(table).tokenize_corpus(hist)?;
    let mut freq = vec![0u64; table.len()];
    for w in corpus.words() {
        for &t in &w.tokens {
            if let Some(p) = table.producer(t) {
                freq[p] += w.count;
            }
        }
    }
    Ok(freq)
}

/// Keeps the whole list; the producers of the `n` most frequent surface
/// tokens (ties to the lower origin rank) are actual, every other merge is
/// virtual, so output tokens are unmerged down to top-`n` tokens or bytes.
pub fn top_k(table: &MergeTable, hist: &WordHistogram, n: usize) -> Result<MergeTable> {
    check_budget(table, n)?;
    let freq = surface_frequencies(table, hist)?;
    let rules = table.rules();
    let mut ranked: Vec<usize> = (0..table.len()).collect();
    ranked.sort_by_key(|&p| (std::cmp::Reverse(freq[p]), rules[p].origin_rank));
    let mut kinds = vec![MergeKind::Virtual; table.len()];
    for &p in &ranked[..n] {
        kinds[p] = MergeKind::Actual;
    }
    let picks: Vec<_> = kinds.into_iter().enumerate().collect();
    table.select(&picks)
}
