//! The four-letter toy setup used by unit tests, `self-test` and the
//! acceptance suite.

use rand::Rng;

use crate::merge_model::{build_merge_table, MergeTable};
use crate::pretokenize::{SymbolUnit, WordHistogram};

pub const TOY_ALPHABET: [&str; 4] = ["a", "b", "c", "d"];

pub const TOY_MERGES: &[(&str, &str)] = &[
    ("a", "b"),
    ("ab", "c"),
    ("c", "d"),
    ("ab", "ab"),
    ("abc", "d"),
];

pub const TOY_WORDS: &[(&str, u64)] = &[("abab", 3), ("abcd", 2), ("cd", 5)];

pub fn toy_table() -> MergeTable {
    build_merge_table(&TOY_ALPHABET, TOY_MERGES).expect("toy merges are proper")
}

pub fn toy_histogram() -> WordHistogram {
    WordHistogram::from_counts(SymbolUnit::Bytes, TOY_WORDS.iter().map(|&(w, c)| (w, c)))
}

/// Single-letter alphabet `a, b, …` of the given size (at most 26).
pub fn letters(size: usize) -> Vec<Vec<u8>> {
    assert!(size <= 26);
    (0..size as u8).map(|i| vec![b'a' + i]).collect()
}

/// A proper merge list over `alphabet` whose rules join uniformly chosen
/// available symbols.
pub fn random_table<R: Rng>(rng: &mut R, alphabet: &[Vec<u8>], max_merges: usize) -> MergeTable {
    let mut symbols: Vec<Vec<u8>> = alphabet.to_vec();
    let mut known: rustc_hash::FxHashSet<Vec<u8>> = symbols.iter().cloned().collect();
    let mut merges = Vec::new();
    let target = rng.gen_range(0..=max_merges);
    let mut attempts = 0;
    while merges.len() < target && attempts < target * 20 {
        attempts += 1;
        let l = symbols[rng.gen_range(0..symbols.len())].clone();
        let r = symbols[rng.gen_range(0..symbols.len())].clone();
        let joined = [l.as_slice(), r.as_slice()].concat();
        if known.insert(joined.clone()) {
            symbols.push(joined);
            merges.push((l, r));
        }
    }
    build_merge_table(alphabet, &merges).expect("generated merges are proper")
}

/// A word of `1..=max_len` base symbols. With `skew`, earlier letters are
/// more likely.
pub fn random_word<R: Rng>(
    rng: &mut R,
    alphabet: &[Vec<u8>],
    max_len: usize,
    skew: bool,
) -> Vec<u8> {
    let len = rng.gen_range(1..=max_len);
    let mut w = Vec::new();
    for _ in 0..len {
        let i = if skew {
            let a = rng.gen_range(0..alphabet.len());
            rng.gen_range(0..=a)
        } else {
            rng.gen_range(0..alphabet.len())
        };
        w.extend_from_slice(&alphabet[i]);
    }
    w
}

pub fn random_histogram<R: Rng>(
    rng: &mut R,
    alphabet: &[Vec<u8>],
    words: usize,
    max_len: usize,
    max_count: u64,
    skew: bool,
) -> WordHistogram {
    let mut h = WordHistogram::new(SymbolUnit::Bytes);
    for _ in 0..words {
        let w = random_word(rng, alphabet, max_len, skew);
        h.add(&w, rng.gen_range(1..=max_count));
    }
    h
}

/// Greedy BPE training: repeatedly merges the most frequent adjacent pair
/// (ties to the smallest pair of symbol strings), skipping pairs whose
/// concatenation is already a symbol. Used to produce pretrained
/// lists with realistic frequency structure.
pub fn train_bpe(hist: &WordHistogram, alphabet: &[Vec<u8>], merges: usize) -> MergeTable {
    let mut words: Vec<(Vec<Vec<u8>>, u64)> = hist
        .sorted()
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| vec![b]).collect(), c))
        .collect();
    let mut out: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    let mut known: rustc_hash::FxHashSet<Vec<u8>> = alphabet.iter().cloned().collect();
    for _ in 0..merges {
        let mut counts: std::collections::BTreeMap<(Vec<u8>, Vec<u8>), u64> = Default::default();
        for (w, c) in &words {
            for p in w.windows(2) {
                *counts.entry((p[0].clone(), p[1].clone())).or_default() += c;
            }
        }
        let Some((best, _)) = counts
            .into_iter()
            .filter(|((l, r), _)| !known.contains(&[l.as_slice(), r.as_slice()].concat()))
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            break;
        };
        for (w, _) in &mut words {
            let mut i = 0;
            while i + 1 < w.len() {
                if w[i] == best.0 && w[i + 1] == best.1 {
                    let right = w.remove(i + 1);
                    w[i].extend_from_slice(&right);
                }
                i += 1;
            }
        }
        known.insert([best.0.as_slice(), best.1.as_slice()].concat());
        out.push(best);
    }
    build_merge_table(alphabet, &out).expect("trained merges are proper")
}
