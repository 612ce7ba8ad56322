//! Symbols, merge rules and merge tables.
//!
//! A [`MergeTable`] is an ordered merge list over an immutable base alphabet.
//! Symbol ids are dense: `0..alphabet_len` for base symbols, then one id per
//! merge in list order. Every table that exists has passed the properness
//! check: each rule's parents are base symbols or results of earlier rules.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SymbolId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    /// The result token may appear in tokenized output.
    Actual,
    /// Scaffold merge: fires while merging, then is split back into its parents.
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbol {
    pub id: SymbolId,
    pub bytes: Vec<u8>,
    pub is_base: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeRule {
    pub left: SymbolId,
    pub right: SymbolId,
    pub result: SymbolId,
    /// Position of this merge in the pretrained list it came from.
    pub origin_rank: u32,
    pub kind: MergeKind,
}

/// One merge given by the byte strings of its parents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeSpec {
    pub left: Vec<u8>,
    pub right: Vec<u8>,
    pub origin_rank: u32,
    pub kind: MergeKind,
}

#[derive(Debug, Clone)]
pub struct MergeTable {
    symbols: Vec<Symbol>,
    rules: Vec<MergeRule>,
    alphabet_len: usize,
    actual_count: usize,
    by_bytes: FxHashMap<Vec<u8>, SymbolId>,
    pairs: FxHashMap<(SymbolId, SymbolId), u32>,
    max_base_len: usize,
}

impl PartialEq for MergeTable {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols && self.rules == other.rules
    }
}

impl Eq for MergeTable {}

/// Builds a table from an alphabet and `(left, right)` merges given as byte
/// strings. All rules are `Actual` and `origin_rank` is the list position.
pub fn build_merge_table<A, L, R>(alphabet: &[A], raw_merges: &[(L, R)]) -> Result<MergeTable>
where
    A: AsRef<[u8]>,
    L: AsRef<[u8]>,
    R: AsRef<[u8]>,
{
    MergeTable::from_specs(
        alphabet.iter().map(|a| a.as_ref().to_vec()).collect(),
        raw_merges.iter().enumerate().map(|(i, (l, r))| MergeSpec {
            left: l.as_ref().to_vec(),
            right: r.as_ref().to_vec(),
            origin_rank: i as u32,
            kind: MergeKind::Actual,
        }),
    )
}

/// Checks properness of a merge list given as byte strings, without building
/// a table. Returns the first violating position.
pub fn validate_properness<A, L, R>(alphabet: &[A], merges: &[(L, R)]) -> Result<()>
where
    A: AsRef<[u8]>,
    L: AsRef<[u8]>,
    R: AsRef<[u8]>,
{
    let mut known: rustc_hash::FxHashSet<Vec<u8>> =
        alphabet.iter().map(|a| a.as_ref().to_vec()).collect();
    for (i, (l, r)) in merges.iter().enumerate() {
        let (l, r) = (l.as_ref(), r.as_ref());
        if !known.contains(l) || !known.contains(r) {
            return Err(Error::ImproperMerge(i));
        }
        known.insert([l, r].concat());
    }
    Ok(())
}

impl MergeTable {
    /// General constructor: merges are resolved against the alphabet and the
    /// results of earlier merges, in iteration order.
    pub fn from_specs(
        alphabet: Vec<Vec<u8>>,
        merges: impl IntoIterator<Item = MergeSpec>,
    ) -> Result<MergeTable> {
        let mut by_bytes = FxHashMap::default();
        let mut symbols = Vec::with_capacity(alphabet.len());
        let mut max_base_len = 0;
        for (i, bytes) in alphabet.into_iter().enumerate() {
            if bytes.is_empty() {
                return Err(Error::DuplicateSymbol {
                    index: i,
                    symbol: String::new(),
                });
            }
            if by_bytes.contains_key(&bytes) {
                return Err(Error::DuplicateSymbol {
                    index: i,
                    symbol: String::from_utf8_lossy(&bytes).into_owned(),
                });
            }
            max_base_len = max_base_len.max(bytes.len());
            by_bytes.insert(bytes.clone(), i as SymbolId);
            symbols.push(Symbol {
                id: i as SymbolId,
                bytes,
                is_base: true,
            });
        }
        let alphabet_len = symbols.len();

        let mut rules = Vec::new();
        let mut pairs = FxHashMap::default();
        let mut ranks = rustc_hash::FxHashSet::default();
        let mut actual_count = 0;
        for (i, spec) in merges.into_iter().enumerate() {
            let left = *by_bytes.get(&spec.left).ok_or(Error::ImproperMerge(i))?;
            let right = *by_bytes.get(&spec.right).ok_or(Error::ImproperMerge(i))?;
            let bytes = [spec.left, spec.right].concat();
            if by_bytes.contains_key(&bytes) {
                return Err(Error::DuplicateSymbol {
                    index: i,
                    symbol: String::from_utf8_lossy(&bytes).into_owned(),
                });
            }
            if !ranks.insert(spec.origin_rank) {
                return Err(Error::DuplicateSymbol {
                    index: i,
                    symbol: format!("origin rank {}", spec.origin_rank),
                });
            }
            let result = symbols.len() as SymbolId;
            by_bytes.insert(bytes.clone(), result);
            symbols.push(Symbol {
                id: result,
                bytes,
                is_base: false,
            });
            pairs.insert((left, right), i as u32);
            if spec.kind == MergeKind::Actual {
                actual_count += 1;
            }
            rules.push(MergeRule {
                left,
                right,
                result,
                origin_rank: spec.origin_rank,
                kind: spec.kind,
            });
        }
        Ok(MergeTable {
            symbols,
            rules,
            alphabet_len,
            actual_count,
            by_bytes,
            pairs,
            max_base_len,
        })
    }

    /// Derives a new table from a selection of this table's merges, in the
    /// given order and with the given kinds. Origin ranks are preserved.
    pub fn select(&self, picks: &[(usize, MergeKind)]) -> Result<MergeTable> {
        let alphabet = self.symbols[..self.alphabet_len]
            .iter()
            .map(|s| s.bytes.clone())
            .collect();
        let mut specs = Vec::with_capacity(picks.len());
        for &(position, kind) in picks {
            let rule = self.rule(position)?;
            specs.push(MergeSpec {
                left: self.symbols[rule.left as usize].bytes.clone(),
                right: self.symbols[rule.right as usize].bytes.clone(),
                origin_rank: rule.origin_rank,
                kind,
            });
        }
        MergeTable::from_specs(alphabet, specs)
    }

    pub fn alphabet_len(&self) -> usize {
        self.alphabet_len
    }

    /// Number of merges (M).
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn actual_count(&self) -> usize {
        self.actual_count
    }

    pub fn rules(&self) -> &[MergeRule] {
        &self.rules
    }

    pub fn rule(&self, position: usize) -> Result<&MergeRule> {
        self.rules.get(position).ok_or(Error::OutOfRange {
            position,
            len: self.rules.len(),
        })
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn symbol(&self, id: SymbolId) -> Result<&Symbol> {
        self.symbols.get(id as usize).ok_or(Error::UnknownId(id))
    }

    pub fn symbol_bytes(&self, id: SymbolId) -> &[u8] {
        &self.symbols[id as usize].bytes
    }

    pub fn lookup(&self, bytes: &[u8]) -> Option<SymbolId> {
        self.by_bytes.get(bytes).copied()
    }

    /// List position of the merge with parents `(left, right)`.
    pub fn pair_position(&self, left: SymbolId, right: SymbolId) -> Option<usize> {
        self.pairs.get(&(left, right)).map(|&p| p as usize)
    }

    /// List position of the rule producing `id`, `None` for base symbols.
    pub fn producer(&self, id: SymbolId) -> Option<usize> {
        (id as usize)
            .checked_sub(self.alphabet_len)
            .filter(|&p| p < self.rules.len())
    }

    pub fn is_base(&self, id: SymbolId) -> bool {
        (id as usize) < self.alphabet_len
    }

    /// Base alphabet in id order.
    pub fn alphabet(&self) -> impl Iterator<Item = &[u8]> {
        self.symbols[..self.alphabet_len]
            .iter()
            .map(|s| s.bytes.as_slice())
    }

    pub fn set_kind(&mut self, position: usize, kind: MergeKind) -> Result<()> {
        let len = self.rules.len();
        let rule = self
            .rules
            .get_mut(position)
            .ok_or(Error::OutOfRange { position, len })?;
        match (rule.kind, kind) {
            (MergeKind::Actual, MergeKind::Virtual) => self.actual_count -= 1,
            (MergeKind::Virtual, MergeKind::Actual) => self.actual_count += 1,
            _ => {}
        }
        rule.kind = kind;
        Ok(())
    }

    /// Re-checks properness over symbol ids: each parent is a base symbol or
    /// the result of an earlier rule.
    pub fn check_properness(&self) -> Result<()> {
        for (i, rule) in self.rules.iter().enumerate() {
            let limit = (self.alphabet_len + i) as SymbolId;
            if rule.left >= limit || rule.right >= limit {
                return Err(Error::ImproperMerge(i));
            }
        }
        Ok(())
    }

    /// Highest origin rank among `Actual` rules.
    pub fn merge_depth(&self) -> Option<u32> {
        self.rules
            .iter()
            .filter(|r| r.kind == MergeKind::Actual)
            .map(|r| r.origin_rank)
            .max()
    }

    /// Recursively expands a symbol into base symbols.
    pub fn expand(&self, id: SymbolId, out: &mut Vec<SymbolId>) {
        let mut stack = vec![id];
        while let Some(top) = stack.pop() {
            match self.producer(top) {
                None => out.push(top),
                Some(p) => {
                    let rule = &self.rules[p];
                    stack.push(rule.right);
                    stack.push(rule.left);
                }
            }
        }
    }

    /// Splits a pre-token into base symbols by longest match.
    pub fn segment(&self, word: &[u8]) -> Result<Vec<SymbolId>> {
        let mut out = Vec::with_capacity(word.len());
        let mut at = 0;
        'outer: while at < word.len() {
            let longest = self.max_base_len.min(word.len() - at);
            for len in (1..=longest).rev() {
                if let Some(&id) = self.by_bytes.get(&word[at..at + len]) {
                    if self.is_base(id) {
                        out.push(id);
                        at += len;
                        continue 'outer;
                    }
                }
            }
            return Err(Error::UnknownByte {
                word: String::from_utf8_lossy(word).into_owned(),
                offset: at,
            });
        }
        Ok(out)
    }
}
