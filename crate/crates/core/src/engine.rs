//! Two-phase BPE tokenization and single-rule rewrites of a tokenized corpus.
//!
//! Canonical tokenization applies every merge of the active list in order
//! (actual and virtual alike), each one replacing the leftmost
//! non-overlapping occurrences of its parent pair, and then walks the list
//! backwards splitting every surviving virtual token into its parents.
//!
//! The merge phase is implemented as lowest-priority-pair-first merging,
//! which is equivalent for proper lists: a rule can only create pairs that
//! belong to later rules. The backward phase is a recursive expansion of
//! virtual tokens, equivalent because a virtual token's parents are always
//! produced by earlier rules.

use std::collections::BTreeSet;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::merge_model::{MergeKind, MergeRule, MergeTable, SymbolId};
use crate::pretokenize::{Pretokenizer, WordHistogram};

/// A tokenizer over a table and an ordered set of its merges (the active
/// list). Symbol ids are those of the underlying table.
#[derive(Debug, Clone)]
pub struct Encoder<'t> {
    table: &'t MergeTable,
    order: Vec<(usize, MergeKind)>,
    priority: FxHashMap<(SymbolId, SymbolId), (u32, SymbolId)>,
    split: Vec<bool>,
    available: Vec<bool>,
}

impl<'t> Encoder<'t> {
    /// Every merge of the table, in list order, with the table's kinds.
    pub fn new(table: &'t MergeTable) -> Self {
        let order: Vec<_> = table
            .rules()
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.kind))
            .collect();
        Self::with_order(table, &order).expect("tables are proper")
    }

    /// No merges at all: words are split into base symbols.
    pub fn empty(table: &'t MergeTable) -> Self {
        let n = table.symbols().len();
        let mut available = vec![false; n];
        available[..table.alphabet_len()].fill(true);
        Encoder {
            table,
            order: Vec::new(),
            priority: FxHashMap::default(),
            split: vec![false; n],
            available,
        }
    }

    pub fn with_order(table: &'t MergeTable, order: &[(usize, MergeKind)]) -> Result<Self> {
        let mut enc = Self::empty(table);
        enc.priority.reserve(order.len());
        for (i, &(position, kind)) in order.iter().enumerate() {
            enc.append(position, kind).map_err(|e| match e {
                Error::ImproperMerge(_) => Error::ImproperMerge(i),
                other => other,
            })?;
        }
        Ok(enc)
    }

    pub fn table(&self) -> &'t MergeTable {
        self.table
    }

    /// The active list: table positions in application order.
    pub fn order(&self) -> &[(usize, MergeKind)] {
        &self.order
    }

    /// Appends a merge to the end of the active list.
    pub fn append(&mut self, position: usize, kind: MergeKind) -> Result<()> {
        let rule = *self.table.rule(position)?;
        let i = self.order.len();
        if !self.available[rule.left as usize]
            || !self.available[rule.right as usize]
            || self.available[rule.result as usize]
        {
            return Err(Error::ImproperMerge(i));
        }
        self.available[rule.result as usize] = true;
        self.split[rule.result as usize] = kind == MergeKind::Virtual;
        self.priority
            .insert((rule.left, rule.right), (i as u32, rule.result));
        self.order.push((position, kind));
        Ok(())
    }

    /// Removes the last merge of the active list.
    pub fn pop(&mut self) -> Option<(usize, MergeKind)> {
        let (position, kind) = self.order.pop()?;
        let rule = self.table.rules()[position];
        self.available[rule.result as usize] = false;
        self.split[rule.result as usize] = false;
        self.priority.remove(&(rule.left, rule.right));
        Some((position, kind))
    }

    /// Changes the kind of an active merge; returns the previous kind.
    pub fn set_kind(&mut self, position: usize, kind: MergeKind) -> Result<MergeKind> {
        let len = self.order.len();
        let slot = self
            .order
            .iter_mut()
            .find(|(p, _)| *p == position)
            .ok_or(Error::OutOfRange { position, len })?;
        let previous = slot.1;
        slot.1 = kind;
        let result = self.table.rules()[position].result;
        self.split[result as usize] = kind == MergeKind::Virtual;
        Ok(previous)
    }

    pub fn is_split(&self, id: SymbolId) -> bool {
        self.split[id as usize]
    }

    pub fn encode_word(&self, word: &[u8]) -> Result<Vec<SymbolId>> {
        Ok(self.encode_symbols(self.table.segment(word)?))
    }

    /// Runs both phases over a sequence of symbols.
    pub fn encode_symbols(&self, mut tokens: Vec<SymbolId>) -> Vec<SymbolId> {
        self.merge_phase(&mut tokens);
        self.unapply_phase(tokens)
    }

    fn merge_phase(&self, tokens: &mut Vec<SymbolId>) {
        if self.priority.is_empty() {
            return;
        }
        loop {
            let mut best: Option<(u32, usize, SymbolId)> = None;
            for (i, w) in tokens.windows(2).enumerate() {
                if let Some(&(prio, result)) = self.priority.get(&(w[0], w[1])) {
                    if best.is_none_or(|(b, _, _)| prio < b) {
                        best = Some((prio, i, result));
                    }
                }
            }
            let Some((_, i, result)) = best else { break };
            tokens[i] = result;
            tokens.remove(i + 1);
        }
    }

    fn unapply_phase(&self, tokens: Vec<SymbolId>) -> Vec<SymbolId> {
        if !tokens.iter().any(|&t| self.split[t as usize]) {
            return tokens;
        }
        let rules = self.table.rules();
        let mut out = Vec::with_capacity(tokens.len() * 2);
        let mut stack = Vec::new();
        for t in tokens {
            stack.push(t);
            while let Some(top) = stack.pop() {
                if self.split[top as usize] {
                    let rule = &rules[self.table.producer(top).expect("virtual tokens are merges")];
                    stack.push(rule.right);
                    stack.push(rule.left);
                } else {
                    out.push(top);
                }
            }
        }
        out
    }

    /// Tokenizes each unique pre-token once, in parallel.
    pub fn tokenize_corpus(&self, hist: &WordHistogram) -> Result<TokenizedCorpus> {
        let entries = hist.sorted();
        let words = entries
            .par_iter()
            .map(|&(surface, count)| {
                Ok(CorpusWord {
                    surface: surface.to_vec(),
                    count,
                    tokens: self.encode_word(surface)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenizedCorpus::from_words(
            words,
            self.table.symbols().len(),
        ))
    }
}

pub type TokenizedWord = Vec<SymbolId>;

/// Canonical two-phase tokenization of one pre-token with every merge of the
/// table.
pub fn tokenize_word(table: &MergeTable, word: &[u8]) -> Result<TokenizedWord> {
    Encoder::new(table).encode_word(word)
}

pub fn tokenize_corpus(table: &MergeTable, hist: &WordHistogram) -> Result<TokenizedCorpus> {
    Encoder::new(table).tokenize_corpus(hist)
}

/// Literal two-phase tokenization by full rescans, one pass per merge.
/// Slow; kept as an oracle for [`Encoder`].
pub fn reference_tokenize(table: &MergeTable, word: &[u8]) -> Result<TokenizedWord> {
    let mut tokens = table.segment(word)?;
    for rule in table.rules() {
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            if i + 1 < tokens.len() && tokens[i] == rule.left && tokens[i + 1] == rule.right {
                out.push(rule.result);
                i += 2;
            } else {
                out.push(tokens[i]);
                i += 1;
            }
        }
        tokens = out;
    }
    for rule in table.rules().iter().rev() {
        if rule.kind == MergeKind::Virtual {
            let mut out = Vec::with_capacity(tokens.len());
            for t in tokens {
                if t == rule.result {
                    out.push(rule.left);
                    out.push(rule.right);
                } else {
                    out.push(t);
                }
            }
            tokens = out;
        }
    }
    Ok(tokens)
}

/// Expands tokens to base symbols and undoes the pre-tokenizer's byte
/// remapping.
pub fn detokenize(
    tokens: &[SymbolId],
    table: &MergeTable,
    pretok: &Pretokenizer,
) -> Result<Vec<u8>> {
    let mut surface = Vec::new();
    for &t in tokens {
        surface.extend_from_slice(&table.symbol(t)?.bytes);
    }
    pretok.decode(&surface).ok_or_else(|| Error::UnknownByte {
        word: String::from_utf8_lossy(&surface).into_owned(),
        offset: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusWord {
    pub surface: Vec<u8>,
    pub count: u64,
    pub tokens: Vec<SymbolId>,
}

/// A word's token sequence before a rewrite touched it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordEdit {
    pub word: u32,
    pub before: Vec<SymbolId>,
}

#[derive(Debug, Clone, Default)]
pub struct Rewrite {
    /// Replacements (apply) or splits (unapply), weighted by word counts.
    pub count: u64,
    pub edits: Vec<WordEdit>,
}

/// The unique pre-tokens of a corpus with their current tokenization, and an
/// inverted index from symbol to the words containing it.
#[derive(Debug, Clone)]
pub struct TokenizedCorpus {
    words: Vec<CorpusWord>,
    token_total: u64,
    occurrences: Vec<BTreeSet<u32>>,
}

impl TokenizedCorpus {
    pub fn from_words(words: Vec<CorpusWord>, symbol_count: usize) -> Self {
        let mut occurrences = vec![BTreeSet::new(); symbol_count];
        let mut token_total = 0;
        for (i, w) in words.iter().enumerate() {
            token_total += w.count * w.tokens.len() as u64;
            for &t in &w.tokens {
                occurrences[t as usize].insert(i as u32);
            }
        }
        TokenizedCorpus {
            words,
            token_total,
            occurrences,
        }
    }

    pub fn words(&self) -> &[CorpusWord] {
        &self.words
    }

    pub fn token_total(&self) -> u64 {
        self.token_total
    }

    pub fn recount_total(&self) -> u64 {
        self.words
            .iter()
            .map(|w| w.count * w.tokens.len() as u64)
            .sum()
    }

    pub fn word_count(&self) -> u64 {
        self.words.iter().map(|w| w.count).sum()
    }

    /// Words whose tokenization contains `symbol`.
    pub fn containing(&self, symbol: SymbolId) -> &BTreeSet<u32> {
        &self.occurrences[symbol as usize]
    }

    /// Replaces the leftmost non-overlapping occurrences of the rule's pair
    /// in every word.
    pub fn apply_one(&mut self, rule: &MergeRule) -> Rewrite {
        let (l, r) = (rule.left as usize, rule.right as usize);
        let candidates: Vec<u32> = if self.occurrences[l].len() <= self.occurrences[r].len() {
            self.occurrences[l].iter().copied().collect()
        } else {
            self.occurrences[r].iter().copied().collect()
        };
        let mut rewrite = Rewrite::default();
        for w in candidates {
            let word = &mut self.words[w as usize];
            let mut out = Vec::with_capacity(word.tokens.len());
            let mut hits = 0u64;
            let mut i = 0;
            let t = &word.tokens;
            while i < t.len() {
                if i + 1 < t.len() && t[i] == rule.left && t[i + 1] == rule.right {
                    out.push(rule.result);
                    hits += 1;
                    i += 2;
                } else {
                    out.push(t[i]);
                    i += 1;
                }
            }
            if hits > 0 {
                rewrite.count += hits * word.count;
                let before = std::mem::replace(&mut word.tokens, out);
                self.reindex(w, &before);
                rewrite.edits.push(WordEdit { word: w, before });
            }
        }
        self.token_total -= rewrite.count;
        rewrite
    }

    /// Splits every occurrence of the rule's result into its parents.
    pub fn unapply_one(&mut self, rule: &MergeRule) -> Rewrite {
        let candidates: Vec<u32> = self.occurrences[rule.result as usize]
            .iter()
            .copied()
            .collect();
        let mut rewrite = Rewrite::default();
        for w in candidates {
            let word = &mut self.words[w as usize];
            let mut out = Vec::with_capacity(word.tokens.len() + 2);
            let mut hits = 0u64;
            for &t in &word.tokens {
                if t == rule.result {
                    out.push(rule.left);
                    out.push(rule.right);
                    hits += 1;
                } else {
                    out.push(t);
                }
            }
            if hits > 0 {
                rewrite.count += hits * word.count;
                let before = std::mem::replace(&mut word.tokens, out);
                self.reindex(w, &before);
                rewrite.edits.push(WordEdit { word: w, before });
            }
        }
        self.token_total += rewrite.count;
        rewrite
    }

    /// Sets a word's tokens; returns the edit if anything changed.
    pub fn replace_tokens(&mut self, word: u32, tokens: Vec<SymbolId>) -> Option<WordEdit> {
        let w = &mut self.words[word as usize];
        if w.tokens == tokens {
            return None;
        }
        self.token_total =
            self.token_total + w.count * tokens.len() as u64 - w.count * w.tokens.len() as u64;
        let before = std::mem::replace(&mut w.tokens, tokens);
        self.reindex(word, &before);
        Some(WordEdit { word, before })
    }

    fn reindex(&mut self, word: u32, before: &[SymbolId]) {
        let mut old: Vec<SymbolId> = before.to_vec();
        old.sort_unstable();
        old.dedup();
        let mut new: Vec<SymbolId> = self.words[word as usize].tokens.clone();
        new.sort_unstable();
        new.dedup();
        for s in &old {
            if new.binary_search(s).is_err() {
                self.occurrences[*s as usize].remove(&word);
            }
        }
        for s in &new {
            if old.binary_search(s).is_err() {
                self.occurrences[*s as usize].insert(word);
            }
        }
    }
}

/// Rewrites `corpus` with one rule; returns the weighted replacement count.
pub fn apply_one(rule: &MergeRule, corpus: &mut TokenizedCorpus) -> u64 {
    corpus.apply_one(rule).count
}

/// Splits every occurrence of `rule.result`; returns the weighted split count.
pub fn unapply_one(rule: &MergeRule, corpus: &mut TokenizedCorpus) -> u64 {
    corpus.unapply_one(rule).count
}
