//! Pre-tokenization and the word histogram.
//!
//! Merges never cross pre-token boundaries, so every corpus is reduced to a
//! histogram of unique pre-tokens before any counting happens. Byte-level
//! pre-tokens are stored in the printable remapped alphabet, the same form
//! the merge lists of byte-level tokenizers use.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The split pattern used by GPT-2 style byte-level tokenizers.
pub const GPT2_SPLIT_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

const WHITESPACE_PATTERN: &str = r"\w+|[^\w\s]+";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PretokenizerSpec {
    /// Regex split (when `pattern` is set) followed by the byte-to-printable
    /// remapping.
    ByteLevel {
        pattern: Option<String>,
        add_prefix_space: bool,
    },
    /// Runs of word characters and runs of punctuation; whitespace dropped.
    Whitespace,
    /// The whole text is a single pre-token.
    Identity,
}

impl PretokenizerSpec {
    pub fn gpt2() -> Self {
        PretokenizerSpec::ByteLevel {
            pattern: Some(GPT2_SPLIT_PATTERN.to_string()),
            add_prefix_space: false,
        }
    }

    pub fn is_byte_level(&self) -> bool {
        matches!(self, PretokenizerSpec::ByteLevel { .. })
    }
}

/// The 256-entry byte-to-printable-character table of byte-level BPE.
pub fn byte_to_char() -> &'static [char; 256] {
    static TABLE: OnceLock<[char; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let printable = |b: u32| {
            (u32::from(b'!')..=u32::from(b'~')).contains(&b)
                || (0xA1..=0xAC).contains(&b)
                || (0xAE..=0xFF).contains(&b)
        };
        let mut table = ['\0'; 256];
        let mut shifted = 0;
        for b in 0..256u32 {
            let c = if printable(b) {
                b
            } else {
                shifted += 1;
                255 + shifted
            };
            table[b as usize] = char::from_u32(c).expect("valid scalar");
        }
        table
    })
}

fn char_to_byte(c: char) -> Option<u8> {
    static TABLE: OnceLock<FxHashMap<char, u8>> = OnceLock::new();
    TABLE
        .get_or_init(|| {
            byte_to_char()
                .iter()
                .enumerate()
                .map(|(b, &c)| (c, b as u8))
                .collect()
        })
        .get(&c)
        .copied()
}

/// Base alphabet of byte-level tokenizers, in byte order.
pub fn byte_level_alphabet() -> Vec<Vec<u8>> {
    byte_to_char()
        .iter()
        .map(|c| c.to_string().into_bytes())
        .collect()
}

pub fn remap_bytes(bytes: &[u8]) -> Vec<u8> {
    let table = byte_to_char();
    let mut out = String::with_capacity(bytes.len() * 2);
    out.extend(bytes.iter().map(|&b| table[b as usize]));
    out.into_bytes()
}

/// Inverse of [`remap_bytes`]; `None` if the input is not in the remapped
/// alphabet.
pub fn unmap_bytes(remapped: &[u8]) -> Option<Vec<u8>> {
    std::str::from_utf8(remapped)
        .ok()?
        .chars()
        .map(char_to_byte)
        .collect()
}

enum Splitter {
    Fancy(fancy_regex::Regex),
    Bytes(regex::bytes::Regex),
    None,
}

/// A compiled [`PretokenizerSpec`].
pub struct Pretokenizer {
    spec: PretokenizerSpec,
    splitter: Splitter,
}

impl std::fmt::Debug for Pretokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pretokenizer")
            .field("spec", &self.spec)
            .finish()
    }
}

impl Pretokenizer {
    pub fn new(spec: PretokenizerSpec) -> Result<Self> {
        let splitter = match &spec {
            PretokenizerSpec::ByteLevel {
                pattern: Some(p), ..
            } => Splitter::Fancy(
                fancy_regex::Regex::new(p).map_err(|e| Error::UnsupportedPattern(e.to_string()))?,
            ),
            PretokenizerSpec::ByteLevel { pattern: None, .. } | PretokenizerSpec::Identity => {
                Splitter::None
            }
            PretokenizerSpec::Whitespace => Splitter::Bytes(
                regex::bytes::Regex::new(WHITESPACE_PATTERN).expect("static pattern compiles"),
            ),
        };
        Ok(Pretokenizer { spec, splitter })
    }

    pub fn spec(&self) -> &PretokenizerSpec {
        &self.spec
    }

    /// Splits `text` into pre-tokens. Byte-level pre-tokens are returned in
    /// remapped form.
    pub fn split(&self, text: &[u8]) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        match (&self.spec, &self.splitter) {
            (PretokenizerSpec::Whitespace, Splitter::Bytes(re)) => {
                out.extend(re.find_iter(text).map(|m| m.as_bytes().to_vec()));
            }
            (PretokenizerSpec::Identity, _) => {
                if !text.is_empty() {
                    out.push(text.to_vec());
                }
            }
            (
                PretokenizerSpec::ByteLevel {
                    add_prefix_space, ..
                },
                splitter,
            ) => {
                if text.is_empty() {
                    return out;
                }
                let prefixed;
                let text = if *add_prefix_space && !text[0].is_ascii_whitespace() {
                    prefixed = [b" ".as_slice(), text].concat();
                    prefixed.as_slice()
                } else {
                    text
                };
                let mut raw = Vec::new();
                match splitter {
                    Splitter::Fancy(re) => split_utf8_runs(re, text, &mut raw),
                    _ => raw.push(text),
                }
                out.extend(raw.into_iter().map(remap_bytes));
            }
            _ => unreachable!("splitter matches spec"),
        }
        out
    }

    /// Maps a pre-token back to the bytes of the original text.
    pub fn decode(&self, pretoken: &[u8]) -> Option<Vec<u8>> {
        match self.spec {
            PretokenizerSpec::ByteLevel { .. } => unmap_bytes(pretoken),
            _ => Some(pretoken.to_vec()),
        }
    }
}

/// Regex split over the valid UTF-8 runs of `text`, keeping the gaps between
/// matches. Each invalid byte sequence becomes a pre-token of its own.
fn split_utf8_runs<'a>(re: &fancy_regex::Regex, text: &'a [u8], out: &mut Vec<&'a [u8]>) {
    for chunk in text.utf8_chunks() {
        let valid = chunk.valid();
        let base = valid.as_ptr() as usize - text.as_ptr() as usize;
        let mut last = 0;
        for m in re.find_iter(valid) {
            // A pattern that fails mid-way (backtrack limit) leaves the rest
            // of the run as one piece.
            let Ok(m) = m else { break };
            if m.start() > last {
                out.push(&text[base + last..base + m.start()]);
            }
            if m.end() > m.start() {
                out.push(&text[base + m.start()..base + m.end()]);
            }
            last = m.end();
        }
        if last < valid.len() {
            out.push(&text[base + last..base + valid.len()]);
        }
        if !chunk.invalid().is_empty() {
            out.push(chunk.invalid());
        }
    }
}

pub fn pretokenize(text: &[u8], spec: &PretokenizerSpec) -> Result<Vec<Vec<u8>>> {
    Ok(Pretokenizer::new(spec.clone())?.split(text))
}

/// Counting unit of [`WordHistogram::total_base_symbols`]: the length of the
/// original text in bytes, read off the stored pre-token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SymbolUnit {
    /// Pre-tokens are stored remapped: one character per original byte.
    RemappedChars,
    #[default]
    Bytes,
}

impl SymbolUnit {
    pub fn for_spec(spec: &PretokenizerSpec) -> Self {
        if spec.is_byte_level() {
            SymbolUnit::RemappedChars
        } else {
            SymbolUnit::Bytes
        }
    }

    pub fn len(self, pretoken: &[u8]) -> u64 {
        match self {
            SymbolUnit::RemappedChars => match std::str::from_utf8(pretoken) {
                Ok(s) => s.chars().count() as u64,
                Err(_) => pretoken.len() as u64,
            },
            SymbolUnit::Bytes => pretoken.len() as u64,
        }
    }
}

/// Multiset of pre-tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordHistogram {
    entries: FxHashMap<Vec<u8>, u64>,
    total_base_symbols: u64,
    unit: SymbolUnit,
}

impl WordHistogram {
    pub fn new(unit: SymbolUnit) -> Self {
        WordHistogram {
            entries: FxHashMap::default(),
            total_base_symbols: 0,
            unit,
        }
    }

    pub fn from_counts<W: AsRef<[u8]>>(
        unit: SymbolUnit,
        counts: impl IntoIterator<Item = (W, u64)>,
    ) -> Self {
        let mut h = WordHistogram::new(unit);
        for (w, c) in counts {
            h.add(w.as_ref(), c);
        }
        h
    }

    pub fn add(&mut self, word: &[u8], count: u64) {
        if count == 0 || word.is_empty() {
            return;
        }
        self.total_base_symbols += self.unit.len(word) * count;
        if let Some(c) = self.entries.get_mut(word) {
            *c += count;
        } else {
            self.entries.insert(word.to_vec(), count);
        }
    }

    pub fn unit(&self) -> SymbolUnit {
        self.unit
    }

    /// Number of unique pre-tokens.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &[u8]) -> u64 {
        self.entries.get(word).copied().unwrap_or(0)
    }

    /// Length of the corpus in base symbols (original bytes).
    pub fn total_base_symbols(&self) -> u64 {
        self.total_base_symbols
    }

    /// Number of pre-token occurrences.
    pub fn word_count(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn recount_base_symbols(&self) -> u64 {
        self.entries
            .iter()
            .map(|(w, &c)| self.unit.len(w) * c)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], u64)> {
        self.entries.iter().map(|(w, &c)| (w.as_slice(), c))
    }

    /// Entries sorted by pre-token bytes.
    pub fn sorted(&self) -> Vec<(&[u8], u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }

    pub fn merge_from(&mut self, other: &WordHistogram) {
        debug_assert_eq!(self.unit, other.unit, "histograms from different schemes");
        for (w, c) in other.iter() {
            self.add(w, c);
        }
    }
}

/// Pointwise sum of two histograms.
pub fn merge_histograms(mut a: WordHistogram, b: WordHistogram) -> WordHistogram {
    if a.len() < b.len() {
        return merge_histograms(b, a);
    }
    a.merge_from(&b);
    a
}

/// Histogram of one text. Each line is pre-tokenized as a fresh context,
/// with its line terminator kept.
pub fn histogram_of_text(text: &[u8], pretok: &Pretokenizer) -> WordHistogram {
    let mut h = WordHistogram::new(SymbolUnit::for_spec(pretok.spec()));
    for line in text.split_inclusive(|&b| b == b'\n') {
        for piece in pretok.split(line) {
            h.add(&piece, 1);
        }
    }
    h
}

pub fn build_histogram<T: AsRef<[u8]>>(
    texts: impl IntoIterator<Item = T>,
    spec: &PretokenizerSpec,
) -> Result<WordHistogram> {
    let pretok = Pretokenizer::new(spec.clone())?;
    let mut h = WordHistogram::new(SymbolUnit::for_spec(spec));
    for text in texts {
        h.merge_from(&histogram_of_text(text.as_ref(), &pretok));
    }
    Ok(h)
}

/// Files named by `paths`, directories walked recursively, sorted.
pub fn corpus_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for path in paths {
        let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
        if meta.is_dir() {
            for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
                let entry = entry.map_err(|e| {
                    let p = e.path().unwrap_or(path).to_path_buf();
                    Error::io(p, e.into())
                })?;
                if entry.file_type().is_file() {
                    files.push(entry.into_path());
                }
            }
        } else {
            files.push(path.clone());
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

/// Reads every file under `paths` as raw bytes and builds one histogram.
/// Files are counted in parallel and reduced with [`merge_histograms`].
pub fn histogram_from_paths(paths: &[PathBuf], spec: &PretokenizerSpec) -> Result<WordHistogram> {
    let pretok = Pretokenizer::new(spec.clone())?;
    let files = corpus_files(paths)?;
    let unit = SymbolUnit::for_spec(spec);
    files
        .par_iter()
        .map(|f| read_file(f).map(|bytes| histogram_of_text(&bytes, &pretok)))
        .try_reduce(
            || WordHistogram::new(unit),
            |a, b| Ok(merge_histograms(a, b)),
        )
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
