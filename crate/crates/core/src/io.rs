//! Tokenizer files: pretrained `tokenizer.json` input, the `.adaptbpe.json`
//! format, token-id masks and plain-BPE compatibility exports.

use std::fs;
use std::path::Path;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::adaptation::AdaptMode;
use crate::baselines::Method;
use crate::engine::Encoder;
use crate::error::{Error, Result};
use crate::merge_model::{MergeKind, MergeSpec, MergeTable};
use crate::pretokenize::{
    byte_level_alphabet, PretokenizerSpec, WordHistogram, GPT2_SPLIT_PATTERN,
};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of a file's bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value)?).map_err(|e| Error::io(path, e))
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn token_string(bytes: &[u8]) -> Result<String> {
    String::from_utf8(bytes.to_vec())
        .map_err(|_| Error::UnknownToken(String::from_utf8_lossy(bytes).into_owned()))
}

/// Token strings of the source vocabulary and their ids.
#[derive(Debug, Clone, Default)]
pub struct VocabMap {
    ids: FxHashMap<String, u32>,
    special: Vec<u32>,
    size: u32,
}

impl VocabMap {
    pub fn get(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Ids of added tokens flagged as special, sorted.
    pub fn special_ids(&self) -> &[u32] {
        &self.special
    }

    /// One past the largest id.
    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub table: MergeTable,
    pub pretokenizer: PretokenizerSpec,
    pub vocab: VocabMap,
    pub digest: String,
}

pub fn load_pretrained(path: &Path) -> Result<Pretrained> {
    let bytes = read(path)?;
    let value: Value = serde_json::from_slice(&bytes)?;
    parse_pretrained(&value, digest_bytes(&bytes), path)
}

fn parse_pretrained(root: &Value, digest: String, path: &Path) -> Result<Pretrained> {
    let model = root
        .get("model")
        .ok_or_else(|| Error::format(path, "no \"model\" object"))?;
    if let Some(t) = model.get("type").and_then(Value::as_str) {
        if t != "BPE" {
            return Err(Error::UnsupportedModelType(t.to_string()));
        }
    }
    let vocab_obj = model
        .get("vocab")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::format(path, "model.vocab is not an object"))?;
    let mut vocab = VocabMap::default();
    for (token, id) in vocab_obj {
        let id = id
            .as_u64()
            .and_then(|i| u32::try_from(i).ok())
            .ok_or_else(|| {
                Error::format(path, format!("vocab id of {token:?} is not an integer"))
            })?;
        vocab.size = vocab.size.max(id + 1);
        vocab.ids.insert(token.clone(), id);
    }
    let mut added = FxHashSet::default();
    for t in root
        .get("added_tokens")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
    {
        let (Some(content), Some(id)) = (
            t.get("content").and_then(Value::as_str),
            t.get("id").and_then(Value::as_u64),
        ) else {
            continue;
        };
        let id = id as u32;
        added.insert(content.to_string());
        vocab.size = vocab.size.max(id + 1);
        vocab.ids.entry(content.to_string()).or_insert(id);
        if t.get("special").and_then(Value::as_bool).unwrap_or(false) {
            vocab.special.push(id);
        }
    }
    vocab.special.sort_unstable();
    vocab.special.dedup();

    let raw = model
        .get("merges")
        .and_then(Value::as_array)
        .map(Vec::as_slice)
        .unwrap_or_default();
    let mut pairs = Vec::with_capacity(raw.len());
    for (line, m) in raw.iter().enumerate() {
        pairs.push(parse_merge(line, m)?);
    }
    let mut results = FxHashSet::default();
    for (l, r) in &pairs {
        let joined = format!("{l}{r}");
        if !vocab.ids.contains_key(&joined) {
            return Err(Error::VocabMergeMismatch(joined));
        }
        results.insert(joined);
    }

    let pretokenizer = parse_pretokenizer(root.get("pre_tokenizer"));
    let byte_alphabet = byte_level_alphabet();
    let alphabet = if pretokenizer.is_byte_level()
        && byte_alphabet.iter().all(|b| {
            vocab
                .ids
                .contains_key(std::str::from_utf8(b).expect("remapped bytes are UTF-8"))
        }) {
        byte_alphabet
    } else {
        let mut base: Vec<(&String, u32)> = vocab
            .ids
            .iter()
            .filter(|(t, _)| !results.contains(*t) && !added.contains(*t))
            .map(|(t, &id)| (t, id))
            .collect();
        base.sort_by_key(|&(t, id)| (id, t.clone()));
        base.into_iter()
            .map(|(t, _)| t.as_bytes().to_vec())
            .collect()
    };
    let table = MergeTable::from_specs(
        alphabet,
        pairs.into_iter().enumerate().map(|(i, (l, r))| MergeSpec {
            left: l.into_bytes(),
            right: r.into_bytes(),
            origin_rank: i as u32,
            kind: MergeKind::Actual,
        }),
    )?;
    Ok(Pretrained {
        table,
        pretokenizer,
        vocab,
        digest,
    })
}

fn parse_merge(line: usize, m: &Value) -> Result<(String, String)> {
    let malformed = |reason: &str| Error::MalformedMerge {
        line,
        reason: reason.to_string(),
    };
    match m {
        Value::String(s) => {
            let mut parts = s.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    Ok((l.to_string(), r.to_string()))
                }
                _ => Err(malformed("expected \"left right\"")),
            }
        }
        Value::Array(a) => match a.as_slice() {
            [Value::String(l), Value::String(r)] if !l.is_empty() && !r.is_empty() => {
                Ok((l.clone(), r.clone()))
            }
            _ => Err(malformed("expected a two-element array of strings")),
        },
        _ => Err(malformed("expected a string or an array")),
    }
}

fn parse_pretokenizer(v: Option<&Value>) -> PretokenizerSpec {
    let ty = |v: &Value| v.get("type").and_then(Value::as_str).map(str::to_owned);
    let prefix = |v: &Value| {
        v.get("add_prefix_space")
            .and_then(Value::as_bool)
            .unwrap_or(false)
    };
    let use_regex = |v: &Value| v.get("use_regex").and_then(Value::as_bool).unwrap_or(true);
    match v {
        Some(v) if ty(v).as_deref() == Some("ByteLevel") => PretokenizerSpec::ByteLevel {
            pattern: use_regex(v).then(|| GPT2_SPLIT_PATTERN.to_string()),
            add_prefix_space: prefix(v),
        },
        Some(v) if ty(v).as_deref() == Some("Whitespace") => PretokenizerSpec::Whitespace,
        Some(v) if ty(v).as_deref() == Some("Sequence") => {
            let parts = v.get("pretokenizers").and_then(Value::as_array);
            if let Some([split, bl]) = parts.map(Vec::as_slice) {
                let pattern = split
                    .get("pattern")
                    .and_then(|p| p.get("Regex"))
                    .and_then(Value::as_str);
                let isolated = split.get("behavior").and_then(Value::as_str) == Some("Isolated")
                    && !split
                        .get("invert")
                        .and_then(Value::as_bool)
                        .unwrap_or(false);
                if ty(split).as_deref() == Some("Split")
                    && isolated
                    && ty(bl).as_deref() == Some("ByteLevel")
                    && !use_regex(bl)
                {
                    if let Some(p) = pattern {
                        return PretokenizerSpec::ByteLevel {
                            pattern: Some(p.to_string()),
                            add_prefix_space: prefix(bl),
                        };
                    }
                }
            }
            log::warn!("unrecognized pre-tokenizer sequence; using the GPT-2 byte-level split");
            PretokenizerSpec::gpt2()
        }
        Some(Value::Null) | None => {
            log::warn!("no pre-tokenizer in the tokenizer file; using the GPT-2 byte-level split");
            PretokenizerSpec::gpt2()
        }
        Some(other) => {
            log::warn!(
                "unsupported pre-tokenizer {:?}; using the GPT-2 byte-level split",
                ty(other).unwrap_or_default()
            );
            PretokenizerSpec::gpt2()
        }
    }
}

fn pretokenizer_json(spec: &PretokenizerSpec) -> Value {
    match spec {
        PretokenizerSpec::ByteLevel {
            pattern,
            add_prefix_space,
        } => match pattern.as_deref() {
            Some(GPT2_SPLIT_PATTERN) => json!({
                "type": "ByteLevel",
                "add_prefix_space": add_prefix_space,
                "trim_offsets": true,
                "use_regex": true
            }),
            Some(p) => json!({
                "type": "Sequence",
                "pretokenizers": [
                    {"type": "Split", "pattern": {"Regex": p}, "behavior": "Isolated", "invert": false},
                    {"type": "ByteLevel", "add_prefix_space": add_prefix_space, "trim_offsets": true, "use_regex": false}
                ]
            }),
            None => json!({
                "type": "ByteLevel",
                "add_prefix_space": add_prefix_space,
                "trim_offsets": true,
                "use_regex": false
            }),
        },
        PretokenizerSpec::Whitespace => json!({"type": "Whitespace"}),
        PretokenizerSpec::Identity => Value::Null,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AlphabetDescriptor {
    /// The 256 remapped bytes, in byte order.
    ByteLevel,
    Symbols {
        symbols: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub left: String,
    pub right: String,
    pub result: String,
    pub kind: MergeKind,
    pub origin_rank: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_digest: String,
    pub method: Method,
    pub budget: usize,
    /// `null` for baselines.
    pub margin: Option<u64>,
    pub mode: Option<AdaptMode>,
    pub swaps: usize,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptedTokenizerFile {
    pub version: u32,
    pub alphabet: AlphabetDescriptor,
    pub pretokenizer: PretokenizerSpec,
    /// The active list in application order.
    pub merges: Vec<MergeRecord>,
    pub provenance: Provenance,
}

impl AdaptedTokenizerFile {
    pub fn new(
        table: &MergeTable,
        pretokenizer: &PretokenizerSpec,
        provenance: Provenance,
    ) -> Result<Self> {
        let alphabet: Vec<Vec<u8>> = table.alphabet().map(<[u8]>::to_vec).collect();
        let alphabet = if alphabet == byte_level_alphabet() {
            AlphabetDescriptor::ByteLevel
        } else {
            AlphabetDescriptor::Symbols {
                symbols: alphabet
                    .iter()
                    .map(|s| token_string(s))
                    .collect::<Result<_>>()?,
            }
        };
        let merges = table
            .rules()
            .iter()
            .map(|r| {
                Ok(MergeRecord {
                    left: token_string(table.symbol_bytes(r.left))?,
                    right: token_string(table.symbol_bytes(r.right))?,
                    result: token_string(table.symbol_bytes(r.result))?,
                    kind: r.kind,
                    origin_rank: r.origin_rank,
                })
            })
            .collect::<Result<_>>()?;
        Ok(AdaptedTokenizerFile {
            version: FORMAT_VERSION,
            alphabet,
            pretokenizer: pretokenizer.clone(),
            merges,
            provenance,
        })
    }

    pub fn to_table(&self) -> Result<MergeTable> {
        let alphabet = match &self.alphabet {
            AlphabetDescriptor::ByteLevel => byte_level_alphabet(),
            AlphabetDescriptor::Symbols { symbols } => {
                symbols.iter().map(|s| s.as_bytes().to_vec()).collect()
            }
        };
        for (line, m) in self.merges.iter().enumerate() {
            if m.result != format!("{}{}", m.left, m.right) {
                return Err(Error::MalformedMerge {
                    line,
                    reason: format!("result {:?} is not left ++ right", m.result),
                });
            }
        }
        MergeTable::from_specs(
            alphabet,
            self.merges.iter().map(|m| MergeSpec {
                left: m.left.as_bytes().to_vec(),
                right: m.right.as_bytes().to_vec(),
                origin_rank: m.origin_rank,
                kind: m.kind,
            }),
        )
    }
}

pub fn save_adapted(path: &Path, file: &AdaptedTokenizerFile) -> Result<()> {
    write_json(path, file)
}

pub fn load_adapted(path: &Path) -> Result<AdaptedTokenizerFile> {
    let bytes = read(path)?;
    let file: AdaptedTokenizerFile = serde_json::from_slice(&bytes)?;
    if file.version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {}", file.version),
        ));
    }
    Ok(file)
}

/// Either kind of tokenizer file, resolved to a table.
#[derive(Debug, Clone)]
pub struct LoadedTokenizer {
    pub table: MergeTable,
    pub pretokenizer: PretokenizerSpec,
    /// Present for pretrained files.
    pub vocab: Option<VocabMap>,
    /// Present for adapted files.
    pub adapted: Option<AdaptedTokenizerFile>,
    pub digest: String,
}

impl LoadedTokenizer {
    /// Digest of the pretrained file this table comes from.
    pub fn source_digest(&self) -> &str {
        match &self.adapted {
            Some(f) => &f.provenance.source_digest,
            None => &self.digest,
        }
    }
}

/// Loads a pretrained `tokenizer.json` or an `.adaptbpe.json` file.
pub fn load_tokenizer(path: &Path) -> Result<LoadedTokenizer> {
    let bytes = read(path)?;
    let value: Value = serde_json::from_slice(&bytes)?;
    let digest = digest_bytes(&bytes);
    if value.get("provenance").is_some() && value.get("alphabet").is_some() {
        let file: AdaptedTokenizerFile = serde_json::from_value(value)?;
        if file.version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported version {}", file.version),
            ));
        }
        Ok(LoadedTokenizer {
            table: file.to_table()?,
            pretokenizer: file.pretokenizer.clone(),
            vocab: None,
            adapted: Some(file),
            digest,
        })
    } else {
        let p = parse_pretrained(&value, digest.clone(), path)?;
        Ok(LoadedTokenizer {
            table: p.table,
            pretokenizer: p.pretokenizer,
            vocab: Some(p.vocab),
            adapted: None,
            digest,
        })
    }
}

pub fn check_digest(expected: &str, actual: &str) -> Result<()> {
    if expected != actual {
        return Err(Error::DigestMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        });
    }
    Ok(())
}

/// Original-vocabulary ids of the tokens `table` can emit, plus the source's
/// special tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMaskFile {
    pub source_digest: String,
    pub allowed_ids: Vec<u32>,
    pub count: usize,
}

pub fn build_mask(
    table: &MergeTable,
    vocab: &VocabMap,
    source_digest: &str,
) -> Result<TokenMaskFile> {
    let lookup = |bytes: &[u8]| -> Result<u32> {
        let s = token_string(bytes)?;
        vocab.get(&s).ok_or(Error::UnknownToken(s))
    };
    let mut ids = Vec::with_capacity(table.alphabet_len() + table.actual_count());
    for base in table.alphabet() {
        ids.push(lookup(base)?);
    }
    for r in table.rules().iter().filter(|r| r.kind == MergeKind::Actual) {
        ids.push(lookup(table.symbol_bytes(r.result))?);
    }
    ids.extend_from_slice(vocab.special_ids());
    ids.sort_unstable();
    ids.dedup();
    Ok(TokenMaskFile {
        source_digest: source_digest.to_string(),
        count: ids.len(),
        allowed_ids: ids,
    })
}

pub fn load_mask(path: &Path) -> Result<TokenMaskFile> {
    let mask: TokenMaskFile = serde_json::from_slice(&read(path)?)?;
    if mask.count != mask.allowed_ids.len() || mask.allowed_ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::format(
            path,
            "allowed_ids must be sorted, unique and match count",
        ));
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedMerge {
    pub left: String,
    pub right: String,
    pub kind: MergeKind,
    pub origin_rank: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DivergentWord {
    pub word: String,
    pub count: u64,
    pub canonical: Vec<String>,
    pub plain: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LossReport {
    /// True only if nothing was dropped and no word of the corpus diverges.
    pub lossless: bool,
    pub dropped_merges: Vec<DroppedMerge>,
    /// Occurrences (weighted by count) of divergent words.
    pub divergent_occurrences: u64,
    /// Sorted by word.
    pub divergent_words: Vec<DivergentWord>,
}

#[derive(Debug, Clone)]
pub struct CompatExport {
    pub tokenizer: Value,
    pub report: LossReport,
}

/// Plain ordered-merges export: the actual merges whose parents remain
/// reachable without virtual merges. `hist` is checked word by word for
/// tokenizations that change.
pub fn export_compat(
    table: &MergeTable,
    pretokenizer: &PretokenizerSpec,
    hist: &WordHistogram,
) -> Result<CompatExport> {
    let mut available: FxHashSet<u32> = (0..table.alphabet_len() as u32).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in table.rules() {
        let record = || -> Result<DroppedMerge> {
            Ok(DroppedMerge {
                left: token_string(table.symbol_bytes(r.left))?,
                right: token_string(table.symbol_bytes(r.right))?,
                kind: r.kind,
                origin_rank: r.origin_rank,
            })
        };
        if r.kind == MergeKind::Actual
            && available.contains(&r.left)
            && available.contains(&r.right)
        {
            available.insert(r.result);
            kept.push(*r);
        } else {
            dropped.push(record()?);
        }
    }
    let alphabet: Vec<Vec<u8>> = table.alphabet().map(<[u8]>::to_vec).collect();
    let plain = MergeTable::from_specs(
        alphabet.clone(),
        kept.iter().map(|r| MergeSpec {
            left: table.symbol_bytes(r.left).to_vec(),
            right: table.symbol_bytes(r.right).to_vec(),
            origin_rank: r.origin_rank,
            kind: MergeKind::Actual,
        }),
    )?;

    let strings = |t: &MergeTable, tokens: &[u32]| -> Vec<String> {
        tokens
            .iter()
            .map(|&id| String::from_utf8_lossy(t.symbol_bytes(id)).into_owned())
            .collect()
    };
    let canonical = Encoder::new(table).tokenize_corpus(hist)?;
    let approx = Encoder::new(&plain).tokenize_corpus(hist)?;
    let mut divergent = Vec::new();
    let mut divergent_occurrences = 0;
    for (c, p) in canonical.words().iter().zip(approx.words()) {
        let (cs, ps) = (strings(table, &c.tokens), strings(&plain, &p.tokens));
        if cs != ps {
            divergent_occurrences += c.count;
            divergent.push(DivergentWord {
                word: String::from_utf8_lossy(&c.surface).into_owned(),
                count: c.count,
                canonical: cs,
                plain: ps,
            });
        }
    }
    divergent.sort_by(|a, b| a.word.cmp(&b.word));

    let mut vocab = serde_json::Map::new();
    for (id, sym) in plain.symbols().iter().enumerate() {
        vocab.insert(token_string(&sym.bytes)?, json!(id));
    }
    let merges: Vec<Value> = plain
        .rules()
        .iter()
        .map(|r| {
            Ok(json!([
                token_string(plain.symbol_bytes(r.left))?,
                token_string(plain.symbol_bytes(r.right))?
            ]))
        })
        .collect::<Result<_>>()?;
    let decoder = if pretokenizer.is_byte_level() {
        json!({"type": "ByteLevel", "add_prefix_space": true, "trim_offsets": true, "use_regex": true})
    } else {
        Value::Null
    };
    let tokenizer = json!({
        "version": "1.0",
        "truncation": null,
        "padding": null,
        "added_tokens": [],
        "normalizer": null,
        "pre_tokenizer": pretokenizer_json(pretokenizer),
        "post_processor": null,
        "decoder": decoder,
        "model": {
            "type": "BPE",
            "dropout": null,
            "unk_token": null,
            "continuing_subword_prefix": null,
            "end_of_word_suffix": null,
            "fuse_unk": false,
            "byte_fallback": false,
            "ignore_merges": false,
            "vocab": vocab,
            "merges": merges
        }
    });
    Ok(CompatExport {
        tokenizer,
        report: LossReport {
            lossless: dropped.is_empty() && divergent.is_empty(),
            dropped_merges: dropped,
            divergent_occurrences,
            divergent_words: divergent,
        },
    })
}
