//! The ATNB attention-tensor format and the corpus manifest.
//!
//! An ATNB file is little-endian:
//!
//! ```text
//! magic   "ATNB"                      4 bytes
//! version u16 = 1
//! L, H, K u32 each
//! K token entries: len u16, UTF-8 bytes, flags u8 (bit0 special, bit1 punct)
//! L*H*K*K f32, row-major [layer][head][query][key]
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ATNB";
pub const VERSION: u16 = 1;
pub const MAX_TOKENS: usize = 1024;
/// Allowed deviation of an attention row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;

const FLAG_SPECIAL: u8 = 0b01;
const FLAG_PUNCT: u8 = 0b10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub text: String,
    pub is_special: bool,
    pub is_punct: bool,
}

impl TokenMeta {
    pub fn word(text: impl Into<String>) -> Self {
        TokenMeta {
            text: text.into(),
            is_special: false,
            is_punct: false,
        }
    }

    pub fn special(text: impl Into<String>) -> Self {
        TokenMeta {
            is_special: true,
            ..TokenMeta::word(text)
        }
    }

    pub fn punct(text: impl Into<String>) -> Self {
        TokenMeta {
            is_punct: true,
            ..TokenMeta::word(text)
        }
    }

    fn flags(&self) -> u8 {
        let mut f = 0;
        if self.is_special {
            f |= FLAG_SPECIAL;
        }
        if self.is_punct {
            f |= FLAG_PUNCT;
        }
        f
    }
}

/// Borrowed K×K attention matrix of one head.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMap<'a> {
    k: usize,
    data: &'a [f32],
}

impl<'a> AttentionMap<'a> {
    /// Panics if `data.len() != k * k`.
    pub fn new(k: usize, data: &'a [f32]) -> Self {
        assert_eq!(data.len(), k * k, "attention map must be {k}x{k}");
        AttentionMap { k, data }
    }

    pub fn size(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, query: usize, key: usize) -> f64 {
        f64::from(self.data[query * self.k + key])
    }

    pub fn row(&self, query: usize) -> &'a [f32] {
        &self.data[query * self.k..(query + 1) * self.k]
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.data
    }
}

/// Per-sentence attention weights, `[layer][head][query][key]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layers: usize,
    heads: usize,
    tokens: Vec<TokenMeta>,
    weights: Vec<f32>,
}

impl AttentionTensor {
    /// Builds a tensor and checks every invariant of the format.
    pub fn new(
        layers: usize,
        heads: usize,
        tokens: Vec<TokenMeta>,
        weights: Vec<f32>,
    ) -> Result<Self> {
        let t = AttentionTensor {
            layers,
            heads,
            tokens,
            weights,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[TokenMeta] {
        &self.tokens
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn head(&self, layer: usize, head: usize) -> AttentionMap<'_> {
        assert!(layer < self.layers && head < self.heads);
        let k = self.num_tokens();
        let start = (layer * self.heads + head) * k * k;
        AttentionMap::new(k, &self.weights[start..start + k * k])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.tokens.len();
        if self.layers == 0 || self.heads == 0 || k < 2 {
            return Err(Error::InvalidDimensions(format!(
                "L={}, H={}, K={} (need L>=1, H>=1, K>=2)",
                self.layers, self.heads, k
            )));
        }
        if k > MAX_TOKENS {
            return Err(Error::DimensionOverflow(k));
        }
        if self.layers > u32::MAX as usize || self.heads > u32::MAX as usize {
            return Err(Error::InvalidDimensions("L or H exceeds u32".into()));
        }
        let expected = self.layers * self.heads * k * k;
        if self.weights.len() != expected {
            return Err(Error::InvalidDimensions(format!(
                "{} weights for shape {}x{}x{k}x{k}",
                self.weights.len(),
                self.layers,
                self.heads
            )));
        }
        for tok in &self.tokens {
            if tok.text.len() > u16::MAX as usize {
                return Err(Error::InvalidToken(format!(
                    "token of {} bytes exceeds u16 length",
                    tok.text.len()
                )));
            }
        }
        for (r, row) in self.weights.chunks_exact(k).enumerate() {
            let (layer, head, query) = (r / (self.heads * k), (r / k) % self.heads, r % k);
            let mut sum = 0.0f64;
            for (key, &w) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::WeightOutOfRange {
                        layer,
                        head,
                        query,
                        key,
                        value: w,
                    });
                }
                sum += f64::from(w);
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::RowNotStochastic {
                    layer,
                    head,
                    query,
                    sum,
                });
            }
        }
        Ok(())
    }

    /// Serializes to ATNB bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let k = self.num_tokens();
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers as u32).to_le_bytes());
        out.extend_from_slice(&(self.heads as u32).to_le_bytes());
        out.extend_from_slice(&(k as u32).to_le_bytes());
        for tok in &self.tokens {
            out.extend_from_slice(&(tok.text.len() as u16).to_le_bytes());
            out.extend_from_slice(tok.text.as_bytes());
            out.push(tok.flags());
        }
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses and validates ATNB bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::MagicMismatch { found: magic });
        }
        let version = cur.u16("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let layers = cur.u32("layer count")? as usize;
        let heads = cur.u32("head count")? as usize;
        let k = cur.u32("token count")? as usize;
        if k > MAX_TOKENS {
            return Err(Error::DimensionOverflow(k));
        }
        let mut tokens = Vec::with_capacity(k);
        for i in 0..k {
            let len = cur.u16("token length")? as usize;
            let text = std::str::from_utf8(cur.take(len, "token text")?)
                .map_err(|e| Error::InvalidToken(format!("token {i}: {e}")))?
                .to_owned();
            let flags = cur.take(1, "token flags")?[0];
            tokens.push(TokenMeta {
                text,
                is_special: flags & FLAG_SPECIAL != 0,
                is_punct: flags & FLAG_PUNCT != 0,
            });
        }
        let expected = (layers as u64)
            .checked_mul(heads as u64)
            .and_then(|v| v.checked_mul((k * k * 4) as u64))
            .ok_or_else(|| Error::InvalidDimensions("payload size overflows".into()))?;
        let found = (bytes.len() - cur.pos) as u64;
        if found < expected {
            return Err(Error::TruncatedFile(format!(
                "payload has {found} of {expected} bytes"
            )));
        }
        if found != expected {
            return Err(Error::PayloadLength { expected, found });
        }
        let weights = bytes[cur.pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        AttentionTensor::new(layers, heads, tokens, weights)
    }

    /// Size in bytes of the ATNB encoding.
    pub fn encoded_len(&self) -> usize {
        let header = 4 + 2 + 3 * 4;
        let toks: usize = self.tokens.iter().map(|t| 2 + t.text.len() + 1).sum();
        header + toks + self.weights.len() * 4
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedFile(format!("missing {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AttentionTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    AttentionTensor::from_bytes(&bytes)
}

pub fn write_tensor(tensor: &AttentionTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = tensor.to_bytes()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Acceptable,
    Morphology,
    Syntax,
    Semantics,
    Hallucination,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Acceptable,
        Category::Morphology,
        Category::Syntax,
        Category::Semantics,
        Category::Hallucination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Acceptable => "acceptable",
            Category::Morphology => "morphology",
            Category::Syntax => "syntax",
            Category::Semantics => "semantics",
            Category::Hallucination => "hallucination",
        }
    }

    /// The label a sentence of this category carries.
    pub fn label(self) -> u8 {
        match self {
            Category::Acceptable => 1,
            _ => 0,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownCategory(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Idd,
    Oodd,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Idd, Split::Oodd, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Idd => "idd",
            Split::Oodd => "oodd",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown split {s:?}")))
    }
}

/// One sentence of the corpus. `tensor_path` is resolved against the
/// manifest's directory on load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub id: String,
    pub sentence: String,
    /// 1 = acceptable, 0 = unacceptable.
    pub label: u8,
    pub category: Option<Category>,
    pub split: Split,
    pub tensor_path: PathBuf,
}

impl CorpusRecord {
    pub fn load_tensor(&self) -> Result<AttentionTensor> {
        read_tensor(&self.tensor_path).map_err(|e| Error::Record {
            id: self.id.clone(),
            source: Box::new(e),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    sentence: String,
    label: u8,
    category: Option<String>,
    split: String,
    tensor_path: PathBuf,
}

/// Loads a manifest. Records come back sorted by (split, id), so the result
/// does not depend on the order of entries in the file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

pub fn parse_manifest(json: &str, base_dir: &Path) -> Result<Vec<CorpusRecord>> {
    let raw: Vec<RawRecord> = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.id.clone()) {
            return Err(Error::DuplicateId(r.id));
        }
        if r.label > 1 {
            return Err(Error::Parse(format!(
                "record {:?}: label must be 0 or 1, got {}",
                r.id, r.label
            )));
        }
        let category = r.category.as_deref().map(str::parse::<Category>).transpose()?;
        if let Some(c) = category {
            if c.label() != r.label {
                return Err(Error::LabelCategoryConflict {
                    id: r.id,
                    label: r.label,
                    category: c.to_string(),
                });
            }
        }
        let split = r.split.parse()?;
        let tensor_path = if r.tensor_path.is_absolute() {
            r.tensor_path
        } else {
            base_dir.join(r.tensor_path)
        };
        if !tensor_path.is_file() {
            return Err(Error::DanglingTensorPath {
                id: r.id,
                path: tensor_path,
            });
        }
        records.push(CorpusRecord {
            id: r.id,
            sentence: r.sentence,
            label: r.label,
            category,
            split,
            tensor_path,
        });
    }
    records.sort_by(|a, b| (a.split, &a.id).cmp(&(b.split, &b.id)));
    Ok(records)
}

pub fn write_manifest(records: &[CorpusRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<RawRecord> = records
        .iter()
        .map(|r| RawRecord {
            id: r.id.clone(),
            sentence: r.sentence.clone(),
            label: r.label,
            category: r.category.map(|c| c.to_string()),
            split: r.split.to_string(),
            tensor_path: r.tensor_path.clone(),
        })
        .collect();
    let json = serde_json::to_string_pretty(&raw).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn records_in_split(records: &[CorpusRecord], split: Split) -> Vec<CorpusRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(n: usize) -> Vec<TokenMeta> {
        (0..n).map(|i| TokenMeta::word(format!("t{i}"))).collect()
    }

    #[test]
    fn two_token_round_trip() {
        let t = AttentionTensor::new(1, 1, toks(2), vec![0.6, 0.4, 0.5, 0.5]).unwrap();
        let back = AttentionTensor::from_bytes(&t.to_bytes().unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.head(0, 0).get(0, 0), f64::from(0.6f32));
    }

    #[test]
    fn rejects_non_stochastic_row() {
        // bypass the constructor to produce the bytes of a bad file
        let bad = AttentionTensor {
            layers: 1,
            heads: 1,
            tokens: toks(2),
            weights: vec![0.9, 0.2, 0.5, 0.5],
        };
        let mut bytes = bad.clone();
        bytes.weights = vec![0.5, 0.5, 0.5, 0.5];
        let mut encoded = bytes.to_bytes().unwrap();
        let n = encoded.len();
        encoded[n - 16..n - 12].copy_from_slice(&0.9f32.to_le_bytes());
        encoded[n - 12..n - 8].copy_from_slice(&0.2f32.to_le_bytes());
        assert!(matches!(
            AttentionTensor::from_bytes(&encoded),
            Err(Error::RowNotStochastic { query: 0, .. })
        ));
        assert!(matches!(bad.validate(), Err(Error::RowNotStochastic { .. })));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = AttentionTensor::new(1, 1, toks(2), vec![0.6, 0.4, 0.5, 0.5]).unwrap();
        let mut bytes = t.to_bytes().unwrap();
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(
            AttentionTensor::from_bytes(short),
            Err(Error::TruncatedFile(_))
        ));
        let mut long = bytes.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            AttentionTensor::from_bytes(&long),
            Err(Error::PayloadLength { .. })
        ));
        assert!(matches!(
            AttentionTensor::from_bytes(&bytes[..7]),
            Err(Error::TruncatedFile(_))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            AttentionTensor::from_bytes(&bytes),
            Err(Error::MagicMismatch { .. })
        ));
    }

    #[test]
    fn rejects_oversized_token_count() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        for v in [1u32, 1, 1025] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            AttentionTensor::from_bytes(&bytes),
            Err(Error::DimensionOverflow(1025))
        ));
    }

    #[test]
    fn empty_tensor_is_rejected() {
        assert!(matches!(
            AttentionTensor::new(1, 1, vec![], vec![]),
            Err(Error::InvalidDimensions(_))
        ));
    }

    #[test]
    fn token_flags_survive() {
        let tokens = vec![
            TokenMeta::special("[CLS]"),
            TokenMeta::punct("."),
            TokenMeta {
                text: "ü".into(),
                is_special: true,
                is_punct: true,
            },
        ];
        let w = vec![1.0 / 3.0; 9];
        let t = AttentionTensor::new(1, 1, tokens.clone(), w).unwrap();
        let back = AttentionTensor::from_bytes(&t.to_bytes().unwrap()).unwrap();
        assert_eq!(back.tokens(), &tokens[..]);
    }

    #[test]
    fn category_parsing() {
        assert_eq!("Syntax".parse::<Category>().unwrap(), Category::Syntax);
        assert!(matches!(
            "grammar".parse::<Category>(),
            Err(Error::UnknownCategory(_))
        ));
    }
}
