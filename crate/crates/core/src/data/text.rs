//! Vocabulary, caption and word-embedding files.

use std::collections::HashMap;
use std::path::Path;

use super::bank::{load_feature_bank, write_feature_bank, FeatureBank};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const UNKNOWN_ID: usize = 0;
pub const EMBED_DIM: usize = 300;

/// Lowercases, splits on whitespace and strips ASCII punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| !c.is_ascii_punctuation()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// `tokens[i]` is the token with id `i`; `tokens[0]` names the unknown token.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Invalid("vocabulary needs at least the unknown token".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { ids, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied().filter(|&i| i != UNKNOWN_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().enumerate().map(|(i, t)| format!("{t}\t{i}\n")).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse { path: path.to_path_buf(), line: n + 1, msg: msg.into() };
            let (tok, id) = line.split_once('\t').ok_or_else(|| err("expected `<token>\\t<id>`"))?;
            let id: usize = id.trim().parse().map_err(|_| err("id is not an integer"))?;
            pairs.push((id, tok.to_string(), n + 1));
        }
        let size = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(1);
        let mut tokens: Vec<Option<String>> = vec![None; size];
        for (id, tok, line) in pairs {
            if tokens[id].replace(tok).is_some() {
                return Err(Error::Parse { path: path.to_path_buf(), line, msg: format!("id {id} assigned twice") });
            }
        }
        if tokens[UNKNOWN_ID].is_none() {
            tokens[UNKNOWN_ID] = Some("<unk>".into());
        }
        let tokens = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                t.ok_or_else(|| Error::Parse { path: path.to_path_buf(), line: 0, msg: format!("id {i} missing") })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tokens(tokens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image_index: usize,
    pub token_ids: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LoadedCaptions {
    pub records: Vec<CaptionRecord>,
    /// Tokens that were mapped to the unknown id.
    pub unknown_tokens: usize,
}

/// Parses `<image_index>\t<tokens>` lines; `n_images` bounds the index.
pub fn parse_captions(text: &str, vocab: &Vocab, n_images: usize, path: &Path) -> Result<LoadedCaptions> {
    let mut records = Vec::new();
    let mut unknown_tokens = 0;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: n + 1, msg };
        let (idx, body) = line.split_once('\t').ok_or_else(|| err("expected `<image_index>\\t<tokens>`".into()))?;
        let image_index: usize = idx.trim().parse().map_err(|_| err(format!("bad image index `{idx}`")))?;
        if image_index >= n_images {
            return Err(err(format!("image index {image_index} out of range (n_images = {n_images})")));
        }
        let token_ids: Vec<usize> = tokenize(body)
            .iter()
            .map(|t| {
                vocab.id(t).unwrap_or_else(|| {
                    unknown_tokens += 1;
                    UNKNOWN_ID
                })
            })
            .collect();
        if token_ids.is_empty() {
            return Err(err("empty caption".into()));
        }
        records.push(CaptionRecord { image_index, token_ids });
    }
    Ok(LoadedCaptions { records, unknown_tokens })
}

pub fn load_captions(path: &Path, vocab: &Vocab, n_images: usize) -> Result<LoadedCaptions> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_captions(&text, vocab, n_images, path)
}

pub fn captions_to_text(records: &[CaptionRecord], vocab: &Vocab) -> String {
    let mut out = String::new();
    for r in records {
        let words: Vec<&str> = r.token_ids.iter().map(|&i| vocab.token(i).unwrap_or("<unk>")).collect();
        out.push_str(&format!("{}\t{}\n", r.image_index, words.join(" ")));
    }
    out
}

/// Frozen word vectors, one row per vocabulary id; row 0 is the unknown token.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    vocab_size: usize,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(vocab_size: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if vocab_size == 0 || values.len() != vocab_size * dim {
            return Err(Error::dim("embedding_table", format!("{vocab_size}x{dim} with {} values", values.len())));
        }
        if let Some(offset) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { offset });
        }
        Ok(Self { vocab_size, dim, values })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.values[id * self.dim..(id + 1) * self.dim]
    }

    /// Rows of `ids` stacked into an `N_c x dim` tensor.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::Invalid("cannot embed an empty token list".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id >= self.vocab_size {
                return Err(Error::Invalid(format!("token id {id} out of range (vocab size {})", self.vocab_size)));
            }
            out.extend_from_slice(self.row(id));
        }
        Tensor::new(&[ids.len(), self.dim], out)
    }

    pub fn to_bank(&self) -> Result<FeatureBank> {
        FeatureBank::from_f64(self.vocab_size, 1, self.dim, &self.values)
    }

    pub fn from_bank(bank: &FeatureBank) -> Result<Self> {
        if bank.rows() != 1 {
            return Err(Error::dim("embedding_table", format!("expected 1 row per entry, got {}", bank.rows())));
        }
        Self::new(bank.n_samples(), bank.cols(), bank.values().iter().map(|v| f64::from(*v)).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_feature_bank(path, &self.to_bank()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bank(&load_feature_bank(path)?)
    }
}
