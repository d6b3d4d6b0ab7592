use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const MASK: usize = 3;
pub const UNK: usize = 4;
pub const NUM_RESERVED: usize = 5;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<s>", "</s>", "<mask>", "<unk>"];

/// Bidirectional token/index map. Indices `0..5` are always the reserved
/// symbols in the order pad, bos, eos, mask, unk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Reserved symbols only.
    pub fn reserved_only() -> Self {
        Self::from_tokens(RESERVED_TOKENS.iter().map(|s| s.to_string()).collect())
            .expect("reserved tokens are distinct")
    }

    /// Counts tokens, keeps those with `count >= min_count`, and orders them
    /// by descending count with ties broken by first occurrence.
    pub fn build<S: AsRef<str>>(lines: &[Vec<S>], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::Invalid("min_count must be at least 1".into()));
        }
        if lines.iter().all(|l| l.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for line in lines {
            for tok in line {
                let tok = tok.as_ref();
                let entry = counts.entry(tok).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        let mut kept: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|(tok, (c, _))| *c >= min_count && !RESERVED_TOKENS.contains(tok))
            .map(|(tok, (c, first))| (tok, c, first))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let tokens = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Vocabulary `<pad> <s> </s> <mask> <unk> t5 t6 ...` of the given size,
    /// used by the synthetic tasks.
    pub fn synthetic(size: usize) -> Result<Self> {
        if size < NUM_RESERVED {
            return Err(Error::Invalid(format!("vocabulary size {size} < {NUM_RESERVED}")));
        }
        let tokens = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain((NUM_RESERVED..size).map(|i| format!("t{i}")))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED_TOKENS[UNK])
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// One token per line; the line number is the index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < NUM_RESERVED
            || tokens[..NUM_RESERVED]
                .iter()
                .zip(RESERVED_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Invalid(format!(
                "{}: reserved symbols must occupy the first {NUM_RESERVED} lines",
                path.display()
            )));
        }
        Self::from_tokens(tokens)
    }
}
