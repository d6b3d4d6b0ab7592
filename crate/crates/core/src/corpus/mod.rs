//! Vocabularies, parallel corpora, synthetic tasks and token-budget batching.
//!
//! Targets are stored without bos and always end in a single eos; the target
//! length used everywhere downstream counts that eos.

mod batch;
mod synthetic;
mod vocab;

use std::fs;
use std::path::{Path, PathBuf};

pub use batch::{make_batches, Batch};
pub use synthetic::{generate_synthetic, SyntheticSpec, Task, SUBSTITUTION_SHIFT};
pub use vocab::{Vocabulary, BOS, EOS, MASK, NUM_RESERVED, PAD, RESERVED_TOKENS, UNK};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub vocab_src: Vocabulary,
    pub vocab_tgt: Vocabulary,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<&[usize]> {
        self.pairs.iter().map(|p| p.source.as_slice()).collect()
    }

    pub fn targets(&self) -> Vec<&[usize]> {
        self.pairs.iter().map(|p| p.target.as_slice()).collect()
    }

    pub fn max_source_len(&self) -> usize {
        self.pairs.iter().map(|p| p.source.len()).max().unwrap_or(0)
    }

    pub fn max_target_len(&self) -> usize {
        self.pairs.iter().map(|p| p.target.len()).max().unwrap_or(0)
    }

    /// Same sources and vocabularies with new targets.
    pub fn with_targets(&self, targets: Vec<Vec<usize>>) -> Result<Self> {
        if targets.len() != self.pairs.len() {
            return Err(Error::Invalid(format!(
                "{} targets for {} pairs",
                targets.len(),
                self.pairs.len()
            )));
        }
        let out = Self {
            pairs: self
                .pairs
                .iter()
                .zip(targets)
                .map(|(p, target)| SentencePair {
                    source: p.source.clone(),
                    target,
                })
                .collect(),
            vocab_src: self.vocab_src.clone(),
            vocab_tgt: self.vocab_tgt.clone(),
        };
        out.validate()?;
        Ok(out)
    }

    /// Checks index bounds and the single-trailing-eos target invariant.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if p.target.last() != Some(&EOS) || p.target.iter().filter(|&&t| t == EOS).count() != 1 {
                return Err(Error::Invalid(format!(
                    "pair {i}: target must end in exactly one eos"
                )));
            }
            if p.source.iter().any(|&t| t >= self.vocab_src.len())
                || p.target.iter().any(|&t| t >= self.vocab_tgt.len())
            {
                return Err(Error::Invalid(format!("pair {i}: index out of vocabulary")));
            }
        }
        Ok(())
    }

    /// Writes `<prefix>.src` and `<prefix>.tgt`, one whitespace-tokenised
    /// sentence per line. Target lines omit the trailing eos.
    pub fn write_text(&self, prefix: &Path) -> Result<()> {
        let (src_path, tgt_path) = text_paths(prefix);
        let mut src = String::new();
        let mut tgt = String::new();
        for p in &self.pairs {
            src.push_str(&self.vocab_src.decode(&p.source).join(" "));
            src.push('\n');
            tgt.push_str(&self.vocab_tgt.decode(strip_eos(&p.target)).join(" "));
            tgt.push('\n');
        }
        fs::write(&src_path, src).map_err(|e| Error::io(&src_path, e))?;
        fs::write(&tgt_path, tgt).map_err(|e| Error::io(&tgt_path, e))
    }

    /// Reads line-aligned `<prefix>.src` / `<prefix>.tgt`, encoding with the
    /// given vocabularies and appending eos to every target.
    pub fn read_text(prefix: &Path, vocab_src: &Vocabulary, vocab_tgt: &Vocabulary) -> Result<Self> {
        let (src, tgt) = read_lines(prefix)?;
        let pairs = src
            .iter()
            .zip(&tgt)
            .map(|(s, t)| {
                let mut target = vocab_tgt.encode(t);
                target.push(EOS);
                SentencePair {
                    source: vocab_src.encode(s),
                    target,
                }
            })
            .collect();
        let corpus = Self {
            pairs,
            vocab_src: vocab_src.clone(),
            vocab_tgt: vocab_tgt.clone(),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Reads a text corpus and builds both vocabularies from it.
    pub fn read_text_building_vocab(prefix: &Path, min_count: usize) -> Result<Self> {
        let (src, tgt) = read_lines(prefix)?;
        let vocab_src = Vocabulary::build(&src, min_count)?;
        let vocab_tgt = Vocabulary::build(&tgt, min_count)?;
        Self::read_text(prefix, &vocab_src, &vocab_tgt)
    }
}

pub fn text_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".src"), with(".tgt"))
}

type Lines = Vec<Vec<String>>;

fn read_lines(prefix: &Path) -> Result<(Lines, Lines)> {
    let (src_path, tgt_path) = text_paths(prefix);
    let load = |path: &Path| -> Result<Lines> {
        Ok(fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))?
            .lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect())
    };
    let src = load(&src_path)?;
    let tgt = load(&tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::Invalid(format!(
            "{} has {} lines but {} has {}",
            src_path.display(),
            src.len(),
            tgt_path.display(),
            tgt.len()
        )));
    }
    Ok((src, tgt))
}

/// Tokens before the first eos.
pub fn strip_eos(seq: &[usize]) -> &[usize] {
    match seq.iter().position(|&t| t == EOS) {
        Some(i) => &seq[..i],
        None => seq,
    }
}
