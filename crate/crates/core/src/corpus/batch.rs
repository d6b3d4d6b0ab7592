use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::vocab::PAD;
use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};

/// Right-padded sources and targets for a group of pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Corpus indices of the pairs in this batch.
    pub indices: Vec<usize>,
    pub sources: Vec<Vec<usize>>,
    pub source_lens: Vec<usize>,
    pub targets: Vec<Vec<usize>>,
    pub target_lens: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Non-pad target tokens.
    pub fn target_tokens(&self) -> usize {
        self.target_lens.iter().sum()
    }

    pub fn from_indices(corpus: &ParallelCorpus, indices: Vec<usize>) -> Self {
        let src: Vec<&[usize]> = indices.iter().map(|&i| corpus.pairs[i].source.as_slice()).collect();
        let tgt: Vec<&[usize]> = indices.iter().map(|&i| corpus.pairs[i].target.as_slice()).collect();
        let (sources, source_lens) = pad(&src);
        let (targets, target_lens) = pad(&tgt);
        Self {
            indices,
            sources,
            source_lens,
            targets,
            target_lens,
        }
    }
}

fn pad(seqs: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let padded = seqs
        .iter()
        .map(|s| {
            let mut row = s.to_vec();
            row.resize(width, PAD);
            row
        })
        .collect();
    (padded, seqs.iter().map(|s| s.len()).collect())
}

/// Shuffles the corpus with `seed` and packs consecutive pairs while the
/// total target length stays within `token_budget`.
pub fn make_batches(corpus: &ParallelCorpus, token_budget: usize, seed: u64) -> Result<Vec<Batch>> {
    if let Some((index, p)) = corpus
        .pairs
        .iter()
        .enumerate()
        .find(|(_, p)| p.target.len() > token_budget)
    {
        return Err(Error::PairTooLong {
            index,
            len: p.target.len(),
            budget: token_budget,
        });
    }
    let mut order: Vec<usize> = (0..corpus.pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut tokens = 0;
    for i in order {
        let len = corpus.pairs[i].target.len();
        if tokens + len > token_budget {
            batches.push(Batch::from_indices(corpus, std::mem::take(&mut current)));
            tokens = 0;
        }
        current.push(i);
        tokens += len;
    }
    if !current.is_empty() {
        batches.push(Batch::from_indices(corpus, current));
    }
    Ok(batches)
}
