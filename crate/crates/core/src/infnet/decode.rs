use std::cmp::Ordering;

use crate::autodiff::log_softmax_row_values;
use crate::corpus::MASK;
use crate::error::{Error, Result};
use crate::infnet::{Arch, InferenceNetwork};
use crate::operators::argmax;

/// Top-k lengths with their log-probabilities, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthPrediction {
    pub candidates: Vec<(usize, f64)>,
}

impl LengthPrediction {
    pub fn best(&self) -> usize {
        self.candidates[0].0
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.candidates.iter().map(|&(l, _)| l).collect()
    }
}

/// A decoded sequence with the network's log-probability of each token.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub tokens: Vec<usize>,
    pub scores: Vec<f64>,
}

impl Scored {
    /// Mean per-token log-probability, the length-beam selection score.
    pub fn mean_score(&self) -> f64 {
        if self.scores.is_empty() {
            return f64::NEG_INFINITY;
        }
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    fn from_logits(logits: &ndarray::Array2<f64>) -> Self {
        let lp = log_softmax_row_values(logits);
        let mut tokens = Vec::with_capacity(lp.nrows());
        let mut scores = Vec::with_capacity(lp.nrows());
        for row in lp.rows() {
            let row = row.to_vec();
            let k = argmax(&row);
            tokens.push(k);
            scores.push(row[k]);
        }
        Self { tokens, scores }
    }
}

/// How many positions iteration `i` of `n` re-masks in a length-`len` output.
pub fn masked_count(len: usize, i: usize, n: usize) -> usize {
    (len * (n - i)).div_ceil(n)
}

/// Positions holding the `count` lowest scores (earlier position wins ties).
fn lowest_positions(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(count);
    order.sort_unstable();
    order
}

impl InferenceNetwork {
    pub fn predict_length(&self, source: &[usize], k: usize) -> Result<LengthPrediction> {
        Ok(self.predict_length_batch(&[source], k)?.remove(0))
    }

    pub fn predict_length_batch(&self, sources: &[&[usize]], k: usize) -> Result<Vec<LengthPrediction>> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        let dists = self.length_distributions(sources)?;
        Ok(dists
            .into_iter()
            .map(|lp| {
                let mut c: Vec<(usize, f64)> = lp.into_iter().enumerate().map(|(i, l)| (i + 1, l)).collect();
                c.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
                c.truncate(k);
                LengthPrediction { candidates: c }
            })
            .collect())
    }

    /// Per-position argmax at the given lengths (fully masked input for
    /// the masked-conditional architecture).
    pub fn decode_at_lengths(&self, sources: &[&[usize]], lengths: &[usize]) -> Result<Vec<Scored>> {
        let logits = self.forward_batch(sources, lengths, None)?;
        Ok(logits.iter().map(Scored::from_logits).collect())
    }

    /// Decodes each of the top-`k` predicted lengths and keeps the one with
    /// the highest mean token log-probability (shorter length on ties).
    pub fn decode_length_beam(&self, source: &[usize], k: usize) -> Result<Scored> {
        Ok(self.decode_length_beam_batch(&[source], k, 1)?.remove(0))
    }

    /// Length-beam decoding for many sources, each candidate decoded with
    /// `iterations` rounds of mask-predict (1 means a single parallel pass).
    pub fn decode_length_beam_batch(&self, sources: &[&[usize]], k: usize, iterations: usize) -> Result<Vec<Scored>> {
        let preds = self.predict_length_batch(sources, k)?;
        let mut flat_src = Vec::new();
        let mut flat_len = Vec::new();
        for (s, p) in sources.iter().zip(&preds) {
            for l in p.lengths() {
                flat_src.push(*s);
                flat_len.push(l);
            }
        }
        let decoded = self.mask_predict_batch(&flat_src, &flat_len, iterations)?;
        let mut out = Vec::with_capacity(sources.len());
        let mut it = decoded.into_iter();
        for p in &preds {
            let mut best: Option<Scored> = None;
            for _ in 0..p.candidates.len() {
                let cand = it.next().expect("one decode per candidate");
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let (cs, bs) = (cand.mean_score(), b.mean_score());
                        cs > bs || (cs == bs && cand.tokens.len() < b.tokens.len())
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
            out.push(best.expect("k >= 1"));
        }
        Ok(out)
    }

    /// One mask-predict step: re-masks the lowest-scoring positions of
    /// `prev` and re-predicts only those, keeping the rest untouched.
    pub fn refine(&self, source: &[usize], prev: &Scored, iteration: usize, total: usize) -> Result<Scored> {
        Ok(self.refine_batch(&[source], std::slice::from_ref(prev), iteration, total)?.remove(0))
    }

    pub fn refine_batch(&self, sources: &[&[usize]], prev: &[Scored], iteration: usize, total: usize) -> Result<Vec<Scored>> {
        if self.arch() != Arch::MaskedConditional {
            return Err(Error::RefinementArch);
        }
        if iteration == 0 || iteration >= total {
            return Err(Error::Invalid(format!("iteration {iteration} outside 1..{total}")));
        }
        let masked: Vec<Vec<usize>> = prev
            .iter()
            .map(|p| lowest_positions(&p.scores, masked_count(p.tokens.len(), iteration, total)))
            .collect();
        let inputs: Vec<Vec<usize>> = prev
            .iter()
            .zip(&masked)
            .map(|(p, m)| {
                let mut t = p.tokens.clone();
                for &i in m {
                    t[i] = MASK;
                }
                t
            })
            .collect();
        let lengths: Vec<usize> = prev.iter().map(|p| p.tokens.len()).collect();
        let logits = self.forward_batch(sources, &lengths, Some(&inputs))?;
        Ok(prev
            .iter()
            .zip(&masked)
            .zip(&logits)
            .map(|((p, m), z)| {
                let fresh = Scored::from_logits(z);
                let mut next = p.clone();
                for &i in m {
                    next.tokens[i] = fresh.tokens[i];
                    next.scores[i] = fresh.scores[i];
                }
                next
            })
            .collect())
    }

    /// Decodes a set of sources either at the given oracle lengths or with
    /// a length beam of `length_beam` predicted candidates, running
    /// `iterations` mask-predict rounds per candidate.
    pub fn decode(
        &self,
        sources: &[&[usize]],
        oracle_lengths: Option<&[usize]>,
        length_beam: usize,
        iterations: usize,
    ) -> Result<Vec<Scored>> {
        match oracle_lengths {
            Some(lengths) => self.mask_predict_batch(sources, lengths, iterations),
            None => self.decode_length_beam_batch(sources, length_beam, iterations),
        }
    }

    /// Full mask-predict decoding: a fully masked pass followed by
    /// `iterations - 1` refinement rounds.
    pub fn mask_predict_batch(&self, sources: &[&[usize]], lengths: &[usize], iterations: usize) -> Result<Vec<Scored>> {
        if iterations == 0 {
            return Err(Error::Invalid("iterations must be at least 1".into()));
        }
        let mut cur = self.decode_at_lengths(sources, lengths)?;
        for i in 1..iterations {
            cur = self.refine_batch(sources, &cur, i, iterations)?;
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_count_formula() {
        assert_eq!(masked_count(7, 9, 10), 1);
        assert_eq!(masked_count(10, 1, 10), 9);
        assert_eq!(masked_count(5, 1, 2), 3);
    }

    #[test]
    fn lowest_positions_prefers_early_ties() {
        assert_eq!(lowest_positions(&[-1.0, -3.0, -1.0, -3.0], 3), vec![0, 1, 3]);
    }
}
