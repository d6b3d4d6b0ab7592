use std::cmp::Ordering;

use crate::autodiff::Graph;
use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};
use crate::operators::argmax;
use crate::teacher::TeacherModel;

/// A decoded hypothesis and its total log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub score: f64,
}

/// Higher score first; equal scores in lexicographic token order.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

impl TeacherModel {
    /// Argmax decoding for a batch of sources. Each output stops after eos
    /// or at `max_len` tokens.
    pub fn greedy_decode_batch(&self, sources: &[&[usize]], max_len: usize) -> Result<Vec<Vec<usize>>> {
        if max_len == 0 {
            return Err(Error::Invalid("max_len must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(sources.len());
        for chunk in sources.chunks(256) {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let enc = self.encode(&mut g, &p, chunk)?;
            let mut state = self.initial_state(&mut g, &enc);
            let mut inputs = vec![BOS; chunk.len()];
            let mut seqs: Vec<Vec<usize>> = vec![Vec::new(); chunk.len()];
            let mut done = vec![false; chunk.len()];
            for _ in 0..max_len {
                let (logp, next) = self.step_tokens(&mut g, &p, &enc, &state, &inputs)?;
                state = next;
                let lp = g.value(logp);
                for b in 0..chunk.len() {
                    if done[b] {
                        continue;
                    }
                    let tok = argmax(lp.row(b).as_slice().expect("standard layout"));
                    seqs[b].push(tok);
                    inputs[b] = tok;
                    done[b] = tok == EOS;
                }
                if done.iter().all(|&d| d) {
                    break;
                }
            }
            out.extend(seqs);
        }
        Ok(out)
    }

    pub fn greedy_decode(&self, source: &[usize], max_len: usize) -> Result<Vec<usize>> {
        Ok(self.greedy_decode_batch(&[source], max_len)?.remove(0))
    }

    /// Beam search over summed log-probabilities, without length
    /// normalisation. At every step the `beam` best expansions are kept;
    /// those ending in eos are finished, the rest stay live. Returns the best
    /// finished hypothesis, or the best live one if nothing finished within
    /// `max_len` tokens.
    pub fn beam_search(&self, source: &[usize], beam: usize, max_len: usize) -> Result<Hypothesis> {
        if beam == 0 {
            return Err(Error::Invalid("beam must be at least 1".into()));
        }
        if max_len == 0 {
            return Err(Error::Invalid("max_len must be at least 1".into()));
        }
        let vocab = self.tgt_vocab();
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let enc0 = self.encode(&mut g, &p, &[source])?;

        let mut live = vec![Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
        }];
        let mut enc = enc0.clone();
        let mut state = self.initial_state(&mut g, &enc0);
        let mut finished: Vec<Hypothesis> = Vec::new();

        for _ in 0..max_len {
            let inputs: Vec<usize> = live.iter().map(|h| *h.tokens.last().unwrap_or(&BOS)).collect();
            let (logp, next) = self.step_tokens(&mut g, &p, &enc, &state, &inputs)?;
            let lp = g.value(logp);

            let mut candidates: Vec<(Hypothesis, usize)> = Vec::with_capacity(live.len() * vocab);
            for (row, h) in live.iter().enumerate() {
                for tok in 0..vocab {
                    let mut tokens = h.tokens.clone();
                    tokens.push(tok);
                    candidates.push((
                        Hypothesis {
                            tokens,
                            score: h.score + lp[[row, tok]],
                        },
                        row,
                    ));
                }
            }
            candidates.sort_by(|a, b| rank(&a.0, &b.0));
            candidates.truncate(beam);

            let mut next_live = Vec::new();
            let mut parents = Vec::new();
            for (h, row) in candidates {
                if h.tokens.last() == Some(&EOS) {
                    finished.push(h);
                } else {
                    next_live.push(h);
                    parents.push(row);
                }
            }
            if next_live.is_empty() {
                live.clear();
                break;
            }
            state = next.select_rows(&mut g, &parents)?;
            enc = enc0.select_rows(&mut g, &vec![0; parents.len()])?;
            live = next_live;

            let best_finished = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            if best_finished > best_live {
                break;
            }
        }

        let pool = if finished.is_empty() { &mut live } else { &mut finished };
        pool.sort_by(rank);
        pool.first()
            .cloned()
            .ok_or_else(|| Error::Invalid("beam search produced no hypothesis".into()))
    }
}
