//! Corpus BLEU, mean teacher energy, and an exhaustive argmin oracle for
//! tiny vocabularies.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{strip_eos, EOS};
use crate::error::{Error, Result};
use crate::teacher::{DecoderState, TeacherModel, TeacherSession};

/// Metrics computed over one set of sentences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub bleu: f64,
    pub mean_energy: f64,
    pub n_sentences: usize,
}

const MAX_ORDER: usize = 4;

fn ngram_counts<T: Hash + Eq>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 on a 0-100 scale.
///
/// Clipped n-gram matches and hypothesis n-gram totals are pooled over the
/// corpus. A zero match count for n >= 2 is smoothed to `(0 + 1) / (total + 1)`;
/// zero unigram matches give a score of 0.
pub fn bleu<H, R, T>(hypotheses: &[H], references: &[R]) -> Result<f64>
where
    H: AsRef<[T]>,
    R: AsRef<[T]>,
    T: Hash + Eq,
{
    if hypotheses.is_empty() {
        return Err(Error::Invalid("BLEU of an empty hypothesis set".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(r, n);
            for (gram, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let p = if n > 0 && matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / MAX_ORDER as f64).exp())
}

/// BLEU after cutting every sequence at its first eos.
pub fn bleu_stripped(hypotheses: &[Vec<usize>], references: &[&[usize]]) -> Result<f64> {
    let h: Vec<&[usize]> = hypotheses.iter().map(|s| strip_eos(s)).collect();
    let r: Vec<&[usize]> = references.iter().map(|s| strip_eos(s)).collect();
    bleu(&h, &r)
}

/// Arithmetic mean of the teacher energy over `(source, hypothesis)` pairs.
pub fn mean_energy(teacher: &TeacherModel, sources: &[&[usize]], hypotheses: &[&[usize]]) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::Invalid("mean energy of an empty set".into()));
    }
    let e = teacher.energies(sources, hypotheses)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// BLEU against references (eos stripped) and mean teacher energy of the raw
/// hypotheses, over the same sentences.
pub fn evaluate(
    teacher: &TeacherModel,
    sources: &[&[usize]],
    hypotheses: &[Vec<usize>],
    references: &[&[usize]],
) -> Result<EvalResult> {
    let hyp_refs: Vec<&[usize]> = hypotheses.iter().map(Vec::as_slice).collect();
    Ok(EvalResult {
        bleu: bleu_stripped(hypotheses, references)?,
        mean_energy: mean_energy(teacher, sources, &hyp_refs)?,
        n_sentences: sources.len(),
    })
}

pub const BRUTE_FORCE_MAX_VOCAB: usize = 6;
pub const BRUTE_FORCE_MAX_LEN: usize = 4;

/// Exact minimiser of the teacher energy over every eos-terminated sequence
/// of at most `max_len` tokens whose prefix avoids eos. Ties go to the
/// lexicographically smallest sequence.
pub fn brute_force_argmin(teacher: &TeacherModel, source: &[usize], max_len: usize) -> Result<(Vec<usize>, f64)> {
    let vocab = teacher.tgt_vocab();
    if vocab > BRUTE_FORCE_MAX_VOCAB || max_len > BRUTE_FORCE_MAX_LEN {
        return Err(Error::EnumerationTooLarge { vocab, max_len });
    }
    if max_len == 0 {
        return Err(Error::Invalid("max_len must be at least 1".into()));
    }
    let mut session = teacher.session(source)?;
    let start = session.initial_state();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut prefix = Vec::with_capacity(max_len);
    search(&mut session, &start, crate::corpus::BOS, 0.0, &mut prefix, max_len, vocab, &mut best)?;
    let (seq, _) = best.expect("at least [eos] is enumerated");
    let energy = teacher.energy(source, &seq)?;
    Ok((seq, energy))
}

#[allow(clippy::too_many_arguments)]
fn search(
    session: &mut TeacherSession<'_>,
    state: &DecoderState,
    input: usize,
    neg_logp: f64,
    prefix: &mut Vec<usize>,
    max_len: usize,
    vocab: usize,
    best: &mut Option<(Vec<usize>, f64)>,
) -> Result<()> {
    let (lp, next) = session.step_token(state, input)?;
    let mut done = prefix.clone();
    done.push(EOS);
    let e = neg_logp - lp[EOS];
    let better = match best {
        None => true,
        Some((seq, be)) => e < *be || (e == *be && done < *seq),
    };
    if better {
        *best = Some((done, e));
    }
    if prefix.len() + 1 < max_len {
        for tok in (0..vocab).filter(|&t| t != EOS) {
            prefix.push(tok);
            search(session, &next, tok, neg_logp - lp[tok], prefix, max_len, vocab, best)?;
            prefix.pop();
        }
    }
    Ok(())
}
