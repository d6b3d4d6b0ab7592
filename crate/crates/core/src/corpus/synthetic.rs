use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{Vocabulary, EOS, NUM_RESERVED};
use crate::corpus::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};

/// Offset used by the shifted-substitution task.
pub const SUBSTITUTION_SHIFT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Copy,
    Reverse,
    ShiftedSubstitution,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Copy => "copy",
            Task::Reverse => "reverse",
            Task::ShiftedSubstitution => "shifted-substitution",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Task::Copy),
            "reverse" => Ok(Task::Reverse),
            "shifted-substitution" | "shift" => Ok(Task::ShiftedSubstitution),
            other => Err(Error::Invalid(format!("unknown task {other:?}"))),
        }
    }
}

impl Task {
    /// Target for `source`, eos-terminated.
    pub fn transform(self, source: &[usize], vocab_size: usize) -> Vec<usize> {
        let mut target: Vec<usize> = match self {
            Task::Copy => source.to_vec(),
            Task::Reverse => source.iter().rev().copied().collect(),
            Task::ShiftedSubstitution => {
                let span = vocab_size - NUM_RESERVED;
                source
                    .iter()
                    .rev()
                    .map(|&i| (i - NUM_RESERVED + SUBSTITUTION_SHIFT) % span + NUM_RESERVED)
                    .collect()
            }
        };
        target.push(EOS);
        target
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub task: Task,
    pub n_pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Probability that a pair's first two target words are swapped, which
    /// gives each longer source two valid references. Zero gives the plain
    /// deterministic task.
    #[serde(default)]
    pub swap_prob: f64,
}

impl SyntheticSpec {
    pub fn new(task: Task, n_pairs: usize, min_len: usize, max_len: usize, vocab_size: usize, seed: u64) -> Self {
        Self {
            task,
            n_pairs,
            min_len,
            max_len,
            vocab_size,
            seed,
            swap_prob: 0.0,
        }
    }
}

/// Random sources over the non-reserved symbols, paired with the task's
/// transform. Bit-identical for a fixed spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<ParallelCorpus> {
    if spec.vocab_size < NUM_RESERVED + 1 {
        return Err(Error::Invalid(format!(
            "vocab_size must be at least {}",
            NUM_RESERVED + 1
        )));
    }
    if spec.min_len < 1 || spec.min_len > spec.max_len {
        return Err(Error::Invalid(format!(
            "bad length range ({}, {})",
            spec.min_len, spec.max_len
        )));
    }
    if !(0.0..=1.0).contains(&spec.swap_prob) {
        return Err(Error::Invalid("swap_prob must lie in [0, 1]".into()));
    }
    let vocab = Vocabulary::synthetic(spec.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pairs = (0..spec.n_pairs)
        .map(|_| {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let source: Vec<usize> = (0..len)
                .map(|_| rng.gen_range(NUM_RESERVED..spec.vocab_size))
                .collect();
            // the extra draw happens only for the ambiguous variant, so plain
            // corpora do not depend on the knob
            let mut target = spec.task.transform(&source, spec.vocab_size);
            // the extra draw happens only when the knob is on, so plain
            // corpora are unaffected by it
            if spec.swap_prob > 0.0 && rng.gen_bool(spec.swap_prob) && target.len() > 2 {
                target.swap(0, 1);
            }
            SentencePair { source, target }
        })
        .collect();
    Ok(ParallelCorpus {
        pairs,
        vocab_src: vocab.clone(),
        vocab_tgt: vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_and_reverse() {
        assert_eq!(Task::Copy.transform(&[7, 8, 9], 10), vec![7, 8, 9, EOS]);
        assert_eq!(Task::Reverse.transform(&[7, 8, 9], 10), vec![9, 8, 7, EOS]);
    }

    #[test]
    fn shifted_substitution_by_hand() {
        // 5 -> (0 + 3) % 10 + 5 = 8, 6 -> 9, then reversed
        assert_eq!(
            Task::ShiftedSubstitution.transform(&[5, 6], 15),
            vec![9, 8, EOS]
        );
        // wraps around the top of the range: 14 -> (9 + 3) % 10 + 5 = 7
        assert_eq!(Task::ShiftedSubstitution.transform(&[14], 15), vec![7, EOS]);
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let spec = SyntheticSpec {
            task: Task::ShiftedSubstitution,
            n_pairs: 50,
            min_len: 2,
            max_len: 6,
            vocab_size: 12,
            seed: 9,
            swap_prob: 0.0,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.pairs, b.pairs);
        a.validate().unwrap();
        for p in &a.pairs {
            assert!((2..=6).contains(&p.source.len()));
            assert_eq!(p.target.len(), p.source.len() + 1);
        }
        let c = generate_synthetic(&SyntheticSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.pairs, c.pairs);
    }

    #[test]
    fn rejects_tiny_vocab() {
        let spec = SyntheticSpec {
            task: Task::Copy,
            n_pairs: 1,
            min_len: 1,
            max_len: 1,
            vocab_size: 5,
            seed: 0,
            swap_prob: 0.0,
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn swap_knob_gives_two_references() {
        let mut spec = SyntheticSpec::new(Task::ShiftedSubstitution, 300, 2, 4, 15, 3);
        let plain = generate_synthetic(&spec).unwrap();
        assert!(plain.pairs.iter().all(|p| p.target == Task::ShiftedSubstitution.transform(&p.source, 15)));
        spec.swap_prob = 0.5;
        let mixed = generate_synthetic(&spec).unwrap();
        let mut swapped = 0;
        for p in &mixed.pairs {
            let mut alt = Task::ShiftedSubstitution.transform(&p.source, 15);
            alt.swap(0, 1);
            if p.target == alt && p.target != Task::ShiftedSubstitution.transform(&p.source, 15) {
                swapped += 1;
            } else {
                assert_eq!(p.target, Task::ShiftedSubstitution.transform(&p.source, 15));
            }
        }
        assert!((100..200).contains(&swapped), "{swapped}");
        spec.swap_prob = 1.5;
        assert!(generate_synthetic(&spec).is_err());
    }
}
