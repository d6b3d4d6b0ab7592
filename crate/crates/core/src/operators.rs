//! The five maps from logits to points on the probability simplex, with
//! their straight-through backward rules.
//!
//! | kind | forward                         | backward Jacobian          |
//! |------|---------------------------------|----------------------------|
//! | SX   | `softmax(z)`                    | `dq/dz`                    |
//! | STL  | `onehot(argmax z)`              | identity                   |
//! | SG   | `onehot(argmax softmax(z + g))` | `dq~/dz~` at `z + g`       |
//! | ST   | `onehot(argmax softmax(z))`     | `dq/dz`                    |
//! | GX   | `softmax(z + g)`                | `dq~/dz~` at `z + g`       |
//!
//! `g` is Gumbel noise at temperature 1. Argmax ties resolve to the lowest
//! index.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_jacobian_apply, softmax_row_values, BackwardRule, Graph, Matrix, Var};
use crate::error::{Error, Result};

const U_MIN: f64 = 1e-12;
const U_MAX: f64 = 1.0 - 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Sx,
    Stl,
    Sg,
    St,
    Gx,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 5] = [
        OperatorKind::Sx,
        OperatorKind::Stl,
        OperatorKind::Sg,
        OperatorKind::St,
        OperatorKind::Gx,
    ];

    pub fn needs_noise(self) -> bool {
        matches!(self, OperatorKind::Sg | OperatorKind::Gx)
    }

    /// Forward output is a one-hot vector.
    pub fn is_discrete(self) -> bool {
        matches!(self, OperatorKind::Stl | OperatorKind::Sg | OperatorKind::St)
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Sx => "sx",
            OperatorKind::Stl => "stl",
            OperatorKind::Sg => "sg",
            OperatorKind::St => "st",
            OperatorKind::Gx => "gx",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownOperator(s.to_string()))
    }
}

/// Seeded source of uniform draws for Gumbel noise.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

/// `-log(-log u)` with `u` clamped away from 0 and 1.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(U_MIN, U_MAX);
    -(-u.ln()).ln()
}

pub fn sample_gumbel(length: usize, stream: &mut NoiseStream) -> Vec<f64> {
    (0..length).map(|_| gumbel_from_uniform(stream.uniform())).collect()
}

pub fn sample_gumbel_matrix(rows: usize, cols: usize, stream: &mut NoiseStream) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| gumbel_from_uniform(stream.uniform()))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn one_hot_rows(scores: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(scores.dim());
    for (r, row) in scores.rows().into_iter().enumerate() {
        let best = argmax(row.as_slice().expect("standard layout"));
        out[[r, best]] = 1.0;
    }
    out
}

fn check_noise(kind: OperatorKind, has_noise: bool) -> Result<()> {
    match (kind.needs_noise(), has_noise) {
        (true, false) => Err(Error::NoiseMismatch {
            kind: kind.to_string(),
            problem: "requires Gumbel noise",
        }),
        (false, true) => Err(Error::NoiseMismatch {
            kind: kind.to_string(),
            problem: "must not consume noise",
        }),
        _ => Ok(()),
    }
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

fn perturbed(z: &[f64], noise: Option<&[f64]>) -> Result<Vec<f64>> {
    match noise {
        None => Ok(z.to_vec()),
        Some(g) if g.len() == z.len() => Ok(z.iter().zip(g).map(|(a, b)| a + b).collect()),
        Some(g) => Err(Error::ShapeMismatch {
            op: "gumbel noise",
            left: (1, z.len()),
            right: (1, g.len()),
        }),
    }
}

/// Forward map of `kind` on one logit vector.
pub fn apply_forward(kind: OperatorKind, z: &[f64], noise: Option<&[f64]>) -> Result<Vec<f64>> {
    check_noise(kind, noise.is_some())?;
    let zt = perturbed(z, noise)?;
    let out = match kind {
        OperatorKind::Sx | OperatorKind::Gx => softmax_row_values(&row(&zt)),
        OperatorKind::Stl => one_hot_rows(&row(z)),
        OperatorKind::St | OperatorKind::Sg => one_hot_rows(&softmax_row_values(&row(&zt))),
    };
    Ok(out.into_raw_vec_and_offset().0)
}

/// Gradient with respect to `z` given the upstream gradient at the
/// operator's output, using the rule of `kind`.
pub fn apply_backward(
    kind: OperatorKind,
    z: &[f64],
    noise: Option<&[f64]>,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    check_noise(kind, noise.is_some())?;
    if upstream.len() != z.len() {
        return Err(Error::ShapeMismatch {
            op: "apply_backward",
            left: (1, z.len()),
            right: (1, upstream.len()),
        });
    }
    let zt = perturbed(z, noise)?;
    let grad = match kind {
        OperatorKind::Stl => return Ok(upstream.to_vec()),
        _ => softmax_jacobian_apply(&row(&zt), &row(upstream)),
    };
    Ok(grad.into_raw_vec_and_offset().0)
}

/// Row-wise operator on a graph node of logits. `noise` must match the
/// shape of `z` and is supplied iff the kind needs it.
pub fn apply_on_graph(g: &mut Graph, kind: OperatorKind, z: Var, noise: Option<&Matrix>) -> Result<Var> {
    check_noise(kind, noise.is_some())?;
    if let Some(n) = noise {
        if n.dim() != g.shape(z) {
            return Err(Error::ShapeMismatch {
                op: "gumbel noise",
                left: g.shape(z),
                right: n.dim(),
            });
        }
    }
    match kind {
        OperatorKind::Sx => Ok(g.softmax_rows(z)),
        OperatorKind::Gx => {
            let n = g.constant(noise.expect("checked").clone());
            let zt = g.add(z, n)?;
            Ok(g.softmax_rows(zt))
        }
        OperatorKind::Stl => {
            let fwd = one_hot_rows(g.value(z));
            g.custom_grad(fwd, z, BackwardRule::Identity)
        }
        OperatorKind::St => {
            let at = g.value(z).clone();
            let fwd = one_hot_rows(&softmax_row_values(&at));
            g.custom_grad(fwd, z, BackwardRule::SoftmaxJacobianAt(at))
        }
        OperatorKind::Sg => {
            let at = g.value(z) + noise.expect("checked");
            let fwd = one_hot_rows(&softmax_row_values(&at));
            g.custom_grad(fwd, z, BackwardRule::SoftmaxJacobianAt(at))
        }
    }
}
