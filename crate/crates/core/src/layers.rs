//! Recurrent and attention building blocks shared by the teacher and the
//! inference networks. All activations are batch-major: `batch x features`.

use rand::Rng;

use crate::autodiff::{Bound, Graph, Matrix, ParamId, ParamStore, Var};
use crate::error::Result;

/// Additive bias for masked attention slots.
const MASKED: f64 = -1e9;

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let w = store.add_glorot(format!("{name}.w"), input, output, rng);
        let b = store.add_zeros(format!("{name}.b"), 1, output);
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let xw = g.matmul(x, p[self.w])?;
        g.add_row(xw, p[self.b])
    }
}

/// Single-layer LSTM with fused gate weights over `[input, hidden]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    w: ParamId,
    b: ParamId,
    hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w = store.add_glorot(format!("{name}.w"), input + hidden, 4 * hidden, rng);
        let mut bias = Matrix::zeros((1, 4 * hidden));
        // gate order i, f, g, o; forget gate starts open
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        let b = store.add(format!("{name}.b"), bias);
        Self { w, b, hidden }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> LstmState {
        LstmState {
            h: g.constant(Matrix::zeros((batch, self.hidden))),
            c: g.constant(Matrix::zeros((batch, self.hidden))),
        }
    }

    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, state: LstmState) -> Result<LstmState> {
        let hd = self.hidden;
        let xh = g.concat_cols(&[x, state.h])?;
        let pre = g.matmul(xh, p[self.w])?;
        let pre = g.add_row(pre, p[self.b])?;
        let i = g.slice_cols(pre, 0, hd)?;
        let f = g.slice_cols(pre, hd, 2 * hd)?;
        let c_in = g.slice_cols(pre, 2 * hd, 3 * hd)?;
        let o = g.slice_cols(pre, 3 * hd, 4 * hd)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let c_in = g.tanh(c_in);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, c_in)?;
        let c = g.add(keep, write)?;
        let c_act = g.tanh(c);
        let h = g.mul(o, c_act)?;
        Ok(LstmState { h, c })
    }

    /// Runs over `inputs` (one `batch x input` node per time step). Rows whose
    /// `mask[b, t]` is 0 carry their state through step `t` unchanged, so a
    /// reverse pass over right-padded input starts at each row's last token.
    pub fn run(
        &self,
        g: &mut Graph,
        p: &Bound,
        inputs: &[Var],
        mask: &Matrix,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let batch = mask.nrows();
        let mut state = self.zero_state(g, batch);
        let mut outputs = vec![None; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            let next = self.step(g, p, inputs[t], state)?;
            let col = mask.column(t);
            state = if col.iter().all(|&m| m == 1.0) {
                next
            } else {
                let on = col.to_owned().insert_axis(ndarray::Axis(1));
                let off = on.mapv(|m| 1.0 - m);
                LstmState {
                    h: blend(g, next.h, state.h, &on, &off)?,
                    c: blend(g, next.c, state.c, &on, &off)?,
                }
            };
            outputs[t] = Some(state.h);
        }
        Ok(outputs.into_iter().map(|o| o.expect("every step visited")).collect())
    }
}

fn blend(g: &mut Graph, new: Var, old: Var, on: &Matrix, off: &Matrix) -> Result<Var> {
    let a = g.scale_rows(new, on.clone())?;
    let b = g.scale_rows(old, off.clone())?;
    g.add(a, b)
}

/// Forward and backward LSTMs whose outputs are concatenated per step.
#[derive(Clone, Debug)]
pub struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn run(&self, g: &mut Graph, p: &Bound, inputs: &[Var], mask: &Matrix) -> Result<Vec<Var>> {
        let f = self.fwd.run(g, p, inputs, mask, false)?;
        let b = self.bwd.run(g, p, inputs, mask, true)?;
        f.into_iter()
            .zip(b)
            .map(|(f, b)| g.concat_cols(&[f, b]))
            .collect()
    }
}

/// Additive attention bias for a `batch x steps` 0/1 mask.
pub fn attention_bias(mask: &Matrix) -> Matrix {
    mask.mapv(|m| if m > 0.0 { 0.0 } else { MASKED })
}

/// Scaled dot-product attention of a `batch x d` query over `keys`
/// (one `batch x d` node per step). Returns the context vector.
pub fn attend(g: &mut Graph, query: Var, keys: &[Var], bias: &Matrix) -> Result<Var> {
    let d = g.shape(query).1 as f64;
    let mut scores = Vec::with_capacity(keys.len());
    for &k in keys {
        scores.push(g.row_dot(query, k)?);
    }
    let scores = g.concat_cols(&scores)?;
    let scores = g.scale(scores, 1.0 / d.sqrt());
    let bias = g.constant(bias.clone());
    let scores = g.add(scores, bias)?;
    let weights = g.softmax_rows(scores);
    let mut ctx = None;
    for (s, &k) in keys.iter().enumerate() {
        let w = g.slice_cols(weights, s, s + 1)?;
        let term = g.mul_col(w, k)?;
        ctx = Some(match ctx {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(ctx.expect("at least one key"))
}

/// Mean over the unmasked steps of `states`, per row.
pub fn masked_mean(g: &mut Graph, states: &[Var], mask: &Matrix) -> Result<Var> {
    let counts = mask.sum_axis(ndarray::Axis(1));
    let mut acc = None;
    for (t, &s) in states.iter().enumerate() {
        let w = Matrix::from_shape_fn((mask.nrows(), 1), |(b, _)| mask[[b, t]] / counts[b].max(1.0));
        let term = g.scale_rows(s, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("at least one step"))
}
