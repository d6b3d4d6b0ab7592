use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty: `grad += weight_decay * param`.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        Self {
            m: params.iter().map(|p| Matrix::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.dim())).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update. Refuses the step, leaving params and
/// state untouched, if any gradient entry is non-finite.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Invalid(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() || p.dim() != state.m[i].dim() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.dim(),
                right: g.dim(),
            });
        }
    }
    if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFiniteGradient);
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                let g = g + cfg.weight_decay * *p;
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        // f(x) = x, gradient 1 everywhere
        let mut params = vec![array![[0.0]]];
        let mut state = AdamState::new(&params);
        adam_step(
            &mut params,
            &[array![[1.0]]],
            &mut state,
            &AdamConfig::new(0.1, 0.0),
        )
        .unwrap();
        assert!((params[0][[0, 0]] + 0.1).abs() < 1e-9, "{}", params[0][[0, 0]]);
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        // zero gradient, param 1, decay 0.01: effective gradient 0.01 so the
        // first moment after one step is 0.1 * 0.01
        let mut params = vec![array![[1.0]]];
        let mut state = AdamState::new(&params);
        adam_step(
            &mut params,
            &[array![[0.0]]],
            &mut state,
            &AdamConfig::new(0.1, 0.01),
        )
        .unwrap();
        assert!((state.m[0][[0, 0]] - 0.001).abs() < 1e-15);
        assert!((state.v[0][[0, 0]] - 0.001 * 1e-4).abs() < 1e-18);
        assert!(params[0][[0, 0]] < 1.0);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(x, y) = (x - 3)^2 + 10 (y + 1)^2, minimum at (3, -1)
        let mut params = vec![array![[0.0, 0.0]]];
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::new(0.1, 0.0);
        for _ in 0..200 {
            let p = &params[0];
            let grad = array![[2.0 * (p[[0, 0]] - 3.0), 20.0 * (p[[0, 1]] + 1.0)]];
            adam_step(&mut params, &[grad], &mut state, &cfg).unwrap();
        }
        let p = &params[0];
        let dist = ((p[[0, 0]] - 3.0).powi(2) + (p[[0, 1]] + 1.0).powi(2)).sqrt();
        assert!(dist < 1e-3, "distance {dist}");
    }

    #[test]
    fn non_finite_gradient_refused() {
        let mut params = vec![array![[0.5, 0.5]]];
        let mut state = AdamState::new(&params);
        let err = adam_step(
            &mut params,
            &[array![[f64::NAN, 0.0]]],
            &mut state,
            &AdamConfig::new(0.1, 0.0),
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "non-finite gradient");
        assert_eq!(params[0], array![[0.5, 0.5]]);
        assert_eq!(state.steps(), 0);
    }
}
