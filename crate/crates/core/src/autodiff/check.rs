use crate::autodiff::{Graph, Matrix, Var};
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of `f` at `point` against central
/// differences, coordinate by coordinate. Returns the worst relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `f` is re-run on a fresh graph for every perturbation, so it must be
/// deterministic.
pub fn grad_check<F>(f: F, point: &Matrix, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let (analytic, _) = analytic_gradient(&f, point)?;
    let numeric = numeric_gradient(&f, point, epsilon)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Value and reverse-mode gradient of a scalar function.
pub fn analytic_gradient<F>(f: &F, point: &Matrix) -> Result<(Matrix, f64)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let y = f(&mut g, x)?;
    let value = scalar_of(&g, y)?;
    let grads = g.backward(y)?;
    Ok((grads.get_or_zeros(x, point.dim()), value))
}

/// Central-difference gradient of a scalar function.
pub fn numeric_gradient<F>(f: &F, point: &Matrix, epsilon: f64) -> Result<Matrix>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |p: &Matrix| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(p.clone());
        let y = f(&mut g, x)?;
        scalar_of(&g, y)
    };
    let mut out = Matrix::zeros(point.dim());
    let mut probe = point.clone();
    for idx in ndarray::indices(point.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + epsilon;
        let plus = eval(&probe)?;
        probe[idx] = orig - epsilon;
        let minus = eval(&probe)?;
        probe[idx] = orig;
        out[idx] = (plus - minus) / (2.0 * epsilon);
    }
    Ok(out)
}

pub fn max_relative_error(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn scalar_of(g: &Graph, y: Var) -> Result<f64> {
    let shape = g.shape(y);
    if shape != (1, 1) {
        return Err(Error::NotScalar {
            op: "grad_check",
            shape,
        });
    }
    Ok(g.scalar(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic() {
        let point = array![[1.0, 2.0]];
        let f = |g: &mut Graph, x: Var| {
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        };
        let (grad, value) = analytic_gradient(&f, &point).unwrap();
        assert_eq!(grad, array![[2.0, 4.0]]);
        assert_eq!(value, 5.0);
        assert!(grad_check(f, &point, 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let point = array![[1.0, -2.0, 0.5]];
        let f = |g: &mut Graph, _x: Var| Ok(g.constant(array![[3.0]]));
        let (grad, _) = analytic_gradient(&f, &point).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
        assert_eq!(grad_check(f, &point, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let point = array![[1.0, 2.0]];
        let f = |g: &mut Graph, x: Var| Ok(g.tanh(x));
        assert!(matches!(
            grad_check(f, &point, 1e-5),
            Err(Error::NotScalar { .. })
        ));
    }
}
