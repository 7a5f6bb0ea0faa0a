//! Autodiff versus central finite differences.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, ParamStore, Var};
use crate::numerics::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor of [`relative_error`]: central differences of an O(1)
/// objective carry roundoff near 1e-11, so components whose true gradient
/// is zero would otherwise report spurious relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Componentwise relative error with denominator `max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        if a.is_nan() || n.is_nan() {
            return Err(Error::invalid("NaN in gradient during grad_check"));
        }
        worst = worst.max(relative_error(a, n));
    }
    Ok(worst)
}

fn eval_scalar<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.constant(point.clone());
    let y = f(&mut g, x)?;
    scalar_of(&g, y)
}

fn scalar_of(g: &Graph, y: Var) -> Result<f64> {
    let v = g.value(y);
    if v.numel() != 1 {
        return Err(Error::shape("grad_check", format!("function must return a scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Max relative error between the autodiff gradient of `f` at `point` and
/// central differences with step `eps`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let y = f(&mut g, x)?;
    g.backward(y)?;
    let analytic = g
        .grad(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let mut numeric = vec![0.0; point.numel()];
    let mut probe = point.clone();
    for (i, slot) in numeric.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        *slot = (up - down) / (2.0 * eps);
    }
    max_relative_error(analytic.data(), &numeric)
}

/// Like [`grad_check`] but differentiates with respect to every scalar in
/// `store`. `f` must build its graph through [`Graph::param`].
pub fn grad_check_params<F>(f: F, store: &mut ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    g.backward(y)?;
    g.accumulate_param_grads(store);

    let mut analytic = Vec::with_capacity(store.scalar_count());
    let mut numeric = Vec::with_capacity(store.scalar_count());
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        analytic.extend_from_slice(store.grad(id).data());
        for i in 0..store.value(id).numel() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let up = {
                let mut g = Graph::new();
                let y = f(&mut g, store)?;
                scalar_of(&g, y)?
            };
            store.value_mut(id).data_mut()[i] = orig - eps;
            let down = {
                let mut g = Graph::new();
                let y = f(&mut g, store)?;
                scalar_of(&g, y)?
            };
            store.value_mut(id).data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
    }
    store.zero_grads();
    max_relative_error(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact_enough() {
        let err = grad_check(
            |g, x| {
                let s = g.square(x)?;
                g.sum(s)
            },
            &Tensor::from_vec(vec![1.0, 2.0, 3.0]),
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(0.1 * REL_ERROR_FLOOR, 0.0) - 0.1).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
