//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Coordinates checked per parameter tensor (all of them when smaller).
pub const MIN_SAMPLES_PER_TENSOR: usize = 50;

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max of `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
}

/// Compares the tape gradient of `f` against central differences.
///
/// `f` receives a fresh tape and one leaf per entry of `params` (in order)
/// and must return a scalar loss. It is evaluated twice at the unperturbed
/// point; differing values are reported as non-determinism.
pub fn grad_check<F>(mut f: F, params: &[Tensor], h: f64, seed: u64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }

    let mut eval = |ps: &[Tensor], with_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps
            .iter()
            .map(|p| tape.leaf(p.clone().with_requires_grad(with_grad)))
            .collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.scalar_value(loss)?;
        let mut grads = Vec::new();
        if with_grad {
            tape.backward(loss)?;
            for (v, p) in vars.iter().zip(ps) {
                grads.push(
                    tape.grad(*v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; p.numel()]),
                );
            }
        }
        Ok((value, grads))
    };

    let (first, analytic) = eval(params, true)?;
    let (second, _) = eval(params, false)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    for t in 0..params.len() {
        let n = params[t].numel();
        let coords: Vec<usize> = if n <= MIN_SAMPLES_PER_TENSOR {
            (0..n).collect()
        } else {
            sample(&mut rng, n, MIN_SAMPLES_PER_TENSOR).into_vec()
        };
        for c in coords {
            let orig = params[t].data()[c];
            work[t].data_mut()[c] = orig + h;
            let (plus, _) = eval(&work, false)?;
            work[t].data_mut()[c] = orig - h;
            let (minus, _) = eval(&work, false)?;
            work[t].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[t][c];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            max_err = max_err.max(err);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        coordinates_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let w = Tensor::matrix(1, 5, vec![0.3, -1.2, 2.0, 0.7, -0.1]).unwrap();
        let r = grad_check(|t, v| t.sum_squares(v[0]), &[w], 1e-5, 1).unwrap();
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
        assert_eq!(r.coordinates_checked, 5);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let w = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = grad_check(|t, _| Ok(t.constant(Tensor::scalar(4.0))), &[w], 1e-5, 1).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn detects_non_determinism() {
        let w = Tensor::scalar(1.0);
        let mut calls = 0.0;
        let err = grad_check(
            |t, v| {
                calls += 1.0;
                let c = t.constant(Tensor::scalar(calls));
                let s = t.sum_squares(v[0])?;
                t.add(s, c)
            },
            &[w],
            1e-5,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }

    #[test]
    fn rejects_step_out_of_range() {
        let w = Tensor::scalar(1.0);
        assert!(grad_check(|t, v| t.sum(v[0]), &[w], 1e-2, 0).is_err());
    }

    #[test]
    fn samples_at_least_fifty_coordinates_of_large_tensors() {
        let w = Tensor::matrix(10, 10, (0..100).map(|i| i as f64 * 0.01).collect()).unwrap();
        let r = grad_check(|t, v| t.sum_squares(v[0]), &[w], 1e-5, 3).unwrap();
        assert_eq!(r.coordinates_checked, MIN_SAMPLES_PER_TENSOR);
    }
}
