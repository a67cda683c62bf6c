//! Central finite-difference check of analytic gradients.

use ndarray::ArrayView2;

use super::objective::Objective;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over all parameters.
    pub max_relative_error: f64,
    /// Flat index (tensor, element) of the worst parameter.
    pub worst: (usize, usize),
    pub n_parameters: usize,
}

/// Relative error with a floor on the denominator so that parameters with
/// (near-)zero gradient are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / scale
}

/// Compares `loss_and_grad` (plus the L2 term `weight_decay/2 · ‖θ‖²`)
/// against central differences of `eval_loss` with step `h`.
pub fn check_gradients<O: Objective<f64>>(
    model: &O,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    h: f64,
    weight_decay: f64,
) -> Result<GradCheck> {
    let (_, mut analytic) = model.loss_and_grad(inputs, targets, None)?;
    for (g, p) in analytic.iter_mut().zip(model.parameters()) {
        for (gi, &pi) in g.iter_mut().zip(p) {
            *gi += weight_decay * pi;
        }
    }
    let total = |m: &O| -> Result<f64> {
        let l2: f64 = m.parameters().iter().flat_map(|p| p.iter()).map(|v| v * v).sum();
        Ok(m.eval_loss(inputs, targets)? + 0.5 * weight_decay * l2)
    };

    let mut probe = model.clone();
    let mut result = GradCheck {
        max_relative_error: 0.0,
        worst: (0, 0),
        n_parameters: 0,
    };
    for t in 0..analytic.len() {
        for i in 0..analytic[t].len() {
            let orig = probe.parameters()[t][i];
            probe.parameters_mut()[t][i] = orig + h;
            let up = total(&probe)?;
            probe.parameters_mut()[t][i] = orig - h;
            let down = total(&probe)?;
            probe.parameters_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[t][i], numeric);
            if err > result.max_relative_error {
                result.max_relative_error = err;
                result.worst = (t, i);
            }
            result.n_parameters += 1;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, MlpModel};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for (seed, dims) in [(1u64, vec![3, 5, 2]), (2, vec![4, 7, 6, 3]), (3, vec![6, 20, 20, 6])] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model =
                MlpModel::<f64>::new(&dims, Activation::Relu, Activation::Identity, 0.0, &mut rng)
                    .unwrap();
            let x = Array2::from_shape_simple_fn((6, dims[0]), || rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_simple_fn((6, *dims.last().unwrap()), || {
                rng.random_range(-1.0..1.0)
            });
            let check = check_gradients(&model, x.view(), y.view(), 1e-6, 1e-2).unwrap();
            assert!(
                check.max_relative_error < 1e-4,
                "dims {dims:?}: {check:?}"
            );
            assert_eq!(check.n_parameters, model.n_parameters());
        }
    }
}
