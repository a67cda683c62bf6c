use ndarray::ArrayView2;
use rand_chacha::ChaCha8Rng;

use super::real::Real;
use crate::error::Result;

/// A model with a flat parameter list and a differentiable batch loss.
///
/// `parameters`, `parameters_mut` and the gradient vectors returned by
/// `loss_and_grad` share one fixed ordering.
pub trait Objective<F: Real>: Clone {
    fn parameters(&self) -> Vec<&[F]>;

    fn parameters_mut(&mut self) -> Vec<&mut [F]>;

    /// Data loss of one batch and its exact gradient. `dropout_rng` enables
    /// stochastic regularisation where the model has any.
    fn loss_and_grad(
        &self,
        inputs: ArrayView2<F>,
        targets: ArrayView2<F>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(F, Vec<Vec<F>>)>;

    /// Deterministic evaluation loss.
    fn eval_loss(&self, inputs: ArrayView2<F>, targets: ArrayView2<F>) -> Result<F>;
}
