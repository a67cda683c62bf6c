use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::objective::Objective;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply<F: Real>(self, z: &mut Array2<F>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        }
    }
}

/// One dense layer: `out = act(in · Wᵀ + b)` with `W` of shape (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Real> DenseLayer<F> {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn pre_activation(&self, input: ArrayView2<F>) -> Array2<F> {
        let mut z = input.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

/// Glorot-uniform draw into a (rows, cols) matrix, row-major.
pub(crate) fn glorot_uniform<F: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Array2<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        F::from_f64_lossy(rng.random_range(-limit..limit))
    })
}

/// Dense feed-forward network used for autoencoders and linear probes.
///
/// Dropout (inverted) is applied to the output of every layer except the
/// last, and only when a dropout stream is supplied to the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<F = f32> {
    layers: Vec<DenseLayer<F>>,
    dropout: f64,
}

/// Intermediate values of a training-mode forward pass, consumed by
/// [`MlpModel::backward`].
#[derive(Debug)]
pub struct ForwardTrace<F> {
    inputs: Vec<Array2<F>>,
    pre_activations: Vec<Array2<F>>,
    masks: Vec<Option<Array2<F>>>,
}

impl<F: Real> MlpModel<F> {
    /// Randomly initialised network; `dims` lists input, hidden and output
    /// widths. Every layer but the last uses `hidden`, the last `output`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Argument(
                "a network needs at least input and output dimensions".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::Argument(format!("layer dims must be positive: {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| DenseLayer {
                weights: glorot_uniform(dims[i + 1], dims[i], rng),
                bias: Array1::zeros(dims[i + 1]),
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self::from_layers(layers, dropout)
    }

    pub fn from_layers(layers: Vec<DenseLayer<F>>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("a network needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Argument(format!("dropout {dropout} outside [0, 1)")));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::shape(
                    format!("bias of layer {i}"),
                    layer.output_dim(),
                    layer.bias.len(),
                ));
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(Error::shape(
                    format!("input of layer {i}"),
                    layers[i - 1].output_dim(),
                    layer.input_dim(),
                ));
            }
        }
        Ok(MlpModel { layers, dropout })
    }

    pub fn layers(&self) -> &[DenseLayer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<F>] {
        &mut self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].input_dim())
            .chain(self.layers.iter().map(|l| l.output_dim()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Forward pass. With `training` set, dropout masks are drawn from `rng`;
    /// otherwise dropout is a no-op and `rng` is untouched.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<F>,
        training: bool,
        rng: &mut R,
    ) -> Result<Array2<F>> {
        if training {
            Ok(self.forward_trace(batch, Some(rng))?.0)
        } else {
            self.predict(batch)
        }
    }

    /// Evaluation-mode forward pass.
    pub fn predict(&self, batch: ArrayView2<F>) -> Result<Array2<F>> {
        self.predict_layers(batch, self.layers.len())
    }

    /// Output of the first `n_layers` layers (e.g. the bottleneck of an
    /// autoencoder), evaluation mode.
    pub fn predict_layers(&self, batch: ArrayView2<F>, n_layers: usize) -> Result<Array2<F>> {
        if n_layers == 0 || n_layers > self.layers.len() {
            return Err(Error::Argument(format!(
                "cannot truncate a {}-layer network to {n_layers} layers",
                self.layers.len()
            )));
        }
        self.check_input(batch)?;
        let mut act = batch.to_owned();
        for layer in &self.layers[..n_layers] {
            act = layer.pre_activation(act.view());
            layer.activation.apply(&mut act);
        }
        Ok(act)
    }

    /// Runs layers `first..` on inputs to layer `first`, evaluation mode.
    pub fn predict_from(&self, batch: ArrayView2<F>, first: usize) -> Result<Array2<F>> {
        let Some(layer) = self.layers.get(first) else {
            return Err(Error::Argument(format!(
                "layer {first} out of range for a {}-layer network",
                self.layers.len()
            )));
        };
        if batch.ncols() != layer.input_dim() {
            return Err(Error::shape(format!("input of layer {first}"), layer.input_dim(), batch.ncols()));
        }
        let mut act = batch.to_owned();
        for layer in &self.layers[first..] {
            act = layer.pre_activation(act.view());
            layer.activation.apply(&mut act);
        }
        Ok(act)
    }

    fn check_input(&self, batch: ArrayView2<F>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::shape("input of layer 0", self.input_dim(), batch.ncols()));
        }
        Ok(())
    }

    /// Training-mode forward pass that records what backpropagation needs.
    /// Passing `None` disables dropout.
    pub fn forward_trace<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<F>,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Array2<F>, ForwardTrace<F>)> {
        self.check_input(batch)?;
        let n = self.layers.len();
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut act = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(act.view());
            let mut out = z.clone();
            layer.activation.apply(&mut out);
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if self.dropout > 0.0 && i + 1 < n => {
                    let keep = 1.0 - self.dropout;
                    let scale = F::from_f64_lossy(1.0 / keep);
                    let mask = Array2::from_shape_simple_fn(out.raw_dim(), || {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            F::zero()
                        }
                    });
                    out *= &mask;
                    Some(mask)
                }
                _ => None,
            };
            trace.inputs.push(std::mem::replace(&mut act, out));
            trace.pre_activations.push(z);
            trace.masks.push(mask);
        }
        Ok((act, trace))
    }

    /// Backpropagates `grad_output` (dLoss/dOutput) through the trace.
    /// Returns per-layer (dW, db).
    pub fn backward(
        &self,
        trace: &ForwardTrace<F>,
        grad_output: Array2<F>,
    ) -> Vec<(Array2<F>, Array1<F>)> {
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = grad_output;
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            if layer.activation == Activation::Relu {
                Zip::from(&mut delta)
                    .and(&trace.pre_activations[i])
                    .for_each(|d, &z| {
                        if z <= F::zero() {
                            *d = F::zero();
                        }
                    });
            }
            let dw = delta.t().dot(&trace.inputs[i]);
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&layer.weights);
                if let Some(mask) = &trace.masks[i - 1] {
                    prev *= mask;
                }
                delta = prev;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        grads
    }

    pub fn cast<G: Real>(&self) -> MlpModel<G> {
        MlpModel {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: l.weights.mapv(|v| G::from_f64_lossy(v.to_f64_lossy())),
                    bias: l.bias.mapv(|v| G::from_f64_lossy(v.to_f64_lossy())),
                    activation: l.activation,
                })
                .collect(),
            dropout: self.dropout,
        }
    }
}

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse_with_grad<F: Real>(pred: &Array2<F>, target: ArrayView2<F>) -> (F, Array2<F>) {
    let count = F::from_usize(pred.len().max(1)).unwrap();
    let mut diff = pred - &target;
    let loss = diff.iter().map(|&d| d * d).sum::<F>() / count;
    let scale = F::from_f64_lossy(2.0) / count;
    diff.mapv_inplace(|d| d * scale);
    (loss, diff)
}

pub fn mse<F: Real>(pred: &Array2<F>, target: ArrayView2<F>) -> F {
    let count = F::from_usize(pred.len().max(1)).unwrap();
    pred.iter()
        .zip(target.iter())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<F>()
        / count
}

impl<F: Real> Objective<F> for MlpModel<F> {
    fn parameters(&self) -> Vec<&[F]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [F]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn loss_and_grad(
        &self,
        inputs: ArrayView2<F>,
        targets: ArrayView2<F>,
        dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> Result<(F, Vec<Vec<F>>)> {
        let (out, trace) = self.forward_trace(inputs, dropout_rng)?;
        if out.dim() != targets.dim() {
            return Err(Error::shape(
                "regression targets",
                format!("{:?}", out.dim()),
                format!("{:?}", targets.dim()),
            ));
        }
        let (loss, grad) = mse_with_grad(&out, targets);
        let grads = self
            .backward(&trace, grad)
            .into_iter()
            .flat_map(|(dw, db)| [into_flat(dw), db.to_vec()])
            .collect();
        Ok((loss, grads))
    }

    fn eval_loss(&self, inputs: ArrayView2<F>, targets: ArrayView2<F>) -> Result<F> {
        let out = self.predict(inputs)?;
        if out.dim() != targets.dim() {
            return Err(Error::shape(
                "regression targets",
                format!("{:?}", out.dim()),
                format!("{:?}", targets.dim()),
            ));
        }
        Ok(mse(&out, targets))
    }
}

pub(crate) fn into_flat<F: Real>(a: Array2<F>) -> Vec<F> {
    if a.is_standard_layout() {
        let (v, offset) = a.into_raw_vec_and_offset();
        debug_assert_eq!(offset.unwrap_or(0), 0);
        v
    } else {
        a.iter().copied().collect()
    }
}
