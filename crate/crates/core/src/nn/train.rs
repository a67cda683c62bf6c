use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::mlp::MlpModel;
use super::objective::Objective;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub early_stopping_patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.0,
            dropout: 0.0,
            batch_size: 128,
            max_epochs: 100,
            early_stopping_patience: Some(20),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if let Some(p) = self.early_stopping_patience {
            if p == 0 || p > self.max_epochs {
                return bad(format!(
                    "early_stopping_patience must be in 1..={}, got {p}",
                    self.max_epochs
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation loss, or the training loss when no validation set exists.
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Data split passed to [`fit`]: inputs and regression targets.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a, F> {
    pub inputs: ArrayView2<'a, F>,
    pub targets: ArrayView2<'a, F>,
}

impl<'a, F> Split<'a, F> {
    pub fn new(inputs: ArrayView2<'a, F>, targets: ArrayView2<'a, F>) -> Self {
        Split { inputs, targets }
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.inputs.nrows() != self.targets.nrows() {
            return Err(Error::shape(
                format!("{what} rows"),
                self.inputs.nrows(),
                self.targets.nrows(),
            ));
        }
        if self.inputs.nrows() == 0 {
            return Err(Error::Argument(format!("{what} set is empty")));
        }
        Ok(())
    }
}

/// Mini-batch Adam with L2 weight decay folded into the gradient and
/// early stopping on the validation loss. The sample order is reshuffled
/// every epoch from the seeded stream, which also drives dropout.
pub fn fit<F: Real, O: Objective<F>>(
    mut model: O,
    train: Split<'_, F>,
    val: Option<Split<'_, F>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<O>> {
    cfg.validate()?;
    train.check("training")?;
    if let Some(v) = &val {
        v.check("validation")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::<F>::new(&shapes, cfg.learning_rate);
    let wd = F::from_f64_lossy(cfg.weight_decay);

    let n = train.inputs.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.inputs.select(Axis(0), chunk);
            let y = train.targets.select(Axis(0), chunk);
            let (loss, mut grads) = model.loss_and_grad(x.view(), y.view(), Some(&mut rng))?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            if cfg.weight_decay > 0.0 {
                for (g, p) in grads.iter_mut().zip(model.parameters()) {
                    for (gi, &pi) in g.iter_mut().zip(p) {
                        *gi += wd * pi;
                    }
                }
            }
            adam.step(model.parameters_mut(), &grads);
        }
        let train_loss = loss_sum / n as f64;
        let val_loss = match &val {
            Some(v) => model.eval_loss(v.inputs, v.targets)?.to_f64_lossy(),
            None => train_loss,
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        if cfg.early_stopping_patience.is_some_and(|p| since_best >= p) {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        model: best.1,
        history,
        best_epoch: best.2,
        stopped_early,
    })
}

/// Trains `model` on MSE regression. The model's dropout rate is replaced
/// by `cfg.dropout`.
pub fn train_regression<F: Real>(
    model: MlpModel<F>,
    train: Split<'_, F>,
    val: Split<'_, F>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<MlpModel<F>>> {
    let model = MlpModel::from_layers(model.layers().to_vec(), cfg.dropout)?;
    fit(model, train, Some(val), cfg)
}
