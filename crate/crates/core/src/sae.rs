//! Sparse autoencoders: vanilla, pre-bias and top-k variants.
//!
//! ```text
//! vanilla   z = ReLU(W_enc x + b_enc)             x̂ = W_dec z + b_dec
//! pre-bias  z = ReLU(W_enc (x − b_pre) + b_enc)   x̂ = W_dec z + b_pre
//! top-k     z = TopK(ReLU(W_enc x + b_enc))       x̂ = W_dec z + b_dec
//! loss      mean_batch ‖x − x̂‖² + λ ‖z‖₁          (no λ term for top-k)
//! ```
//!
//! For the pre-bias variant the decoder bias doubles as `b_pre`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::binary::{read_exact_or, ByteReader, ByteWriter};
use crate::nn::{fit, glorot_uniform, into_flat, Objective, Real, Split, TrainConfig, TrainOutcome};
use crate::stats::{correlation_matrix, standardize_columns};

/// Activations at or below this value count as silent.
pub const ACTIVITY_THRESHOLD: f64 = 1e-10;
/// Pearson correlation at which two signals count as the same.
pub const MATCH_CORRELATION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
pub enum SaeVariant {
    Vanilla { l1_weight: f64 },
    #[serde(rename = "prebias")]
    PreBias { l1_weight: f64 },
    #[serde(rename = "topk")]
    TopK { k: usize },
}

impl SaeVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SaeVariant::Vanilla { .. } => "vanilla",
            SaeVariant::PreBias { .. } => "prebias",
            SaeVariant::TopK { .. } => "topk",
        }
    }

    pub fn l1_weight(&self) -> f64 {
        match *self {
            SaeVariant::Vanilla { l1_weight } | SaeVariant::PreBias { l1_weight } => l1_weight,
            SaeVariant::TopK { .. } => 0.0,
        }
    }

    fn validate(&self, hidden: usize) -> Result<()> {
        match *self {
            SaeVariant::TopK { k } if k == 0 || k > hidden => Err(Error::Config(format!(
                "top-k needs 1 <= k <= hidden ({hidden}), got {k}"
            ))),
            SaeVariant::Vanilla { l1_weight } | SaeVariant::PreBias { l1_weight }
                if !(l1_weight >= 0.0 && l1_weight.is_finite()) =>
            {
                Err(Error::Config(format!("l1_weight must be >= 0, got {l1_weight}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseAutoencoder<F = f32> {
    /// hidden × input
    pub w_enc: Array2<F>,
    pub b_enc: Array1<F>,
    /// input × hidden
    pub w_dec: Array2<F>,
    pub b_dec: Array1<F>,
    pub variant: SaeVariant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaeLoss<F> {
    pub total: F,
    pub mse: F,
    pub sparsity: F,
}

impl<F: Real> SparseAutoencoder<F> {
    /// Glorot-initialised encoder, decoder set to the encoder transpose,
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, variant: SaeVariant, rng: &mut R) -> Result<Self> {
        let w_enc: Array2<F> = glorot_uniform(hidden, input, rng);
        let w_dec = w_enc.t().as_standard_layout().into_owned();
        Self::from_parts(w_enc, Array1::zeros(hidden), w_dec, Array1::zeros(input), variant)
    }

    pub fn from_parts(
        w_enc: Array2<F>,
        b_enc: Array1<F>,
        w_dec: Array2<F>,
        b_dec: Array1<F>,
        variant: SaeVariant,
    ) -> Result<Self> {
        let (hidden, input) = w_enc.dim();
        if input == 0 || hidden < input {
            return Err(Error::Argument(format!(
                "a sparse autoencoder needs hidden >= input > 0, got hidden {hidden}, input {input}"
            )));
        }
        if b_enc.len() != hidden {
            return Err(Error::shape("encoder bias", hidden, b_enc.len()));
        }
        if w_dec.dim() != (input, hidden) {
            return Err(Error::shape("decoder weights (rows)", input, w_dec.nrows()));
        }
        if b_dec.len() != input {
            return Err(Error::shape("decoder bias", input, b_dec.len()));
        }
        variant.validate(hidden)?;
        Ok(SparseAutoencoder {
            w_enc: w_enc.as_standard_layout().into_owned(),
            b_enc,
            w_dec: w_dec.as_standard_layout().into_owned(),
            b_dec,
            variant,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn pre_bias(&self) -> Option<&Array1<F>> {
        matches!(self.variant, SaeVariant::PreBias { .. }).then_some(&self.b_dec)
    }

    fn check_input(&self, x: ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape("sparse autoencoder input", self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    /// Encoder input after the optional pre-bias shift.
    fn shifted(&self, x: ArrayView2<F>) -> Array2<F> {
        match self.pre_bias() {
            Some(b) => &x - b,
            None => x.to_owned(),
        }
    }

    pub fn encode(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(x)?;
        let mut z = self.shifted(x).dot(&self.w_enc.t()) + &self.b_enc;
        z.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        if let SaeVariant::TopK { k } = self.variant {
            keep_top_k(&mut z, k);
        }
        Ok(z)
    }

    pub fn decode(&self, z: ArrayView2<F>) -> Result<Array2<F>> {
        if z.ncols() != self.hidden_dim() {
            return Err(Error::shape("sparse autoencoder code", self.hidden_dim(), z.ncols()));
        }
        Ok(z.dot(&self.w_dec.t()) + &self.b_dec)
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<(Array2<F>, Array2<F>)> {
        let z = self.encode(x)?;
        let xhat = self.decode(z.view())?;
        Ok((z, xhat))
    }

    pub fn loss(&self, x: ArrayView2<F>) -> Result<SaeLoss<F>> {
        let (z, xhat) = self.forward(x)?;
        Ok(self.loss_terms(x, &z, &xhat))
    }

    fn loss_terms(&self, x: ArrayView2<F>, z: &Array2<F>, xhat: &Array2<F>) -> SaeLoss<F> {
        let b = F::from_usize(x.nrows().max(1)).unwrap();
        let mse = Zip::from(xhat).and(x).fold(F::zero(), |acc, &p, &t| acc + (p - t) * (p - t)) / b;
        let lambda = F::from_f64_lossy(self.variant.l1_weight());
        let sparsity = if lambda > F::zero() {
            lambda * z.iter().map(|v| v.abs()).sum::<F>() / b
        } else {
            F::zero()
        };
        SaeLoss {
            total: mse + sparsity,
            mse,
            sparsity,
        }
    }

    /// Loss terms and gradients in parameter order
    /// `[W_enc, b_enc, W_dec, b_dec]`.
    pub fn loss_with_grad(&self, x: ArrayView2<F>) -> Result<(SaeLoss<F>, Vec<Vec<F>>)> {
        let (z, xhat) = self.forward(x)?;
        let loss = self.loss_terms(x, &z, &xhat);
        let b = F::from_usize(x.nrows().max(1)).unwrap();
        let two = F::from_f64_lossy(2.0);
        let g_out = (&xhat - &x).mapv(|d| two * d / b);
        let dw_dec = g_out.t().dot(&z);
        let mut db_dec = g_out.sum_axis(Axis(0));

        let l1 = F::from_f64_lossy(self.variant.l1_weight()) / b;
        let mut delta = g_out.dot(&self.w_dec);
        Zip::from(&mut delta).and(&z).for_each(|d, &zv| {
            *d = if zv > F::zero() { *d + l1 } else { F::zero() };
        });
        let shifted = self.shifted(x);
        let dw_enc = delta.t().dot(&shifted);
        let db_enc = delta.sum_axis(Axis(0));
        if self.pre_bias().is_some() {
            db_dec -= &delta.dot(&self.w_enc).sum_axis(Axis(0));
        }
        let grads = vec![
            into_flat(dw_enc),
            db_enc.to_vec(),
            into_flat(dw_dec),
            db_dec.to_vec(),
        ];
        Ok((loss, grads))
    }

    pub fn cast<G: Real>(&self) -> SparseAutoencoder<G> {
        let c = |v: &F| G::from_f64_lossy(v.to_f64_lossy());
        SparseAutoencoder {
            w_enc: self.w_enc.map(c),
            b_enc: self.b_enc.map(c),
            w_dec: self.w_dec.map(c),
            b_dec: self.b_dec.map(c),
            variant: self.variant,
        }
    }
}

/// Keeps the `k` largest entries of each row and zeroes the rest; ties at
/// the cut keep the lower index.
fn keep_top_k<F: Real>(z: &mut Array2<F>, k: usize) {
    let hidden = z.ncols();
    if k >= hidden {
        return;
    }
    let mut order: Vec<usize> = (0..hidden).collect();
    for mut row in z.rows_mut() {
        order.sort_unstable_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &j in &order[k..] {
            row[j] = F::zero();
        }
        order.sort_unstable();
    }
}

impl<F: Real> Objective<F> for SparseAutoencoder<F> {
    fn parameters(&self) -> Vec<&[F]> {
        vec![
            self.w_enc.as_slice().expect("standard layout"),
            self.b_enc.as_slice().expect("standard layout"),
            self.w_dec.as_slice().expect("standard layout"),
            self.b_dec.as_slice().expect("standard layout"),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.w_enc.as_slice_mut().expect("standard layout"),
            self.b_enc.as_slice_mut().expect("standard layout"),
            self.w_dec.as_slice_mut().expect("standard layout"),
            self.b_dec.as_slice_mut().expect("standard layout"),
        ]
    }

    fn loss_and_grad(
        &self,
        inputs: ArrayView2<F>,
        _targets: ArrayView2<F>,
        _dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(F, Vec<Vec<F>>)> {
        let (loss, grads) = self.loss_with_grad(inputs)?;
        Ok((loss.total, grads))
    }

    fn eval_loss(&self, inputs: ArrayView2<F>, _targets: ArrayView2<F>) -> Result<F> {
        Ok(self.loss(inputs)?.total)
    }
}

/// Trains on embeddings `train`, early-stopping on `val` when given.
pub fn train_sae(
    sae: SparseAutoencoder<f32>,
    train: ArrayView2<f32>,
    val: Option<ArrayView2<f32>>,
    cfg: &TrainConfig,
) -> Result<(SparseAutoencoder<f32>, TrainOutcome<()>)> {
    let out = fit(sae, Split::new(train, train), val.map(|v| Split::new(v, v)), cfg)?;
    let stats = TrainOutcome {
        model: (),
        history: out.history,
        best_epoch: out.best_epoch,
        stopped_early: out.stopped_early,
    };
    Ok((out.model, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMatch {
    pub variable: String,
    pub column: usize,
    /// Neurons correlated with this column at `MATCH_CORRELATION` or more.
    pub n_matching: usize,
    pub max_pearson: f64,
    pub best_neuron: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeMetrics {
    pub n_neurons: usize,
    pub n_active: usize,
    pub n_redundant: usize,
    pub avg_firing_per_sample: f64,
    pub matches: Vec<ColumnMatch>,
}

impl SaeMetrics {
    /// Columns of `variable` with at least one matching neuron.
    pub fn recovered_columns(&self, variable: &str) -> usize {
        self.matches
            .iter()
            .filter(|m| m.variable == variable && m.n_matching > 0)
            .count()
    }
}

/// Neurons whose maximum activation exceeds `ACTIVITY_THRESHOLD`.
pub fn active_neurons(z: ArrayView2<f32>) -> Vec<usize> {
    z.axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, col)| col.iter().any(|&v| v as f64 > ACTIVITY_THRESHOLD))
        .map(|(j, _)| j)
        .collect()
}

/// Sweep metrics computed from activations `z` (samples × neurons) and
/// named reference variables with the same rows.
pub fn activation_metrics(z: ArrayView2<f32>, variables: &[(&str, ArrayView2<f32>)]) -> Result<SaeMetrics> {
    for (name, v) in variables {
        if v.nrows() != z.nrows() {
            return Err(Error::shape(format!("rows of variable {name}"), z.nrows(), v.nrows()));
        }
    }
    let n = z.nrows();
    let active = active_neurons(z);
    let firing: usize = z.iter().filter(|&&v| v as f64 > ACTIVITY_THRESHOLD).count();
    let avg_firing_per_sample = if n == 0 { 0.0 } else { firing as f64 / n as f64 };

    let live = z.select(Axis(1), &active);
    let std_live = standardize_columns(live.view());
    let corr = std_live.t().dot(&std_live);
    let n_redundant = (0..active.len())
        .filter(|&j| (0..j).any(|i| corr[[i, j]] >= MATCH_CORRELATION))
        .count();

    let mut matches = Vec::new();
    for (name, v) in variables {
        let c = correlation_matrix(z, *v);
        for col in 0..v.ncols() {
            let scores = c.column(col);
            let n_matching = scores.iter().filter(|&&r| r >= MATCH_CORRELATION).count();
            let best = scores
                .iter()
                .enumerate()
                .fold(None::<(usize, f64)>, |acc, (j, &r)| match acc {
                    Some((_, b)) if b >= r => acc,
                    _ => Some((j, r)),
                });
            matches.push(ColumnMatch {
                variable: name.to_string(),
                column: col,
                n_matching,
                max_pearson: best.map_or(0.0, |b| b.1),
                best_neuron: best.map(|b| b.0),
            });
        }
    }
    Ok(SaeMetrics {
        n_neurons: z.ncols(),
        n_active: active.len(),
        n_redundant,
        avg_firing_per_sample,
        matches,
    })
}

pub fn sae_metrics(
    sae: &SparseAutoencoder<f32>,
    embeddings: ArrayView2<f32>,
    variables: &[(&str, ArrayView2<f32>)],
) -> Result<SaeMetrics> {
    let z = sae.encode(embeddings)?;
    activation_metrics(z.view(), variables)
}

pub const SAE_MAGIC: &[u8; 4] = b"SAE1";

/// `SAE1` checkpoint: magic, `u8` variant (0 vanilla, 1 pre-bias, 2 top-k),
/// `f32` λ, `u32` k, `u32` input, `u32` hidden, then `W_enc`, `b_enc`,
/// `W_dec`, `b_dec` as row-major little-endian `f32`.
pub fn write_sae<W: Write>(sae: &SparseAutoencoder<f32>, out: W) -> Result<()> {
    let mut w = ByteWriter::new(out);
    w.bytes(SAE_MAGIC)?;
    let (flag, k) = match sae.variant {
        SaeVariant::Vanilla { .. } => (0u8, 0u32),
        SaeVariant::PreBias { .. } => (1, 0),
        SaeVariant::TopK { k } => (2, k as u32),
    };
    w.u8(flag)?;
    w.f32(sae.variant.l1_weight() as f32)?;
    w.u32(k)?;
    w.u32(sae.input_dim() as u32)?;
    w.u32(sae.hidden_dim() as u32)?;
    w.f32s(sae.w_enc.iter().copied())?;
    w.f32s(sae.b_enc.iter().copied())?;
    w.f32s(sae.w_dec.iter().copied())?;
    w.f32s(sae.b_dec.iter().copied())?;
    w.finish()
}

pub fn read_sae<R: Read>(input: R) -> Result<SparseAutoencoder<f32>> {
    let mut r = ByteReader::new(input);
    let magic: [u8; 4] = read_exact_or(&mut r, "magic")?;
    if &magic != SAE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected SAE1",
            String::from_utf8_lossy(&magic)
        )));
    }
    let flag = r.u8()?;
    let l1_weight = r.f32()? as f64;
    let k = r.u32()? as usize;
    let variant = match flag {
        0 => SaeVariant::Vanilla { l1_weight },
        1 => SaeVariant::PreBias { l1_weight },
        2 => SaeVariant::TopK { k },
        other => return Err(Error::Format(format!("unknown SAE variant flag {other}"))),
    };
    let input = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
    let w_enc = Array2::from_shape_vec((hidden, input), r.f32s(hidden * input)?).map_err(shape_err)?;
    let b_enc = Array1::from(r.f32s(hidden)?);
    let w_dec = Array2::from_shape_vec((input, hidden), r.f32s(input * hidden)?).map_err(shape_err)?;
    let b_dec = Array1::from(r.f32s(input)?);
    SparseAutoencoder::from_parts(w_enc, b_enc, w_dec, b_dec, variant)
}

pub fn save_sae(sae: &SparseAutoencoder<f32>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_sae(sae, std::io::BufWriter::new(file))
}

pub fn load_sae(path: &Path) -> Result<SparseAutoencoder<f32>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_sae(std::io::BufReader::new(file))
}
