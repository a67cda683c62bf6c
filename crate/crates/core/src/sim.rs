//! Simulated hierarchical count data with retained generative variables.
//!
//! Large simulation, per sample `c`:
//!
//! ```text
//! x   ~ X,            X_j ~ Poisson(1.1 · j)          (j = 1..dim_X)
//! x'  = x + b_c,      b_c = B_g, g ~ Cat(1/G),  B_g ~ Normal(g, 0.1)
//! x'' = x' ⊙ a_c,     a_c = row l of A, l ~ Cat(1/L), a_lj ~ Bernoulli(0.3)
//! y   = M x'',        m_ij ~ Bernoulli(0.1)
//! ```
//!
//! The batch offset `B_g` is one draw per sample, broadcast over all latent
//! dimensions. The small simulation multiplies three Bernoulli variables
//! (p = 0.5, 0.1, 0.9) by one Poisson(2) draw per sample and maps them
//! through a 5 × 3 connectivity matrix.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, read_matrix, write_json, write_matrix, LabeledMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_genes: usize,
    pub dim_x: usize,
    pub n_celltypes: usize,
    pub n_batches: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// `X_j ~ Poisson(poisson_slope · j)`.
    pub poisson_slope: f64,
    pub noise_sigma: f64,
    /// When false, `b_c ≡ 0`.
    pub noise: bool,
    pub p_activity: f64,
    pub p_connect: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_genes: 20000,
            dim_x: 100,
            n_celltypes: 40,
            n_batches: 3,
            n_train: 90000,
            n_val: 10000,
            seed: 0,
            poisson_slope: 1.1,
            noise_sigma: 0.1,
            noise: true,
            p_activity: 0.3,
            p_connect: 0.1,
        }
    }
}

impl SimConfig {
    /// Reduced large simulation that fits on a workstation.
    pub fn desk(seed: u64) -> Self {
        SimConfig {
            n_genes: 2000,
            dim_x: 50,
            n_celltypes: 20,
            n_train: 18000,
            n_val: 2000,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_genes", self.n_genes),
            ("dim_x", self.dim_x),
            ("n_celltypes", self.n_celltypes),
            ("n_batches", self.n_batches),
            ("n_train", self.n_train),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, p) in [("p_activity", self.p_activity), ("p_connect", self.p_connect)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be a probability, got {p}")));
            }
        }
        if !(self.poisson_slope > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("poisson_slope must be > 0 and noise_sigma >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Large,
    Small,
}

/// Observed counts plus every hidden variable of the generative process.
/// Rows are samples; the first `n_train` rows form the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub kind: SimKind,
    pub y: Array2<f32>,
    pub x: Array2<f32>,
    pub x_prime: Array2<f32>,
    pub x_dblprime: Array2<f32>,
    /// Cell-type activity row `a_c` per sample (the Poisson scale for the
    /// small simulation).
    pub a_vec: Array2<f32>,
    /// Batch offset `b_c` per sample.
    pub b_vec: Array2<f32>,
    pub cell_type: Vec<usize>,
    pub batch_label: Vec<usize>,
    /// Connectivity, genes × latent programs.
    pub m: Array2<f32>,
    /// Activity matrix, cell types × latent programs.
    pub a_mat: Array2<f32>,
    pub n_train: usize,
    pub n_val: usize,
}

/// Names under which variables are stored and reported.
pub const VARIABLE_NAMES: [&str; 6] = ["X", "X_prime", "X_dblprime", "A", "B", "Y"];

/// `Y = X'' Mᵀ`, accumulated in `f64` over programs in ascending order and
/// rounded once.
pub fn generate_counts(x_dblprime: ArrayView2<f32>, m: ArrayView2<f32>) -> Array2<f32> {
    let connected: Vec<Vec<usize>> = m
        .rows()
        .into_iter()
        .map(|row| row.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, _)| j).collect())
        .collect();
    let mut y = Array2::zeros((x_dblprime.nrows(), m.nrows()));
    for (mut yrow, xrow) in y.rows_mut().into_iter().zip(x_dblprime.rows()) {
        for (g, js) in connected.iter().enumerate() {
            let mut acc = 0.0f64;
            for &j in js {
                acc += m[[g, j]] as f64 * xrow[j] as f64;
            }
            yrow[g] = acc as f32;
        }
    }
    y
}

fn bernoulli_matrix<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Array2<f32> {
    let dist = Bernoulli::new(p).expect("validated probability");
    Array2::from_shape_simple_fn((rows, cols), || if dist.sample(rng) { 1.0 } else { 0.0 })
}

pub fn simulate_large(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_train + cfg.n_val;
    let d = cfg.dim_x;

    let a_mat = bernoulli_matrix(cfg.n_celltypes, d, cfg.p_activity, &mut rng);
    let m = bernoulli_matrix(cfg.n_genes, d, cfg.p_connect, &mut rng);
    let poissons: Vec<Poisson<f64>> = (1..=d)
        .map(|j| Poisson::new(cfg.poisson_slope * j as f64).expect("positive rate"))
        .collect();
    let noises: Vec<Normal<f64>> = (1..=cfg.n_batches)
        .map(|g| Normal::new(g as f64, cfg.noise_sigma).expect("valid sigma"))
        .collect();

    let mut x = Array2::zeros((n, d));
    let mut b_vec = Array2::zeros((n, d));
    let mut a_vec = Array2::zeros((n, d));
    let mut cell_type = Vec::with_capacity(n);
    let mut batch_label = Vec::with_capacity(n);
    for i in 0..n {
        let batch = rng.random_range(0..cfg.n_batches);
        let ct = rng.random_range(0..cfg.n_celltypes);
        for j in 0..d {
            x[[i, j]] = poissons[j].sample(&mut rng) as f32;
        }
        let offset = noises[batch].sample(&mut rng) as f32;
        if cfg.noise {
            b_vec.row_mut(i).fill(offset);
        }
        a_vec.row_mut(i).assign(&a_mat.row(ct));
        cell_type.push(ct);
        batch_label.push(batch);
    }
    let x_prime = &x + &b_vec;
    let x_dblprime = &x_prime * &a_vec;
    let y = generate_counts(x_dblprime.view(), m.view());
    Ok(SimDataset {
        kind: SimKind::Large,
        y,
        x,
        x_prime,
        x_dblprime,
        a_vec,
        b_vec,
        cell_type,
        batch_label,
        m,
        a_mat,
        n_train: cfg.n_train,
        n_val: cfg.n_val,
    })
}

pub const SMALL_PROBABILITIES: [f64; 3] = [0.5, 0.1, 0.9];
pub const SMALL_GENES: usize = 5;

pub fn simulate_small(n_train: usize, n_val: usize, seed: u64) -> Result<SimDataset> {
    if n_train == 0 {
        return Err(Error::Config("n_train must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_train + n_val;
    let d = SMALL_PROBABILITIES.len();
    let m = bernoulli_matrix(SMALL_GENES, d, 0.1, &mut rng);
    let scale = Poisson::new(2.0).expect("positive rate");
    let coins: Vec<Bernoulli> = SMALL_PROBABILITIES
        .iter()
        .map(|&p| Bernoulli::new(p).expect("probability"))
        .collect();

    let mut x = Array2::zeros((n, d));
    let mut a_vec = Array2::zeros((n, d));
    for i in 0..n {
        for (j, coin) in coins.iter().enumerate() {
            x[[i, j]] = if coin.sample(&mut rng) { 1.0 } else { 0.0 };
        }
        let a = scale.sample(&mut rng) as f32;
        a_vec.row_mut(i).fill(a);
    }
    let x_prime = &x * &a_vec;
    let y = generate_counts(x_prime.view(), m.view());
    Ok(SimDataset {
        kind: SimKind::Small,
        y,
        x,
        x_dblprime: x_prime.clone(),
        x_prime,
        a_vec,
        b_vec: Array2::zeros((n, d)),
        cell_type: vec![0; n],
        batch_label: vec![0; n],
        m,
        a_mat: Array2::ones((1, d)),
        n_train,
        n_val,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimMetadata {
    pub kind: SimKind,
    pub config: Option<SimConfig>,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub cell_type: Vec<usize>,
    pub batch_label: Vec<usize>,
}

impl SimDataset {
    pub fn n_samples(&self) -> usize {
        self.y.nrows()
    }

    pub fn train_rows<'a>(&self, m: &'a Array2<f32>) -> ArrayView2<'a, f32> {
        m.slice(s![..self.n_train, ..])
    }

    pub fn val_rows<'a>(&self, m: &'a Array2<f32>) -> ArrayView2<'a, f32> {
        m.slice(s![self.n_train.., ..])
    }

    pub fn variable(&self, name: &str) -> Option<&Array2<f32>> {
        match name {
            "X" => Some(&self.x),
            "X_prime" => Some(&self.x_prime),
            "X_dblprime" => Some(&self.x_dblprime),
            "A" => Some(&self.a_vec),
            "B" => Some(&self.b_vec),
            "Y" => Some(&self.y),
            _ => None,
        }
    }

    /// Largest absolute deviation from `Y = X'' Mᵀ`.
    pub fn generative_residual(&self) -> f32 {
        let y = generate_counts(self.x_dblprime.view(), self.m.view());
        (&y - &self.y).iter().fold(0.0f32, |acc, v| acc.max(v.abs()))
    }

    /// Programs (columns of `M`) that regulate no gene.
    pub fn empty_programs(&self) -> Vec<usize> {
        self.m
            .axis_iter(Axis(1))
            .enumerate()
            .filter(|(_, col)| col.iter().all(|&v| v == 0.0))
            .map(|(j, _)| j)
            .collect()
    }

    /// Column rank of `M`; when it equals the latent width, `X''` is a
    /// linear function of `Y`.
    pub fn connectivity_rank(&self) -> usize {
        let m = nalgebra::DMatrix::from_fn(self.m.nrows(), self.m.ncols(), |i, j| self.m[[i, j]] as f64);
        m.rank(1e-9)
    }

    pub fn write_dir(&self, dir: &Path, config: Option<&SimConfig>, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let genes: Vec<String> = (0..self.y.ncols()).map(|g| format!("gene{g}")).collect();
        let programs: Vec<String> = (0..self.m.ncols()).map(|j| format!("x{j}")).collect();
        let samples: Vec<String> = (0..self.n_samples()).map(|i| format!("s{i}")).collect();
        write_matrix(
            &dir.join("Y.saem"),
            &LabeledMatrix::new(self.y.clone())
                .with_col_ids(genes.clone())
                .with_row_ids(samples),
        )?;
        for name in &VARIABLE_NAMES[..5] {
            let data = self.variable(name).expect("known variable").clone();
            write_matrix(
                &dir.join(format!("{name}.saem")),
                &LabeledMatrix::new(data).with_col_ids(programs.clone()),
            )?;
        }
        write_matrix(
            &dir.join("M.saem"),
            &LabeledMatrix::new(self.m.clone())
                .with_row_ids(genes)
                .with_col_ids(programs),
        )?;
        write_matrix(&dir.join("A_mat.saem"), &LabeledMatrix::new(self.a_mat.clone()))?;
        write_json(
            &dir.join("sim.json"),
            &SimMetadata {
                kind: self.kind,
                config: config.cloned(),
                seed,
                n_train: self.n_train,
                n_val: self.n_val,
                cell_type: self.cell_type.clone(),
                batch_label: self.batch_label.clone(),
            },
        )
    }

    pub fn read_dir(dir: &Path) -> Result<SimDataset> {
        let meta: SimMetadata = read_json(&dir.join("sim.json"))?;
        let load = |name: &str| -> Result<Array2<f32>> { Ok(read_matrix(&dir.join(format!("{name}.saem")))?.data) };
        let ds = SimDataset {
            kind: meta.kind,
            y: load("Y")?,
            x: load("X")?,
            x_prime: load("X_prime")?,
            x_dblprime: load("X_dblprime")?,
            a_vec: load("A")?,
            b_vec: load("B")?,
            cell_type: meta.cell_type,
            batch_label: meta.batch_label,
            m: load("M")?,
            a_mat: load("A_mat")?,
            n_train: meta.n_train,
            n_val: meta.n_val,
        };
        if ds.n_samples() != ds.n_train + ds.n_val || ds.cell_type.len() != ds.n_samples() {
            return Err(Error::Format(format!(
                "{}: sample counts disagree with sim.json",
                dir.display()
            )));
        }
        Ok(ds)
    }
}
