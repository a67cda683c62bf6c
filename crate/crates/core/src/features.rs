//! Feature taxonomy, steering, and high/low sample sets.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::{SparseAutoencoder, ACTIVITY_THRESHOLD};
use crate::stats::percentile;

/// `α ≥ SIGNIFICANCE_LEVEL` marks a significant difference.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub count: usize,
}

impl GroupStats {
    pub fn from_values(v: &[f64]) -> Self {
        let (mean, m2) = mean_m2(v);
        GroupStats {
            mean,
            std: if v.len() > 1 { (m2 / (v.len() - 1) as f64).sqrt() } else { 0.0 },
            count: v.len(),
        }
    }
}

fn mean_m2(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean, v.iter().map(|x| (x - mean) * (x - mean)).sum())
}

/// `α = |μ_j − μ_i| − 1.96 (σ_j/√N_j + σ_i/√N_i)`.
pub fn significance_alpha(i: &GroupStats, j: &GroupStats) -> Result<f64> {
    if i.count < 2 || j.count < 2 {
        return Err(Error::Argument(format!(
            "significance needs at least two samples per group, got {} and {}",
            i.count, j.count
        )));
    }
    let se = j.std / (j.count as f64).sqrt() + i.std / (i.count as f64).sqrt();
    Ok((j.mean - i.mean).abs() - Z_95 * se)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "cell_type", rename_all = "lowercase")]
pub enum FeatureStatus {
    Dead,
    Local(usize),
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTaxonomy {
    pub status: Vec<FeatureStatus>,
    /// Sorted distinct cell-type labels; `stats[f][t]` refers to `cell_types[t]`.
    pub cell_types: Vec<usize>,
    pub stats: Vec<Vec<GroupStats>>,
    pub mean_act: Vec<f64>,
    pub max_act: Vec<f64>,
    pub n_active_cells: Vec<usize>,
}

impl FeatureTaxonomy {
    pub fn count(&self, pred: impl Fn(&FeatureStatus) -> bool) -> usize {
        self.status.iter().filter(|s| pred(s)).count()
    }

    pub fn live(&self) -> Vec<usize> {
        (0..self.status.len())
            .filter(|&f| self.status[f] != FeatureStatus::Dead)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("feature_id,status,cell_type,mean_act,max_act,n_active_cells\n");
        for (f, status) in self.status.iter().enumerate() {
            let (name, ct) = match status {
                FeatureStatus::Dead => ("dead", String::new()),
                FeatureStatus::Global => ("global", String::new()),
                FeatureStatus::Local(c) => ("local", c.to_string()),
            };
            out.push_str(&format!(
                "{f},{name},{ct},{},{},{}\n",
                self.mean_act[f], self.max_act[f], self.n_active_cells[f]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Live features whose mean activation strictly increases along
    /// `order` (cell-type labels).
    pub fn monotone_along(&self, order: &[usize]) -> Result<Vec<usize>> {
        let idx = order
            .iter()
            .map(|c| {
                self.cell_types
                    .binary_search(c)
                    .map_err(|_| Error::Argument(format!("unknown cell type {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .live()
            .into_iter()
            .filter(|&f| idx.windows(2).all(|w| self.stats[f][w[0]].mean < self.stats[f][w[1]].mean))
            .collect())
    }
}

fn combine(parts: &[(f64, f64, usize)]) -> GroupStats {
    // Pairwise combination of (mean, M2, n) summaries.
    let (mut mean, mut m2, mut n) = (0.0f64, 0.0f64, 0usize);
    for &(pm, pm2, pn) in parts {
        if pn == 0 {
            continue;
        }
        let total = n + pn;
        let delta = pm - mean;
        mean += delta * pn as f64 / total as f64;
        m2 += pm2 + delta * delta * (n as f64) * (pn as f64) / total as f64;
        n = total;
    }
    GroupStats {
        mean,
        std: if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 },
        count: n,
    }
}

/// Classifies each feature as dead, local to one cell type, or global.
pub fn classify_features(activations: ArrayView2<f32>, cell_type: &[usize]) -> Result<FeatureTaxonomy> {
    if activations.nrows() != cell_type.len() {
        return Err(Error::shape("cell-type labels", activations.nrows(), cell_type.len()));
    }
    let mut types: Vec<usize> = cell_type.to_vec();
    types.sort_unstable();
    types.dedup();
    if types.len() < 2 {
        log::warn!("fewer than two cell types, every live feature is global");
    }
    let members: Vec<Vec<usize>> = types
        .iter()
        .map(|t| (0..cell_type.len()).filter(|&i| cell_type[i] == *t).collect())
        .collect();

    let n_features = activations.ncols();
    let mut tax = FeatureTaxonomy {
        status: Vec::with_capacity(n_features),
        cell_types: types.clone(),
        stats: Vec::with_capacity(n_features),
        mean_act: Vec::with_capacity(n_features),
        max_act: Vec::with_capacity(n_features),
        n_active_cells: Vec::with_capacity(n_features),
    };
    for col in activations.axis_iter(Axis(1)) {
        let values: Vec<f64> = col.iter().map(|&v| v as f64).collect();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let parts: Vec<(f64, f64, usize)> = members
            .iter()
            .map(|idx| {
                let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
                let (m, m2) = mean_m2(&v);
                (m, m2, v.len())
            })
            .collect();
        let stats: Vec<GroupStats> = parts.iter().map(|p| combine(std::slice::from_ref(p))).collect();

        let status = if !(max > ACTIVITY_THRESHOLD) {
            FeatureStatus::Dead
        } else if types.len() < 2 {
            FeatureStatus::Global
        } else {
            let mut significant = Vec::new();
            for t in 0..types.len() {
                let rest: Vec<(f64, f64, usize)> = parts
                    .iter()
                    .enumerate()
                    .filter(|&(u, _)| u != t)
                    .map(|(_, p)| *p)
                    .collect();
                let rest = combine(&rest);
                let own = &stats[t];
                if own.count < 2 || rest.count < 2 || own.mean <= rest.mean {
                    continue;
                }
                if significance_alpha(&rest, own)? >= SIGNIFICANCE_LEVEL {
                    significant.push(types[t]);
                }
            }
            match significant.as_slice() {
                [c] => FeatureStatus::Local(*c),
                _ => FeatureStatus::Global,
            }
        };
        tax.status.push(status);
        tax.stats.push(stats);
        tax.mean_act.push(crate::stats::mean(&values));
        tax.max_act.push(max);
        tax.n_active_cells
            .push(values.iter().filter(|&&v| v > ACTIVITY_THRESHOLD).count());
    }
    Ok(tax)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SteerTarget {
    /// Dataset-wide maximum activation of the feature.
    Max,
    Value(f32),
}

/// Decodes `z` with column `feature` replaced by `column`.
pub fn decode_with_feature(
    sae: &SparseAutoencoder<f32>,
    z: &Array2<f32>,
    feature: usize,
    column: ArrayView1<f32>,
) -> Result<Array2<f32>> {
    if feature >= z.ncols() {
        return Err(Error::Argument(format!("feature {feature} out of range ({})", z.ncols())));
    }
    let mut z = z.clone();
    z.column_mut(feature).assign(&column);
    sae.decode(z.view())
}

/// Sets one feature of every sample's code to `target` and decodes.
pub fn steer_feature(
    sae: &SparseAutoencoder<f32>,
    reps: ArrayView2<f32>,
    feature: usize,
    target: SteerTarget,
) -> Result<Array2<f32>> {
    let z = sae.encode(reps)?;
    if feature >= z.ncols() {
        return Err(Error::Argument(format!("feature {feature} out of range ({})", z.ncols())));
    }
    let max = z.column(feature).iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(max as f64 > ACTIVITY_THRESHOLD) {
        return Err(Error::DeadFeature { feature });
    }
    let value = match target {
        SteerTarget::Max => max,
        SteerTarget::Value(v) => v,
    };
    let column = ndarray::Array1::from_elem(z.nrows(), value);
    decode_with_feature(sae, &z, feature, column.view())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetMode {
    /// 95th / 5th percentile.
    Manual,
    /// 99th percentile against sampled zero-activation cells.
    Automated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighLowConfig {
    pub mode: SetMode,
    pub automated_percentile: f64,
    pub manual_high_percentile: f64,
    pub manual_low_percentile: f64,
    pub low_cap: usize,
    pub seed: u64,
}

impl Default for HighLowConfig {
    fn default() -> Self {
        HighLowConfig {
            mode: SetMode::Automated,
            automated_percentile: 99.0,
            manual_high_percentile: 95.0,
            manual_low_percentile: 5.0,
            low_cap: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    TooFewSamples,
    EmptyStudySet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighLowSets {
    /// Sorted sample indices.
    pub high: Vec<usize>,
    pub low: Vec<usize>,
}

impl HighLowSets {
    pub fn skip_reason(&self) -> Option<SkipReason> {
        (self.high.len() < 2 || self.low.len() < 2).then_some(SkipReason::TooFewSamples)
    }
}

/// Splits samples into high and low sets for one feature. `within`
/// restricts manual mode to a subset of samples (e.g. one cell type), in
/// which case zero activations are left out of the percentile.
pub fn high_low_sets(
    activations: ArrayView2<f32>,
    feature: usize,
    cfg: &HighLowConfig,
    within: Option<&[usize]>,
) -> Result<HighLowSets> {
    if feature >= activations.ncols() {
        return Err(Error::Argument(format!(
            "feature {feature} out of range ({})",
            activations.ncols()
        )));
    }
    let col = activations.column(feature);
    if !col.iter().any(|&v| v as f64 > ACTIVITY_THRESHOLD) {
        return Err(Error::DeadFeature { feature });
    }
    let active = |i: usize| col[i] as f64 > ACTIVITY_THRESHOLD;
    match cfg.mode {
        SetMode::Automated => {
            let values: Vec<f64> = col.iter().map(|&v| v as f64).collect();
            let cut = percentile(&values, cfg.automated_percentile);
            let high: Vec<usize> = (0..values.len()).filter(|&i| active(i) && values[i] >= cut).collect();
            let zeros: Vec<usize> = (0..values.len()).filter(|&i| !active(i)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut low: Vec<usize> = if zeros.len() > cfg.low_cap {
                sample(&mut rng, zeros.len(), cfg.low_cap).into_iter().map(|k| zeros[k]).collect()
            } else {
                zeros
            };
            low.sort_unstable();
            Ok(HighLowSets { high, low })
        }
        SetMode::Manual => {
            let pool: Vec<usize> = match within {
                Some(idx) => idx.iter().copied().filter(|&i| i < col.len() && active(i)).collect(),
                None => (0..col.len()).collect(),
            };
            if pool.is_empty() {
                return Ok(HighLowSets {
                    high: Vec::new(),
                    low: Vec::new(),
                });
            }
            let values: Vec<f64> = pool.iter().map(|&i| col[i] as f64).collect();
            let hi = percentile(&values, cfg.manual_high_percentile);
            let lo = percentile(&values, cfg.manual_low_percentile);
            let mut high = Vec::new();
            let mut low = Vec::new();
            for &i in &pool {
                let v = col[i] as f64;
                if active(i) && v >= hi {
                    high.push(i);
                } else if v <= lo {
                    low.push(i);
                }
            }
            high.sort_unstable();
            low.sort_unstable();
            Ok(HighLowSets { high, low })
        }
    }
}
