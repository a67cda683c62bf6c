//! Hyperparameter sweeps over SAE variants. Each task writes a private JSON
//! file under `tasks/`; existing files are validated and skipped on restart,
//! and `sweep.csv` is assembled in task order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use featurelens::nn::TrainConfig;
use featurelens::sae::{sae_metrics, train_sae, SaeVariant, SparseAutoencoder};
use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{write_atomic, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Vanilla,
    Prebias,
    Topk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub variants: Vec<VariantKind>,
    pub scaling_factors: Vec<usize>,
    pub learning_rates: Vec<f64>,
    /// Sparsity weights for the L1 variants.
    pub l1_weights: Vec<f64>,
    /// Active neurons for top-k, in percent of the hidden width.
    pub k_percents: Vec<f64>,
    /// Shared training settings; the learning rate and seed are set per task.
    pub train: TrainConfig,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid::small()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepPreset {
    SmallSae,
    LargeSae,
}

impl SweepGrid {
    /// Grid used for the small simulation.
    pub fn small() -> Self {
        SweepGrid {
            variants: vec![VariantKind::Vanilla, VariantKind::Prebias, VariantKind::Topk],
            scaling_factors: vec![2, 5, 10, 20, 50, 100, 200, 1000],
            learning_rates: vec![1e-2, 1e-3, 1e-4, 1e-5],
            l1_weights: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            k_percents: vec![5.0, 10.0, 20.0, 50.0, 75.0, 100.0],
            train: TrainConfig {
                max_epochs: 500,
                ..TrainConfig::default()
            },
        }
    }

    /// Grid used for the large simulation (no top-k).
    pub fn large() -> Self {
        SweepGrid {
            variants: vec![VariantKind::Vanilla, VariantKind::Prebias],
            scaling_factors: vec![20, 100, 200, 500],
            learning_rates: vec![1e-4, 1e-5, 1e-6],
            l1_weights: vec![1e-1, 1e-2, 1e-3, 1e-4],
            k_percents: Vec::new(),
            train: TrainConfig {
                max_epochs: 500,
                ..TrainConfig::default()
            },
        }
    }

    pub fn preset(p: SweepPreset) -> Self {
        match p {
            SweepPreset::SmallSae => Self::small(),
            SweepPreset::LargeSae => Self::large(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if self.scaling_factors.contains(&0) {
            return Err(CliError::User("sweep: scaling factors must be positive".into()));
        }
        if self.k_percents.iter().any(|&k| !(k > 0.0 && k <= 100.0)) {
            return Err(CliError::User("sweep: k percentages must lie in (0, 100]".into()));
        }
        Ok(())
    }

    /// Full cross product in a fixed order: variant, scaling factor,
    /// learning rate, sparsity setting, seed.
    pub fn tasks(&self, seeds: &[u64]) -> Vec<SweepTask> {
        let mut tasks = Vec::new();
        for &kind in &self.variants {
            let sparsity = match kind {
                VariantKind::Topk => &self.k_percents,
                _ => &self.l1_weights,
            };
            for &scaling_factor in &self.scaling_factors {
                for &learning_rate in &self.learning_rates {
                    for &s in sparsity {
                        for &seed in seeds {
                            tasks.push(SweepTask {
                                id: tasks.len(),
                                kind,
                                scaling_factor,
                                learning_rate,
                                sparsity: s,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        tasks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepTask {
    pub id: usize,
    pub kind: VariantKind,
    pub scaling_factor: usize,
    pub learning_rate: f64,
    /// L1 weight, or k in percent for top-k.
    pub sparsity: f64,
    pub seed: u64,
}

impl SweepTask {
    pub fn hidden(&self, input: usize) -> usize {
        self.scaling_factor * input
    }

    pub fn variant(&self, input: usize) -> SaeVariant {
        match self.kind {
            VariantKind::Vanilla => SaeVariant::Vanilla { l1_weight: self.sparsity },
            VariantKind::Prebias => SaeVariant::PreBias { l1_weight: self.sparsity },
            VariantKind::Topk => {
                let hidden = self.hidden(input);
                let k = (self.sparsity / 100.0 * hidden as f64).round() as usize;
                SaeVariant::TopK { k: k.clamp(1, hidden) }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub name: String,
    /// Mean over columns of the best neuron correlation.
    pub mean_max_pearson: f64,
    /// Columns with at least one neuron at the match threshold.
    pub n_recovered: usize,
    pub n_columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task: SweepTask,
    pub hidden: usize,
    pub k: Option<usize>,
    pub best_epoch: usize,
    pub mse: f64,
    pub n_active: usize,
    pub n_redundant: usize,
    pub avg_firing_per_sample: f64,
    pub variables: Vec<VariableSummary>,
}

/// Embeddings and reference variables a sweep evaluates against.
pub struct SweepData<'a> {
    pub train: ArrayView2<'a, f32>,
    pub val: Option<ArrayView2<'a, f32>>,
    /// Variables aligned with `val` when present, otherwise with `train`.
    pub variables: Vec<(String, ArrayView2<'a, f32>)>,
}

pub fn run_task(task: &SweepTask, grid: &SweepGrid, data: &SweepData<'_>) -> Result<SweepRow, CliError> {
    let input = data.train.ncols();
    let variant = task.variant(input);
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let sae = SparseAutoencoder::<f32>::new(input, task.hidden(input), variant, &mut rng)?;
    let cfg = TrainConfig {
        learning_rate: task.learning_rate,
        seed: task.seed,
        ..grid.train.clone()
    };
    let (sae, outcome) = train_sae(sae, data.train, data.val, &cfg)?;
    let eval = data.val.unwrap_or(data.train);
    let vars: Vec<(&str, ArrayView2<f32>)> = data.variables.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    let metrics = sae_metrics(&sae, eval, &vars)?;
    let variables = data
        .variables
        .iter()
        .map(|(name, v)| {
            let cols: Vec<_> = metrics.matches.iter().filter(|m| &m.variable == name).collect();
            VariableSummary {
                name: name.clone(),
                mean_max_pearson: cols.iter().map(|m| m.max_pearson).sum::<f64>() / v.ncols().max(1) as f64,
                n_recovered: metrics.recovered_columns(name),
                n_columns: v.ncols(),
            }
        })
        .collect();
    Ok(SweepRow {
        task: *task,
        hidden: sae.hidden_dim(),
        k: match variant {
            SaeVariant::TopK { k } => Some(k),
            _ => None,
        },
        best_epoch: outcome.best_epoch,
        mse: sae.loss(eval)?.mse as f64,
        n_active: metrics.n_active,
        n_redundant: metrics.n_redundant,
        avg_firing_per_sample: metrics.avg_firing_per_sample,
        variables,
    })
}

fn task_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("tasks").join(format!("task_{id:05}.json"))
}

fn load_completed(path: &Path, task: &SweepTask) -> Result<Option<SweepRow>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    let row: SweepRow = serde_json::from_str(&text)
        .map_err(|e| CliError::User(format!("{}: unreadable task file ({e}); delete it to rerun", path.display())))?;
    if row.task != *task {
        return Err(CliError::User(format!(
            "{} was produced by a different grid; use a fresh output directory",
            path.display()
        )));
    }
    Ok(Some(row))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepSummary {
    pub n_tasks: usize,
    pub n_resumed: usize,
}

/// Runs every task not already completed in `out`, then writes `sweep.csv`.
pub fn run_sweep(
    grid: &SweepGrid,
    seeds: &[u64],
    data: &SweepData<'_>,
    out: &Path,
    jobs: usize,
) -> Result<SweepSummary, CliError> {
    let tasks = grid.tasks(seeds);
    std::fs::create_dir_all(out.join("tasks")).map_err(|e| CliError::User(format!("{}: {e}", out.display())))?;
    let mut rows: Vec<Option<SweepRow>> = Vec::with_capacity(tasks.len());
    for t in &tasks {
        rows.push(load_completed(&task_path(out, t.id), t)?);
    }
    let n_resumed = rows.iter().filter(|r| r.is_some()).count();
    let pending: Vec<&SweepTask> = tasks.iter().filter(|t| rows[t.id].is_none()).collect();
    log::info!("sweep: {} tasks, {} already complete", tasks.len(), n_resumed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let fresh: Vec<SweepRow> = pool.install(|| {
        pending
            .par_iter()
            .map(|t| {
                let row = run_task(t, grid, data)?;
                let text = serde_json::to_string_pretty(&row).map_err(|e| CliError::Internal(e.to_string()))?;
                write_atomic(&task_path(out, t.id), format!("{text}\n").as_bytes())?;
                log::info!("sweep task {} done", t.id);
                Ok(row)
            })
            .collect::<Result<_, CliError>>()
    })?;
    for row in fresh {
        let id = row.task.id;
        rows[id] = Some(row);
    }
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("every task completed")).collect();
    write_atomic(&out.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    Ok(SweepSummary {
        n_tasks: tasks.len(),
        n_resumed,
    })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "task,variant,scaling_factor,hidden,learning_rate,l1_weight,k_percent,k,seed,best_epoch,mse,n_active,frac_active,n_redundant,avg_firing_per_sample",
    );
    if let Some(first) = rows.first() {
        for v in &first.variables {
            let _ = write!(out, ",max_pearson_{0},n_recovered_{0}", v.name);
        }
    }
    out.push('\n');
    for r in rows {
        let t = &r.task;
        let (l1, kp) = match t.kind {
            VariantKind::Topk => (String::new(), t.sparsity.to_string()),
            _ => (t.sparsity.to_string(), String::new()),
        };
        let kind = match t.kind {
            VariantKind::Vanilla => "vanilla",
            VariantKind::Prebias => "prebias",
            VariantKind::Topk => "topk",
        };
        let _ = write!(
            out,
            "{},{kind},{},{},{},{l1},{kp},{},{},{},{},{},{},{},{}",
            t.id,
            t.scaling_factor,
            r.hidden,
            t.learning_rate,
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            t.seed,
            r.best_epoch,
            r.mse,
            r.n_active,
            r.n_active as f64 / r.hidden as f64,
            r.n_redundant,
            r.avg_firing_per_sample
        );
        for v in &r.variables {
            let _ = write!(out, ",{},{}", v.mean_max_pearson, v.n_recovered);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_size() {
        let tasks = SweepGrid::small().tasks(&[0]);
        assert_eq!(tasks.len(), 8 * 4 * 5 * 2 + 8 * 4 * 6);
        assert_eq!(tasks.len(), 512);
        assert!(tasks.iter().enumerate().all(|(i, t)| t.id == i));
        assert_eq!(SweepGrid::small().tasks(&[0, 42, 9307]).len(), 3 * 512);
    }

    #[test]
    fn large_grid_size() {
        assert_eq!(SweepGrid::large().tasks(&[0]).len(), 2 * 4 * 3 * 4);
    }

    #[test]
    fn topk_k_from_percent() {
        let t = SweepTask {
            id: 0,
            kind: VariantKind::Topk,
            scaling_factor: 10,
            learning_rate: 1e-4,
            sparsity: 5.0,
            seed: 0,
        };
        assert_eq!(t.variant(4), SaeVariant::TopK { k: 2 });
        let full = SweepTask { sparsity: 100.0, ..t };
        assert_eq!(full.variant(4), SaeVariant::TopK { k: 40 });
        let tiny = SweepTask { sparsity: 1.0, scaling_factor: 2, ..t };
        assert_eq!(tiny.variant(4), SaeVariant::TopK { k: 1 });
    }
}
