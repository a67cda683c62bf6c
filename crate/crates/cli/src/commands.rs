//! Argument definitions and one function per subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use featurelens::dge::dge_high_vs_low;
use featurelens::enrichment::{
    annotate_feature, build_concept_matrix, load_gene_sets, ConceptMatrix, FeatureAnnotation, GeneSetDb,
};
use featurelens::features::{classify_features, high_low_sets, steer_feature, SteerTarget};
use featurelens::io::{read_json, read_matrix, write_json, write_matrix, LabeledMatrix};
use featurelens::matching::{compare_feature_spaces_with, CompareOptions};
use featurelens::nn::autoencoder::Autoencoder;
use featurelens::nn::checkpoint::{load_mlp, save_mlp};
use featurelens::pca::pca;
use featurelens::probe::{probe_variables, ProbeTarget};
use featurelens::sae::{active_neurons, load_sae, sae_metrics, save_sae, train_sae, SparseAutoencoder};
use featurelens::sim::{simulate_large, simulate_small, SimConfig, SimDataset};
use featurelens::structure::{cosine_feature_gene_matrix, structure_recovery};
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::sweep::{run_sweep, SweepData, SweepGrid, SweepPreset};
use crate::{write_atomic, CliError};

#[derive(Debug, Parser)]
#[command(name = "featurelens", version, about = "Sparse-autoencoder feature analysis for count data")]
pub struct Cli {
    /// JSON run configuration; omitted sections use defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for `sweep` and `annotate`.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset with all hidden variables.
    Simulate(SimulateArgs),
    /// Train a mirrored autoencoder and export embeddings.
    TrainAe(TrainAeArgs),
    /// Train a sparse autoencoder on embeddings.
    TrainSae(TrainSaeArgs),
    /// Run the SAE hyperparameter grid.
    Sweep(SweepArgs),
    /// Linear probes from embeddings to simulation variables.
    Probe(ProbeArgs),
    /// Compare SAE features with the generative connectivity.
    Structure(StructureArgs),
    /// Dead / local / global feature taxonomy.
    Classify(ClassifyArgs),
    /// Set one feature to a fixed value and decode.
    Steer(SteerArgs),
    /// Differential expression between high and low samples.
    Dge(DgeArgs),
    /// Annotate live features with gene-set terms.
    Annotate(AnnotateArgs),
    /// Match two concept matrices.
    Compare(CompareArgs),
    /// Principal-component coordinates of a matrix.
    Pca(PcaArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Small,
    Large,
    Desk,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = Preset::Small)]
    pub preset: Preset,
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    /// Simulation directory; trains on Y with its train/validation split.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub sim: Option<PathBuf>,
    /// Input matrix; the last `--n-val` rows form the validation set.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainSaeArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Simulation directory providing the split and reference variables.
    #[arg(long)]
    pub sim: Option<PathBuf>,
    #[arg(long)]
    pub scaling_factor: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepPresetArg {
    SmallSae,
    LargeSae,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub sim: Option<PathBuf>,
    /// Built-in grid instead of the `sweep` config section.
    #[arg(long, value_enum)]
    pub preset: Option<SweepPresetArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Print the number of tasks and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub sim: PathBuf,
}

#[derive(Debug, Args)]
pub struct StructureArgs {
    #[arg(long)]
    pub activations: PathBuf,
    #[arg(long)]
    pub sim: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub activations: PathBuf,
    /// One integer cell-type label per line.
    #[arg(long, conflicts_with = "sim", required_unless_present = "sim")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub sim: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    #[arg(long)]
    pub sae: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub feature: usize,
    /// Target activation; defaults to the configured target.
    #[arg(long)]
    pub value: Option<f32>,
    /// Autoencoder checkpoint used to decode steered embeddings.
    #[arg(long)]
    pub decoder: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DgeArgs {
    /// Expression matrix (samples × genes) for feature mode.
    #[arg(long, requires_all = ["activations", "feature"])]
    pub expr: Option<PathBuf>,
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub feature: Option<usize>,
    /// Expression of the high group, compared against `--low-expr`.
    #[arg(long, requires = "low_expr", conflicts_with = "expr")]
    pub high_expr: Option<PathBuf>,
    #[arg(long)]
    pub low_expr: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Expression matrix (samples × genes) with gene ids as column ids.
    #[arg(long)]
    pub expr: PathBuf,
    #[arg(long)]
    pub activations: PathBuf,
    #[arg(long)]
    pub gmt: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub exclude_empty: bool,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
}

/// Resolved global options.
pub struct Context {
    pub config: RunConfig,
    pub jobs: usize,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config = config.with_seed(seed);
        }
        config.validate()?;
        if cli.jobs == 0 {
            return Err(CliError::User("--jobs must be at least 1".into()));
        }
        std::fs::create_dir_all(&cli.out).map_err(|e| CliError::User(format!("{}: {e}", cli.out.display())))?;
        Ok(Context {
            config,
            jobs: cli.jobs,
            out: cli.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self) -> u64 {
        self.config.first_seed()
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context::new(&cli)?;
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, &a),
        Command::TrainAe(a) => train_ae(&ctx, &a),
        Command::TrainSae(a) => train_sae_cmd(&ctx, &a),
        Command::Sweep(a) => sweep(&ctx, &a),
        Command::Probe(a) => probe(&ctx, &a),
        Command::Structure(a) => structure(&ctx, &a),
        Command::Classify(a) => classify(&ctx, &a),
        Command::Steer(a) => steer(&ctx, &a),
        Command::Dge(a) => dge(&ctx, &a),
        Command::Annotate(a) => annotate(&ctx, &a),
        Command::Compare(a) => compare(&ctx, &a),
        Command::Pca(a) => pca_cmd(&ctx, &a),
    }
}

fn matrix(path: &Path) -> Result<LabeledMatrix, CliError> {
    Ok(read_matrix(path)?)
}

fn load_sim(dir: &Path) -> Result<SimDataset, CliError> {
    Ok(SimDataset::read_dir(dir)?)
}

fn check_rows(what: &str, got: usize, expected: usize) -> Result<(), CliError> {
    if got != expected {
        return Err(CliError::User(format!("{what} has {got} rows, expected {expected}")));
    }
    Ok(())
}

fn simulate(ctx: &Context, a: &SimulateArgs) -> Result<(), CliError> {
    let seed = ctx.seed();
    let sim = &ctx.config.simulate;
    let (ds, cfg) = match a.preset {
        Preset::Small => (simulate_small(sim.small_n_train, sim.small_n_val, seed)?, None),
        Preset::Large => {
            let cfg = SimConfig { seed, ..sim.large.clone() };
            (simulate_large(&cfg)?, Some(cfg))
        }
        Preset::Desk => {
            let cfg = SimConfig::desk(seed);
            (simulate_large(&cfg)?, Some(cfg))
        }
    };
    ds.write_dir(&ctx.out, cfg.as_ref(), seed)?;
    log::info!(
        "simulated {} samples × {} genes into {}",
        ds.n_samples(),
        ds.y.ncols(),
        ctx.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct History<'a> {
    best_epoch: usize,
    stopped_early: bool,
    epochs: &'a [featurelens::nn::EpochRecord],
}

fn train_ae(ctx: &Context, a: &TrainAeArgs) -> Result<(), CliError> {
    let (data, n_train) = match (&a.sim, &a.input) {
        (Some(dir), _) => {
            let ds = load_sim(dir)?;
            let n_train = ds.n_train;
            (ds.y, n_train)
        }
        (None, Some(path)) => {
            let m = matrix(path)?.data;
            let n = m.nrows();
            let n_val = a.n_val.unwrap_or(n / 10);
            if n_val == 0 || n_val >= n {
                return Err(CliError::User(format!("--n-val must be in 1..{n}, got {n_val}")));
            }
            (m, n - n_val)
        }
        (None, None) => return Err(CliError::User("give --sim or --input".into())),
    };
    let sec = &ctx.config.train_ae;
    let mut train = sec.train.clone();
    if let Some(e) = a.epochs {
        train.max_epochs = e;
        train.early_stopping_patience = train.early_stopping_patience.map(|p| p.min(e));
    }
    let latent = a.latent.unwrap_or(sec.latent);
    let layers = a.layers.unwrap_or(sec.n_layers);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let ae = Autoencoder::new(data.ncols(), latent, layers, sec.architecture, train.dropout, &mut rng)?;
    let (ae, outcome) = ae.train(
        data.slice(s![..n_train, ..]),
        data.slice(s![n_train.., ..]),
        &train,
    )?;
    save_mlp(&ae.model, &ctx.path("ae.mlp1"))?;
    let z = ae.encode(data.view())?;
    write_matrix(&ctx.path("embeddings.saem"), &LabeledMatrix::new(z))?;
    write_json(
        &ctx.path("history.json"),
        &History {
            best_epoch: outcome.best_epoch,
            stopped_early: outcome.stopped_early,
            epochs: &outcome.history,
        },
    )?;
    Ok(())
}

/// Train/validation views of `m` following the simulation split, or all
/// rows for training when no simulation is given.
fn split<'a>(m: &'a Array2<f32>, sim: Option<&SimDataset>) -> (ArrayView2<'a, f32>, Option<ArrayView2<'a, f32>>) {
    match sim {
        Some(ds) => (ds.train_rows(m), Some(ds.val_rows(m))),
        None => (m.view(), None),
    }
}

const PROBED: [&str; 5] = ["X", "X_prime", "X_dblprime", "A", "B"];

fn train_sae_cmd(ctx: &Context, a: &TrainSaeArgs) -> Result<(), CliError> {
    let emb = matrix(&a.embeddings)?.data;
    let sim = a.sim.as_deref().map(load_sim).transpose()?;
    if let Some(ds) = &sim {
        check_rows("embeddings", emb.nrows(), ds.n_samples())?;
    }
    let sec = &ctx.config.train_sae;
    let mut cfg = sec.train.clone();
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
        cfg.early_stopping_patience = cfg.early_stopping_patience.map(|p| p.min(e));
    }
    let input = emb.ncols();
    let hidden = a.scaling_factor.unwrap_or(sec.scaling_factor) * input;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sae = SparseAutoencoder::<f32>::new(input, hidden, sec.variant, &mut rng)?;
    let (train, val) = split(&emb, sim.as_ref());
    let (sae, outcome) = train_sae(sae, train, val, &cfg)?;
    save_sae(&sae, &ctx.path("sae.sae1"))?;
    let z = sae.encode(emb.view())?;
    write_matrix(&ctx.path("activations.saem"), &LabeledMatrix::new(z))?;

    let eval = val.unwrap_or(train);
    let vars: Vec<(&str, ArrayView2<f32>)> = match &sim {
        Some(ds) => PROBED[..3]
            .iter()
            .map(|&n| (n, ds.val_rows(ds.variable(n).expect("known variable"))))
            .collect(),
        None => Vec::new(),
    };
    let metrics = sae_metrics(&sae, eval, &vars)?;
    write_json(&ctx.path("metrics.json"), &metrics)?;
    write_json(
        &ctx.path("history.json"),
        &History {
            best_epoch: outcome.best_epoch,
            stopped_early: outcome.stopped_early,
            epochs: &outcome.history,
        },
    )?;
    Ok(())
}

fn sweep(ctx: &Context, a: &SweepArgs) -> Result<(), CliError> {
    let mut grid = match a.preset {
        Some(SweepPresetArg::SmallSae) => SweepGrid::preset(SweepPreset::SmallSae),
        Some(SweepPresetArg::LargeSae) => SweepGrid::preset(SweepPreset::LargeSae),
        None => ctx.config.sweep.clone(),
    };
    if let Some(e) = a.epochs {
        grid.train.max_epochs = e;
        grid.train.early_stopping_patience = grid.train.early_stopping_patience.map(|p| p.min(e));
    }
    grid.validate()?;
    let seeds = &ctx.config.seeds;
    if a.dry_run {
        println!("{}", grid.tasks(seeds).len());
        return Ok(());
    }
    let emb = matrix(&a.embeddings)?.data;
    let sim = a.sim.as_deref().map(load_sim).transpose()?;
    if let Some(ds) = &sim {
        check_rows("embeddings", emb.nrows(), ds.n_samples())?;
    }
    let (train, val) = split(&emb, sim.as_ref());
    let variables = match &sim {
        Some(ds) => PROBED[..3]
            .iter()
            .map(|&n| (n.to_string(), ds.val_rows(ds.variable(n).expect("known variable"))))
            .collect(),
        None => Vec::new(),
    };
    let data = SweepData { train, val, variables };
    let summary = run_sweep(&grid, seeds, &data, &ctx.out, ctx.jobs)?;
    log::info!("sweep: {} tasks ({} resumed)", summary.n_tasks, summary.n_resumed);
    Ok(())
}

fn probe(ctx: &Context, a: &ProbeArgs) -> Result<(), CliError> {
    let emb = matrix(&a.embeddings)?.data;
    let ds = load_sim(&a.sim)?;
    check_rows("embeddings", emb.nrows(), ds.n_samples())?;
    let targets: Vec<ProbeTarget> = PROBED
        .iter()
        .map(|&name| {
            let v = ds.variable(name).expect("known variable");
            ProbeTarget {
                name,
                train: ds.train_rows(v),
                val: (ds.n_val > 0).then(|| ds.val_rows(v)),
            }
        })
        .collect();
    let z_val = (ds.n_val > 0).then(|| ds.val_rows(&emb));
    let p = &ctx.config.probe;
    let report = probe_variables(ds.train_rows(&emb), z_val, &targets, p.method, &p.gd)?;
    write_json(&ctx.path("probe.json"), &report)?;
    Ok(())
}

fn structure(ctx: &Context, a: &StructureArgs) -> Result<(), CliError> {
    let z = matrix(&a.activations)?.data;
    let ds = load_sim(&a.sim)?;
    check_rows("activations", z.nrows(), ds.n_samples())?;
    let cos = cosine_feature_gene_matrix(z.view(), ds.y.view())?;
    let report = structure_recovery(&cos, ds.m.view(), &ctx.config.structure.percentiles)?;
    write_json(&ctx.path("structure.json"), &report.summaries)?;
    report.write_csv(&ctx.path("structure.csv"))?;
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<usize>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| CliError::User(format!("{}: line {}: not a label: {l:?}", path.display(), i + 1)))
        })
        .collect()
}

fn classify(ctx: &Context, a: &ClassifyArgs) -> Result<(), CliError> {
    let z = matrix(&a.activations)?.data;
    let labels = match (&a.labels, &a.sim) {
        (Some(p), _) => read_labels(p)?,
        (None, Some(dir)) => load_sim(dir)?.cell_type,
        (None, None) => return Err(CliError::User("give --labels or --sim".into())),
    };
    let tax = classify_features(z.view(), &labels)?;
    tax.write_csv(&ctx.path("taxonomy.csv"))?;
    write_json(&ctx.path("taxonomy.json"), &tax)?;
    Ok(())
}

fn steer(ctx: &Context, a: &SteerArgs) -> Result<(), CliError> {
    let sae = load_sae(&a.sae)?;
    let emb = matrix(&a.embeddings)?.data;
    let target = a.value.map_or(ctx.config.features.steer_target, SteerTarget::Value);
    let steered = steer_feature(&sae, emb.view(), a.feature, target)?;
    if let Some(path) = &a.decoder {
        let ae = Autoencoder::from_model(load_mlp(path)?)?;
        let decoded = ae.decode(steered.view())?;
        write_matrix(&ctx.path("steered_decoded.saem"), &LabeledMatrix::new(decoded))?;
    }
    write_matrix(&ctx.path("steered.saem"), &LabeledMatrix::new(steered))?;
    Ok(())
}

fn dge(ctx: &Context, a: &DgeArgs) -> Result<(), CliError> {
    let pc = ctx.config.pipeline.pseudocount;
    let (result, gene_ids) = match (&a.expr, &a.high_expr, &a.low_expr) {
        (Some(expr), _, _) => {
            let (acts, feature) = match (&a.activations, a.feature) {
                (Some(p), Some(f)) => (matrix(p)?.data, f),
                _ => return Err(CliError::User("feature mode needs --activations and --feature".into())),
            };
            let x = matrix(expr)?;
            check_rows("activations", acts.nrows(), x.data.nrows())?;
            let sets = high_low_sets(acts.view(), feature, &ctx.config.pipeline.high_low, None)?;
            if sets.skip_reason().is_some() {
                return Err(CliError::User(format!(
                    "feature {feature}: high {} / low {} samples, need at least 2 each",
                    sets.high.len(),
                    sets.low.len()
                )));
            }
            (dge_high_vs_low(x.data.view(), &sets.high, &sets.low, pc)?, x.col_ids)
        }
        (None, Some(high), Some(low)) => {
            let (h, l) = (matrix(high)?, matrix(low)?);
            if h.data.ncols() != l.data.ncols() {
                return Err(CliError::User(format!(
                    "high has {} genes, low has {}",
                    h.data.ncols(),
                    l.data.ncols()
                )));
            }
            let stacked = concatenate(Axis(0), &[h.data.view(), l.data.view()])
                .map_err(|e| CliError::Internal(e.to_string()))?;
            let nh = h.data.nrows();
            let high: Vec<usize> = (0..nh).collect();
            let low: Vec<usize> = (nh..stacked.nrows()).collect();
            (dge_high_vs_low(stacked.view(), &high, &low, pc)?, h.col_ids)
        }
        _ => {
            return Err(CliError::User(
                "give --expr with --activations and --feature, or --high-expr with --low-expr".into(),
            ))
        }
    };
    result.write_csv(&ctx.path("dge.csv"), gene_ids.as_deref())?;
    Ok(())
}

/// Inputs and settings an annotation directory was started with; a
/// restart must match them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnnotateManifest {
    expr: PathBuf,
    activations: PathBuf,
    gmt: PathBuf,
    config: featurelens::enrichment::AnnotateConfig,
    features: Vec<usize>,
}

fn feature_path(out: &Path, f: usize) -> PathBuf {
    out.join("features").join(format!("feature_{f:06}.json"))
}

fn annotate(ctx: &Context, a: &AnnotateArgs) -> Result<(), CliError> {
    let x = matrix(&a.expr)?;
    let acts = matrix(&a.activations)?.data;
    check_rows("activations", acts.nrows(), x.data.nrows())?;
    let universe = x.col_ids_or_index();
    let db: GeneSetDb = load_gene_sets(&a.gmt, &universe)?;
    log::info!("annotate: {} terms kept, {} dropped by size", db.terms.len(), db.n_dropped);
    let cfg = &ctx.config.pipeline;
    let live = active_neurons(acts.view());

    let manifest = AnnotateManifest {
        expr: a.expr.clone(),
        activations: a.activations.clone(),
        gmt: a.gmt.clone(),
        config: cfg.clone(),
        features: live.clone(),
    };
    let manifest_path = ctx.path("manifest.json");
    if manifest_path.exists() {
        let prev: AnnotateManifest = read_json(&manifest_path)?;
        if prev != manifest {
            return Err(CliError::User(format!(
                "{} was written for different inputs or settings; use a fresh output directory",
                manifest_path.display()
            )));
        }
    } else {
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        write_atomic(&manifest_path, format!("{text}\n").as_bytes())?;
    }
    std::fs::create_dir_all(ctx.out.join("features"))
        .map_err(|e| CliError::User(format!("{}: {e}", ctx.out.display())))?;

    let pending: Vec<usize> = live.iter().copied().filter(|&f| !feature_path(&ctx.out, f).exists()).collect();
    log::info!("annotate: {} live features, {} pending", live.len(), pending.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| {
        pending.par_iter().try_for_each(|&f| -> Result<(), CliError> {
            let ann = annotate_feature(x.data.view(), acts.view(), f, &db, cfg)?;
            let text = serde_json::to_string_pretty(&ann).map_err(|e| CliError::Internal(e.to_string()))?;
            write_atomic(&feature_path(&ctx.out, f), format!("{text}\n").as_bytes())?;
            log::debug!("feature {f}: {} terms", ann.records.len());
            Ok(())
        })
    })?;

    let annotations: Vec<FeatureAnnotation> = live
        .iter()
        .map(|&f| read_json(&feature_path(&ctx.out, f)).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let names: BTreeMap<&str, &str> = db.terms.iter().map(|t| (t.term_id.as_str(), t.name.as_str())).collect();
    let mut csv = String::from("feature,term_id,term_name,k,n_s,expected,fold_enrichment,binom_p,binom_fdr,mwu_u,mwu_z,mwu_p,mwu_effect\n");
    for ann in &annotations {
        for r in &ann.records {
            let b = &r.binomial;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{:e},{:e},{},{},{:e},{}\n",
                ann.feature,
                r.term_id,
                csv_field(names.get(r.term_id.as_str()).copied().unwrap_or("")),
                b.k,
                b.n_s,
                b.expected,
                b.fold_enrichment,
                b.p,
                b.fdr,
                r.mwu.u,
                r.mwu.z,
                r.mwu.p,
                r.mwu.effect
            ));
        }
    }
    write_atomic(&ctx.path("enrichment.csv"), csv.as_bytes())?;
    let concept = build_concept_matrix(&annotations);
    concept.write(&ctx.path("concepts.saem"))?;
    log::info!(
        "annotate: {} of {} features annotated",
        annotations.iter().filter(|a| !a.records.is_empty()).count(),
        annotations.len()
    );
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn compare(ctx: &Context, a: &CompareArgs) -> Result<(), CliError> {
    let ca = ConceptMatrix::from_labeled(&matrix(&a.a)?)?;
    let cb = ConceptMatrix::from_labeled(&matrix(&a.b)?)?;
    let report = compare_feature_spaces_with(
        &ca,
        &cb,
        CompareOptions {
            exclude_empty: a.exclude_empty,
        },
    );
    report.write_json(&ctx.path("match.json"))?;
    println!("{}", report.overall_similarity);
    Ok(())
}

#[derive(Serialize)]
struct PcaSummary<'a> {
    mean: &'a ndarray::Array1<f64>,
    components: &'a Array2<f64>,
    explained_variance: &'a ndarray::Array1<f64>,
    explained_variance_ratio: &'a ndarray::Array1<f64>,
}

fn pca_cmd(ctx: &Context, a: &PcaArgs) -> Result<(), CliError> {
    let m = matrix(&a.input)?;
    let p = pca(m.data.view(), a.components)?;
    let ids = (0..a.components).map(|k| format!("PC{}", k + 1)).collect();
    let mut coords = LabeledMatrix::new(p.coordinates.mapv(|v| v as f32)).with_col_ids(ids);
    coords.row_ids = m.row_ids;
    write_matrix(&ctx.path("pca.saem"), &coords)?;
    write_json(
        &ctx.path("pca.json"),
        &PcaSummary {
            mean: &p.mean,
            components: &p.components,
            explained_variance: &p.explained_variance,
            explained_variance_ratio: &p.explained_variance_ratio,
        },
    )?;
    Ok(())
}
