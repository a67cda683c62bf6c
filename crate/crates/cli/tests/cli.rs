use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use featurelens::io::{read_matrix, write_matrix, LabeledMatrix};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_featurelens"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_small_shapes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--preset", "small", "--seed", "0", "--out", p(dir.path())]);
    let dim = |name: &str| read_matrix(&dir.path().join(name)).unwrap().data.dim();
    assert_eq!(dim("Y.saem"), (12000, 5));
    assert_eq!(dim("X_prime.saem"), (12000, 3));
    assert_eq!(dim("M.saem"), (5, 3));
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&["simulate", "--seed", "3", "--out", p(d.path())]);
    }
    for f in ["Y.saem", "X.saem", "M.saem", "sim.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn sweep_small_grid_size() {
    let out = ok(&["sweep", "--preset", "small-sae", "--embeddings", "unused.saem", "--dry-run"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "512");
}

#[test]
fn sweep_writes_rows_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"simulate": {"small_n_train": 300, "small_n_val": 100},
            "sweep": {"variants": ["vanilla", "topk"], "scaling_factors": [2], "learning_rates": [1e-3],
                      "l1_weights": [1e-3], "k_percents": [50],
                      "train": {"max_epochs": 2, "early_stopping_patience": null, "batch_size": 64}},
            "seeds": [0, 1]}"#,
    )
    .unwrap();
    ok(&["simulate", "--config", p(&cfg), "--out", p(&sim)]);
    let out = dir.path().join("sweep");
    let args = [
        "sweep",
        "--config",
        p(&cfg),
        "--embeddings",
        &format!("{}/Y.saem", p(&sim)),
        "--sim",
        p(&sim),
        "--jobs",
        "2",
        "--out",
        p(&out),
    ];
    ok(&args);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[0].contains("max_pearson_X_prime"));
    assert!(lines[1].starts_with("0,vanilla,2,10,"));
    assert!(lines[3].starts_with("2,topk,2,10,"));

    std::fs::remove_file(out.join("tasks/task_00002.json")).unwrap();
    std::fs::remove_file(out.join("sweep.csv")).unwrap();
    ok(&args);
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap(), csv);
}

#[test]
fn pca_dominant_direction() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let dir_vec = [0.0, 0.6, 0.0, 0.8];
    let mut x = Array2::<f32>::zeros((400, 4));
    for mut row in x.rows_mut() {
        let t: f64 = 10.0 * normal.sample(&mut rng);
        for (v, d) in row.iter_mut().zip(dir_vec) {
            *v = (t * d + 0.05 * normal.sample(&mut rng)) as f32;
        }
    }
    let input = dir.path().join("x.csv");
    write_matrix(&input, &LabeledMatrix::new(x)).unwrap();
    ok(&["pca", "--input", p(&input), "--components", "3", "--out", p(dir.path())]);
    let coords = read_matrix(&dir.path().join("pca.saem")).unwrap();
    assert_eq!(coords.data.dim(), (400, 3));
    assert_eq!(coords.col_ids.unwrap(), ["PC1", "PC2", "PC3"]);
    let var: Vec<f64> = (0..3)
        .map(|k| coords.data.column(k).iter().map(|&v| (v as f64).powi(2)).sum())
        .collect();
    assert!(var[0] / var.iter().sum::<f64>() >= 0.99);
}

/// Expression with term `T00`'s genes raised fourfold in the cells where
/// feature 0 fires; feature 1 fires at random, feature 2 is dead.
fn planted_annotation_inputs(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let (cells, genes) = (2000, 120);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let signal: Vec<bool> = (0..cells).map(|i| i % 10 == 0).collect();
    let term0: Vec<usize> = (0..20).collect();
    let mut expr = Array2::zeros((cells, genes));
    for i in 0..cells {
        for g in 0..genes {
            let rate = if signal[i] && term0.contains(&g) { 20.0 } else { 5.0 };
            expr[[i, g]] = Poisson::new(rate).unwrap().sample(&mut rng) as f32;
        }
    }
    let mut acts = Array2::zeros((cells, 3));
    for i in 0..cells {
        acts[[i, 0]] = if signal[i] { 1.0 + rng.random::<f32>() } else { 0.0 };
        acts[[i, 1]] = if rng.random_bool(0.1) { rng.random::<f32>() + 0.1 } else { 0.0 };
    }
    let gene_ids: Vec<String> = (0..genes).map(|g| format!("G{g}")).collect();
    let expr_path = dir.join("expr.saem");
    write_matrix(&expr_path, &LabeledMatrix::new(expr).with_col_ids(gene_ids)).unwrap();
    let acts_path = dir.join("acts.saem");
    write_matrix(&acts_path, &LabeledMatrix::new(acts)).unwrap();
    let mut gmt = String::new();
    for t in 0..5 {
        let members: Vec<String> = (t * 20..t * 20 + 20).map(|g| format!("G{g}")).collect();
        gmt.push_str(&format!("T{t:02}\tterm {t}\t{}\n", members.join("\t")));
    }
    let gmt_path = dir.join("terms.gmt");
    std::fs::write(&gmt_path, gmt).unwrap();
    (expr_path, acts_path, gmt_path)
}

fn annotate_args<'a>(expr: &'a Path, acts: &'a Path, gmt: &'a Path, out: &'a Path) -> Vec<&'a str> {
    vec![
        "annotate",
        "--expr",
        p(expr),
        "--activations",
        p(acts),
        "--gmt",
        p(gmt),
        "--jobs",
        "2",
        "--out",
        p(out),
    ]
}

#[test]
fn annotate_records_planted_term_and_restarts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (expr, acts, gmt) = planted_annotation_inputs(dir.path());
    let out = dir.path().join("ann");
    ok(&annotate_args(&expr, &acts, &gmt, &out));

    let csv = std::fs::read_to_string(out.join("enrichment.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("0,T00,")), "{csv}");
    assert!(!out.join("features/feature_000002.json").exists(), "dead feature skipped");
    let concepts = read_matrix(&out.join("concepts.saem")).unwrap();
    assert_eq!(concepts.row_ids.unwrap(), ["0", "1"]);

    let snapshot = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<PathBuf> = ["enrichment.csv", "concepts.saem", "concepts.saem.rows", "concepts.saem.cols"]
            .iter()
            .map(|f| d.join(f))
            .chain(std::fs::read_dir(d.join("features")).unwrap().map(|e| e.unwrap().path()))
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()))
            .collect()
    };
    let first = snapshot(&out);

    // Interrupted run: one feature finished, a stale temporary file, no merged outputs.
    std::fs::remove_file(out.join("features/feature_000001.json")).unwrap();
    std::fs::write(out.join("features/feature_000001.json.tmp"), "{").unwrap();
    for f in ["enrichment.csv", "concepts.saem"] {
        std::fs::remove_file(out.join(f)).unwrap();
    }
    ok(&annotate_args(&expr, &acts, &gmt, &out));
    assert_eq!(snapshot(&out), first);

    let fresh = dir.path().join("fresh");
    let mut args = annotate_args(&expr, &acts, &gmt, &fresh);
    args[8] = "1";
    ok(&args);
    assert_eq!(snapshot(&fresh), first);
}

#[test]
fn annotate_rejects_changed_settings_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (expr, acts, gmt) = planted_annotation_inputs(dir.path());
    let out = dir.path().join("ann");
    ok(&annotate_args(&expr, &acts, &gmt, &out));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"pipeline": {"record_p": 0.05}}"#).unwrap();
    let mut args = annotate_args(&expr, &acts, &gmt, &out);
    args.extend(["--config", p(&cfg)]);
    assert_eq!(run(&args).status.code(), Some(1));
}

#[test]
fn classify_dge_compare_and_steer() {
    let dir = tempfile::tempdir().unwrap();
    let (expr, acts, _) = planted_annotation_inputs(dir.path());
    let labels = dir.path().join("labels.txt");
    let text: String = (0..2000).map(|i| format!("{}\n", if i % 10 == 0 { 1 } else { 0 })).collect();
    std::fs::write(&labels, text).unwrap();
    ok(&["classify", "--activations", p(&acts), "--labels", p(&labels), "--out", p(dir.path())]);
    let tax = std::fs::read_to_string(dir.path().join("taxonomy.csv")).unwrap();
    let rows: Vec<&str> = tax.lines().skip(1).collect();
    assert!(rows[0].starts_with("0,local,1,"), "{tax}");
    assert!(rows[2].starts_with("2,dead,"), "{tax}");

    ok(&["dge", "--expr", p(&expr), "--activations", p(&acts), "--feature", "0", "--out", p(dir.path())]);
    let dge = std::fs::read_to_string(dir.path().join("dge.csv")).unwrap();
    assert!(dge.starts_with("gene_id,mean_high,mean_low,fc,t,p,q\n"));
    let top: Vec<&str> = dge.lines().skip(1).take(20).collect();
    assert!(top.iter().all(|l| {
        let g: usize = l.split(',').next().unwrap()[1..].parse().unwrap();
        g < 20
    }));

    let a = dir.path().join("a.csv");
    std::fs::write(&a, ",T1,T2\nf0,1,0\nf1,0,1\n").unwrap();
    let out = ok(&["compare", "--a", p(&a), "--b", p(&a), "--out", p(dir.path())]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1");

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sae = featurelens::sae::SparseAutoencoder::<f32>::new(
        4,
        8,
        featurelens::sae::SaeVariant::Vanilla { l1_weight: 1e-3 },
        &mut rng,
    )
    .unwrap();
    let sae_path = dir.path().join("sae.sae1");
    featurelens::sae::save_sae(&sae, &sae_path).unwrap();
    let emb = dir.path().join("emb.saem");
    let e = Array2::from_shape_fn((50, 4), |_| rng.random_range(0.0f32..1.0));
    write_matrix(&emb, &LabeledMatrix::new(e)).unwrap();
    let z = sae.encode(read_matrix(&emb).unwrap().data.view()).unwrap();
    let live = (0..8).find(|&j| z.column(j).iter().any(|&v| v > 0.0)).unwrap();
    ok(&[
        "steer",
        "--sae",
        p(&sae_path),
        "--embeddings",
        p(&emb),
        "--feature",
        &live.to_string(),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(read_matrix(&dir.path().join("steered.saem")).unwrap().data.dim(), (50, 4));
}

#[test]
fn train_ae_then_sae_then_probe_and_structure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"simulate": {"small_n_train": 400, "small_n_val": 100},
            "train_ae": {"train": {"max_epochs": 3, "early_stopping_patience": null}},
            "train_sae": {"scaling_factor": 2, "train": {"max_epochs": 3, "early_stopping_patience": null}}}"#,
    )
    .unwrap();
    let sim = dir.path().join("sim");
    let c = p(&cfg);
    ok(&["simulate", "--config", c, "--seed", "12", "--out", p(&sim)]);
    let ae = dir.path().join("ae");
    ok(&["train-ae", "--config", c, "--sim", p(&sim), "--out", p(&ae)]);
    let emb = ae.join("embeddings.saem");
    assert_eq!(read_matrix(&emb).unwrap().data.dim(), (500, 4));
    for f in ["ae.mlp1", "history.json"] {
        assert!(ae.join(f).exists(), "{f}");
    }
    let sae = dir.path().join("sae");
    ok(&["train-sae", "--config", c, "--embeddings", p(&emb), "--sim", p(&sim), "--out", p(&sae)]);
    assert_eq!(read_matrix(&sae.join("activations.saem")).unwrap().data.dim(), (500, 8));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sae.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n_neurons"], 8);

    ok(&["probe", "--embeddings", p(&emb), "--sim", p(&sim), "--out", p(dir.path())]);
    let probe: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("probe.json")).unwrap()).unwrap();
    assert!(probe["X_prime"]["val_r2"].is_number());

    ok(&[
        "structure",
        "--activations",
        p(&sae.join("activations.saem")),
        "--sim",
        p(&sim),
        "--out",
        p(dir.path()),
    ]);
    assert!(dir.path().join("structure.csv").exists());

    ok(&[
        "steer",
        "--sae",
        p(&sae.join("sae.sae1")),
        "--embeddings",
        p(&emb),
        "--feature",
        "0",
        "--value",
        "2.5",
        "--decoder",
        p(&ae.join("ae.mlp1")),
        "--out",
        p(dir.path()),
    ]);
    let out = run(&[
        "steer",
        "--sae",
        p(&sae.join("sae.sae1")),
        "--embeddings",
        p(&emb),
        "--feature",
        "99",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["pca"]).status.code(), Some(1));
    let missing = run(&["pca", "--input", "/nonexistent/x.saem", "--out", p(dir.path())]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"unknown_section": 1}"#).unwrap();
    assert_eq!(run(&["simulate", "--config", p(&cfg), "--out", p(dir.path())]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--jobs", "0", "--out", p(dir.path())]).status.code(), Some(1));
}
