//! Gene-set enrichment of SAE features: GMT ingestion, binomial and
//! Mann–Whitney U tests, and the concept matrix.
//!
//! Per live feature the pipeline runs
//! high/low sets → differential expression → study genes → per-term tests,
//! and records a term when its binomial p-value is below `record_p`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dge::{bh_correct, dge_high_vs_low, DgeResult, DEFAULT_PSEUDOCOUNT};
use crate::error::{Error, Result};
use crate::features::{high_low_sets, HighLowConfig, SkipReason};
use crate::io::{write_matrix, LabeledMatrix};
use crate::stats::binomial_upper_tail;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSet {
    pub term_id: String,
    pub name: String,
    /// Text before the first `:` of the description, when it has no spaces
    /// (e.g. `biological_process:cell cycle`).
    pub namespace: Option<String>,
    /// Sorted universe indices.
    pub genes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneSetDb {
    pub terms: Vec<GeneSet>,
    pub universe: Vec<String>,
    /// Terms removed by the size filter.
    pub n_dropped: usize,
}

impl GeneSetDb {
    pub fn n(&self) -> usize {
        self.universe.len()
    }
}

pub const MIN_TERM_SIZE: usize = 20;
pub const MAX_TERM_SIZE: usize = 500;

/// Parses GMT text (`term_id<TAB>description<TAB>gene…`), intersects
/// every term with `universe` and keeps terms whose intersection size lies
/// in `[min_size, max_size]`.
pub fn parse_gmt<R: BufRead>(input: R, universe: &[String], min_size: usize, max_size: usize) -> Result<GeneSetDb> {
    if universe.is_empty() {
        return Err(Error::Argument("gene universe is empty".into()));
    }
    let index: HashMap<&str, usize> = universe.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let mut seen = HashSet::new();
    let mut terms = Vec::new();
    let mut n_dropped = 0;
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let term_id = fields.next().unwrap_or("").trim();
        let Some(description) = fields.next() else {
            return Err(Error::Format(format!(
                "line {}: expected term id, description and genes separated by tabs",
                lineno + 1
            )));
        };
        if term_id.is_empty() {
            return Err(Error::Format(format!("line {}: empty term id", lineno + 1)));
        }
        if !seen.insert(term_id.to_string()) {
            return Err(Error::Format(format!("line {}: duplicate term id {term_id}", lineno + 1)));
        }
        let genes: BTreeSet<usize> = fields.filter_map(|g| index.get(g.trim()).copied()).collect();
        if genes.len() < min_size || genes.len() > max_size {
            n_dropped += 1;
            continue;
        }
        let namespace = description
            .split_once(':')
            .filter(|(ns, _)| !ns.is_empty() && !ns.contains(' '))
            .map(|(ns, _)| ns.to_string());
        terms.push(GeneSet {
            term_id: term_id.to_string(),
            name: description.to_string(),
            namespace,
            genes: genes.into_iter().collect(),
        });
    }
    Ok(GeneSetDb {
        terms,
        universe: universe.to_vec(),
        n_dropped,
    })
}

pub fn load_gene_sets(path: &Path, universe: &[String]) -> Result<GeneSetDb> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_gmt(std::io::BufReader::new(file), universe, MIN_TERM_SIZE, MAX_TERM_SIZE)
        .map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Ascending 1-based ranks with midranks for ties.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Fold changes ranked once per feature and reused across terms.
#[derive(Debug, Clone)]
pub struct RankedValues {
    pub ranks: Vec<f64>,
    /// `Σ (t³ − t)` over tie groups.
    pub tie_sum: f64,
}

impl RankedValues {
    pub fn new(values: &[f64]) -> Self {
        let ranks = midranks(values);
        let mut counts: HashMap<u64, f64> = HashMap::new();
        for r in &ranks {
            *counts.entry(r.to_bits()).or_default() += 1.0;
        }
        let tie_sum = counts.values().map(|&t| t * t * t - t).sum();
        RankedValues { ranks, tie_sum }
    }
}

/// Largest `n₁ + n₂` for which p-values come from the exact permutation
/// distribution.
pub const MWU_EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwuResult {
    /// `min(U₁, U₂)`.
    pub u: f64,
    /// `U₁ = n₁n₂ + n₁(n₁+1)/2 − R₁` for the term genes.
    pub u1: f64,
    /// Normal score of `U₁`, continuity corrected; positive when term genes
    /// rank low.
    pub z: f64,
    pub p: f64,
    /// `U / (n₁ n₂)`.
    pub effect: f64,
    pub exact: bool,
}

/// Two-sided Mann–Whitney U test of the term genes' ranks against the rest.
pub fn mwu_enrichment(fold_changes: &[f64], term_genes: &[usize]) -> Result<MwuResult> {
    mwu_ranked(&RankedValues::new(fold_changes), term_genes)
}

pub fn mwu_ranked(ranked: &RankedValues, term_genes: &[usize]) -> Result<MwuResult> {
    let n = ranked.ranks.len();
    let mut members = vec![false; n];
    for &g in term_genes {
        if g >= n {
            return Err(Error::Argument(format!("term gene {g} outside universe of {n}")));
        }
        members[g] = true;
    }
    let n1 = members.iter().filter(|&&m| m).count();
    let n2 = n - n1;
    if n1 == 0 || n2 == 0 {
        return Err(Error::Argument(format!("both groups must be nonempty, got {n1} and {n2}")));
    }
    let r1: f64 = (0..n).filter(|&i| members[i]).map(|i| ranked.ranks[i]).sum();
    let (f1, f2) = (n1 as f64, n2 as f64);
    let u1 = f1 * f2 + f1 * (f1 + 1.0) / 2.0 - r1;
    let u = u1.min(f1 * f2 - u1);
    let mu = f1 * f2 / 2.0;
    let nf = n as f64;
    let var = f1 * f2 / 12.0 * ((nf + 1.0) - ranked.tie_sum / (nf * (nf - 1.0)));
    let z = if var > 0.0 {
        (u1 - mu).signum() * ((u1 - mu).abs() - 0.5).max(0.0) / var.sqrt()
    } else {
        0.0
    };
    let (p, exact) = if var <= 0.0 {
        (1.0, false)
    } else if n <= MWU_EXACT_LIMIT {
        (exact_mwu_p(&ranked.ranks, &members), true)
    } else {
        (erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0), false)
    };
    Ok(MwuResult {
        u,
        u1,
        z,
        p,
        effect: u / (f1 * f2),
        exact,
    })
}

/// `P(|U₁ − μ| ≥ |u₁ − μ|)` over all equally likely assignments of the
/// observed ranks to the groups, by dynamic programming over doubled ranks.
fn exact_mwu_p(ranks: &[f64], members: &[bool]) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let n = ranks.len();
    let n1 = members.iter().filter(|&&m| m).count();
    let max_sum: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s.
    let mut counts = vec![vec![0.0f64; max_sum + 1]; n1 + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            for s in (r..=max_sum).rev() {
                let add = counts[k - 1][s - r];
                if add != 0.0 {
                    counts[k][s] += add;
                }
            }
        }
    }
    let n2 = n - n1;
    // 2U₁ = 2n₁n₂ + n₁(n₁+1) − 2R₁ and 2μ = n₁n₂.
    let two_u = |two_r: usize| (2 * n1 * n2 + n1 * (n1 + 1)) as i64 - two_r as i64;
    let two_mu = (n1 * n2) as i64;
    let observed: usize = (0..n).filter(|&i| members[i]).map(|i| doubled[i]).sum();
    let dev = (two_u(observed) - two_mu).abs();
    let total: f64 = counts[n1].iter().sum();
    let extreme: f64 = counts[n1]
        .iter()
        .enumerate()
        .filter(|&(s, _)| (two_u(s) - two_mu).abs() >= dev)
        .map(|(_, &c)| c)
        .sum();
    (extreme / total).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialResult {
    pub k: usize,
    pub n_s: usize,
    pub expected: f64,
    pub fold_enrichment: f64,
    pub p: f64,
    /// BH-adjusted across the terms tested for one feature.
    pub fdr: f64,
}

/// Exact upper-tail binomial test of study genes falling into a term with
/// success probability `|term| / universe_n`.
pub fn binomial_enrichment(study: &[usize], term: &[usize], universe_n: usize) -> Result<BinomialResult> {
    if study.is_empty() {
        return Err(Error::Argument("study set is empty".into()));
    }
    if universe_n == 0 || term.len() > universe_n {
        return Err(Error::Argument(format!(
            "term of {} genes in a universe of {universe_n}",
            term.len()
        )));
    }
    let term_set: HashSet<usize> = term.iter().copied().collect();
    let k = study.iter().filter(|g| term_set.contains(g)).count();
    let p_c = term.len() as f64 / universe_n as f64;
    let expected = study.len() as f64 * p_c;
    Ok(BinomialResult {
        k,
        n_s: study.len(),
        expected,
        fold_enrichment: if expected > 0.0 { k as f64 / expected } else { 0.0 },
        p: binomial_upper_tail(k as u64, study.len() as u64, p_c),
        fdr: f64::NAN,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub high_low: HighLowConfig,
    pub pseudocount: f64,
    pub primary_q: f64,
    pub primary_fold_change: f64,
    pub fallback_q: f64,
    pub record_p: f64,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            high_low: HighLowConfig::default(),
            pseudocount: DEFAULT_PSEUDOCOUNT,
            primary_q: 1e-5,
            primary_fold_change: 2.0,
            fallback_q: 0.05,
            record_p: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySelection {
    pub genes: Vec<usize>,
    pub used_fallback: bool,
}

/// Genes with `q < primary_q` and a fold change of at least
/// `primary_fold_change` in either direction; if none pass, genes with
/// `q < fallback_q`.
pub fn study_gene_selection(dge: &DgeResult, cfg: &AnnotateConfig) -> StudySelection {
    let fc = cfg.primary_fold_change;
    let primary: Vec<usize> = dge
        .genes
        .iter()
        .filter(|g| g.q < cfg.primary_q && (g.fold_change >= fc || g.fold_change <= 1.0 / fc))
        .map(|g| g.gene)
        .collect();
    if !primary.is_empty() {
        return StudySelection {
            genes: primary,
            used_fallback: false,
        };
    }
    StudySelection {
        genes: dge.genes.iter().filter(|g| g.q < cfg.fallback_q).map(|g| g.gene).collect(),
        used_fallback: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentRecord {
    pub term_id: String,
    pub binomial: BinomialResult,
    pub mwu: MwuResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnnotation {
    pub feature: usize,
    pub skipped: Option<SkipReason>,
    pub n_high: usize,
    pub n_low: usize,
    pub n_study_genes: usize,
    pub used_fallback: bool,
    /// Recorded terms, sorted by term id.
    pub records: Vec<EnrichmentRecord>,
}

/// Runs the full chain for one live feature. `expr` columns follow
/// `db.universe`.
pub fn annotate_feature(
    expr: ArrayView2<f32>,
    activations: ArrayView2<f32>,
    feature: usize,
    db: &GeneSetDb,
    cfg: &AnnotateConfig,
) -> Result<FeatureAnnotation> {
    if expr.ncols() != db.n() {
        return Err(Error::shape("expression columns (gene universe)", db.n(), expr.ncols()));
    }
    if expr.nrows() != activations.nrows() {
        return Err(Error::shape("activation rows", expr.nrows(), activations.nrows()));
    }
    let sets = high_low_sets(activations, feature, &cfg.high_low, None)?;
    let mut ann = FeatureAnnotation {
        feature,
        skipped: None,
        n_high: sets.high.len(),
        n_low: sets.low.len(),
        n_study_genes: 0,
        used_fallback: false,
        records: Vec::new(),
    };
    if let Some(reason) = sets.skip_reason() {
        ann.skipped = Some(reason);
        return Ok(ann);
    }
    let dge = dge_high_vs_low(expr, &sets.high, &sets.low, cfg.pseudocount)?;
    let study = study_gene_selection(&dge, cfg);
    ann.n_study_genes = study.genes.len();
    ann.used_fallback = study.used_fallback;
    if study.genes.is_empty() {
        ann.skipped = Some(SkipReason::EmptyStudySet);
        return Ok(ann);
    }

    let fold_changes: Vec<f64> = dge.genes.iter().map(|g| g.fold_change).collect();
    let ranked = RankedValues::new(&fold_changes);
    let mut tested = Vec::with_capacity(db.terms.len());
    for term in &db.terms {
        let binomial = binomial_enrichment(&study.genes, &term.genes, db.n())?;
        tested.push((term, binomial));
    }
    let fdr = bh_correct(&tested.iter().map(|(_, b)| b.p).collect::<Vec<_>>());
    for ((term, mut binomial), q) in tested.into_iter().zip(fdr) {
        binomial.fdr = q;
        if binomial.p < cfg.record_p {
            ann.records.push(EnrichmentRecord {
                term_id: term.term_id.clone(),
                binomial,
                mwu: mwu_ranked(&ranked, &term.genes)?,
            });
        }
    }
    ann.records.sort_by(|a, b| a.term_id.cmp(&b.term_id));
    Ok(ann)
}

/// Binary features × terms matrix of recorded terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMatrix {
    pub features: Vec<String>,
    /// Sorted term ids.
    pub terms: Vec<String>,
    pub matrix: Array2<u8>,
}

impl ConceptMatrix {
    pub fn from_sets(features: Vec<String>, sets: &[BTreeSet<String>]) -> Self {
        let terms: Vec<String> = sets
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let col: HashMap<&str, usize> = terms.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut matrix = Array2::zeros((features.len(), terms.len()));
        for (row, set) in sets.iter().enumerate() {
            for t in set {
                matrix[[row, col[t.as_str()]]] = 1;
            }
        }
        ConceptMatrix { features, terms, matrix }
    }

    /// Term set of each row.
    pub fn row_sets(&self) -> Vec<BTreeSet<String>> {
        self.matrix
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .zip(&self.terms)
                    .filter(|(&v, _)| v != 0)
                    .map(|(_, t)| t.clone())
                    .collect()
            })
            .collect()
    }

    pub fn to_labeled(&self) -> LabeledMatrix {
        LabeledMatrix::new(self.matrix.mapv(f32::from))
            .with_row_ids(self.features.clone())
            .with_col_ids(self.terms.clone())
    }

    pub fn from_labeled(m: &LabeledMatrix) -> Result<Self> {
        if m.data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Format("concept matrix entries must be 0 or 1".into()));
        }
        Ok(ConceptMatrix {
            features: m.row_ids_or_index(),
            terms: m.col_ids_or_index(),
            matrix: m.data.mapv(|v| v as u8),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_matrix(path, &self.to_labeled())
    }
}

/// One row per annotation (in the given order); columns are the union of
/// recorded terms sorted by term id.
pub fn build_concept_matrix(annotations: &[FeatureAnnotation]) -> ConceptMatrix {
    let features = annotations.iter().map(|a| a.feature.to_string()).collect();
    let sets: Vec<BTreeSet<String>> = annotations
        .iter()
        .map(|a| a.records.iter().map(|r| r.term_id.clone()).collect())
        .collect();
    ConceptMatrix::from_sets(features, &sets)
}
