//! Recovery of the generative connectivity from feature–gene cosine
//! similarities.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{binomial_upper_tail, percentile_sorted};

/// Default threshold percentiles.
pub const DEFAULT_PERCENTILES: [f64; 6] = [20.0, 30.0, 40.0, 50.0, 60.0, 70.0];

/// Cosine similarity between activation columns and gene columns over
/// samples (`features × genes`). Zero-norm columns give `0`.
pub fn cosine_feature_gene_matrix(activations: ArrayView2<f32>, y: ArrayView2<f32>) -> Result<Array2<f64>> {
    if activations.nrows() != y.nrows() {
        return Err(Error::shape("sample rows", activations.nrows(), y.nrows()));
    }
    let unit = |m: ArrayView2<f32>| {
        let mut out = m.mapv(|v| v as f64);
        for mut col in out.axis_iter_mut(Axis(1)) {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|v| v / norm);
            }
        }
        out
    };
    Ok(unit(activations).t().dot(&unit(y)).mapv(|v| v.clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoConnectivity {
    pub cos_sim: Array2<f64>,
    pub threshold_percentile: f64,
    pub threshold: f64,
    /// `binary[f, g]` is set iff `cos_sim[f, g] ≥ threshold`.
    pub binary: Array2<bool>,
}

impl PseudoConnectivity {
    pub fn new(cos_sim: Array2<f64>, percentile: f64) -> Self {
        let mut sorted: Vec<f64> = cos_sim.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        Self::with_sorted(cos_sim, &sorted, percentile)
    }

    fn with_sorted(cos_sim: Array2<f64>, sorted: &[f64], percentile: f64) -> Self {
        let threshold = if sorted.is_empty() {
            f64::INFINITY
        } else {
            percentile_sorted(sorted, percentile)
        };
        let binary = cos_sim.mapv(|v| v >= threshold);
        PseudoConnectivity {
            cos_sim,
            threshold_percentile: percentile,
            threshold,
            binary,
        }
    }

    pub fn n_ones(&self) -> usize {
        self.binary.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatch {
    pub threshold_percentile: f64,
    pub feature: usize,
    pub best_program: usize,
    pub hits: usize,
    pub set_size: usize,
    pub p_value: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub threshold_percentile: f64,
    pub threshold: f64,
    /// Features with an empty gene set at this threshold.
    pub n_skipped: usize,
    /// Features whose gene set overlaps no program.
    pub n_unmatched: usize,
    /// Programs chosen as best match by at least one feature.
    pub n_programs_matched: usize,
    /// Programs with at least one gene.
    pub n_programs: usize,
    /// Mean over matched programs of the best coverage any feature achieves.
    pub mean_coverage: f64,
    pub median_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub summaries: Vec<ThresholdSummary>,
    pub matches: Vec<FeatureMatch>,
}

impl StructureReport {
    pub fn summary(&self, percentile: f64) -> Option<&ThresholdSummary> {
        self.summaries.iter().find(|s| s.threshold_percentile == percentile)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("threshold,feature,best_program,hits,p_value,coverage\n");
        for m in &self.matches {
            out.push_str(&format!(
                "{},{},{},{},{:e},{}\n",
                m.threshold_percentile, m.feature, m.best_program, m.hits, m.p_value, m.coverage
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Gene sets of each program (column of the binary `m`, genes × programs).
fn program_sets(m: ArrayView2<f32>) -> Vec<Vec<bool>> {
    m.axis_iter(Axis(1))
        .map(|col| col.iter().map(|&v| v != 0.0).collect())
        .collect()
}

/// Matches one binarised similarity matrix against the programs of `m`.
pub fn match_programs(pseudo: &PseudoConnectivity, m: ArrayView2<f32>) -> Result<(ThresholdSummary, Vec<FeatureMatch>)> {
    let n_genes = m.nrows();
    if pseudo.binary.ncols() != n_genes {
        return Err(Error::shape("genes in connectivity", n_genes, pseudo.binary.ncols()));
    }
    let programs = program_sets(m);
    let sizes: Vec<usize> = programs.iter().map(|p| p.iter().filter(|&&b| b).count()).collect();
    let live: Vec<usize> = (0..programs.len()).filter(|&j| sizes[j] > 0).collect();

    let mut best_cover = vec![None::<f64>; programs.len()];
    let mut matches = Vec::new();
    let (mut n_skipped, mut n_unmatched) = (0, 0);
    for (f, row) in pseudo.binary.axis_iter(Axis(0)).enumerate() {
        let set_size = row.iter().filter(|&&b| b).count();
        if set_size == 0 {
            n_skipped += 1;
            continue;
        }
        let mut best: Option<(usize, usize)> = None;
        for &j in &live {
            let hits = row.iter().zip(&programs[j]).filter(|(&a, &b)| a && b).count();
            if best.is_none_or(|(_, h)| hits > h) {
                best = Some((j, hits));
            }
        }
        let Some((j, hits)) = best.filter(|&(_, h)| h > 0) else {
            n_unmatched += 1;
            continue;
        };
        let coverage = hits as f64 / sizes[j] as f64;
        let p_value = binomial_upper_tail(hits as u64, set_size as u64, sizes[j] as f64 / n_genes as f64);
        best_cover[j] = Some(best_cover[j].map_or(coverage, |c: f64| c.max(coverage)));
        matches.push(FeatureMatch {
            threshold_percentile: pseudo.threshold_percentile,
            feature: f,
            best_program: j,
            hits,
            set_size,
            p_value,
            coverage,
        });
    }
    let mut covers: Vec<f64> = best_cover.iter().flatten().copied().collect();
    covers.sort_by(f64::total_cmp);
    let (mean_coverage, median_coverage) = if covers.is_empty() {
        (0.0, 0.0)
    } else {
        (
            covers.iter().sum::<f64>() / covers.len() as f64,
            percentile_sorted(&covers, 50.0),
        )
    };
    let summary = ThresholdSummary {
        threshold_percentile: pseudo.threshold_percentile,
        threshold: pseudo.threshold,
        n_skipped,
        n_unmatched,
        n_programs_matched: covers.len(),
        n_programs: live.len(),
        mean_coverage,
        median_coverage,
    };
    Ok((summary, matches))
}

/// Thresholds `cos_sim` at each percentile and matches features to the
/// programs of `m` (genes × programs).
pub fn structure_recovery(cos_sim: &Array2<f64>, m: ArrayView2<f32>, percentiles: &[f64]) -> Result<StructureReport> {
    let mut sorted: Vec<f64> = cos_sim.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let mut report = StructureReport {
        summaries: Vec::new(),
        matches: Vec::new(),
    };
    for &q in percentiles {
        if !(0.0..=100.0).contains(&q) {
            return Err(Error::Argument(format!("percentile {q} outside [0, 100]")));
        }
        let pseudo = PseudoConnectivity::with_sorted(cos_sim.clone(), &sorted, q);
        let (summary, matches) = match_programs(&pseudo, m)?;
        report.summaries.push(summary);
        report.matches.extend(matches);
    }
    Ok(report)
}
