//! Differential expression between high and low sample sets.

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const DEFAULT_PSEUDOCOUNT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument(format!(
            "t-test needs at least two samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let diff = ma - mb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if diff == 0.0 {
            WelchTest { t: 0.0, p: 1.0, df }
        } else {
            WelchTest {
                t: diff.signum() * f64::INFINITY,
                p: 0.0,
                df,
            }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Argument(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(WelchTest { t, p, df })
}

/// Benjamini–Hochberg adjusted p-values, in input order.
pub fn bh_correct(pvals: &[f64]) -> Vec<f64> {
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| pvals[i].total_cmp(&pvals[j]).then(i.cmp(&j)));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min((pvals[i] * m as f64 / (rank + 1) as f64).max(pvals[i]));
        q[i] = running.min(1.0);
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneDge {
    pub gene: usize,
    pub mean_high: f64,
    pub mean_low: f64,
    pub fold_change: f64,
    pub t: f64,
    pub p: f64,
    pub q: f64,
}

/// Per-gene results in gene order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgeResult {
    pub genes: Vec<GeneDge>,
}

impl DgeResult {
    /// Rows sorted by q, then gene index.
    pub fn sorted(&self) -> Vec<&GeneDge> {
        let mut rows: Vec<&GeneDge> = self.genes.iter().collect();
        rows.sort_by(|a, b| a.q.total_cmp(&b.q).then(a.gene.cmp(&b.gene)));
        rows
    }

    pub fn write_csv(&self, path: &Path, gene_ids: Option<&[String]>) -> Result<()> {
        let mut out = String::from("gene_id,mean_high,mean_low,fc,t,p,q\n");
        for g in self.sorted() {
            let id = gene_ids.and_then(|ids| ids.get(g.gene)).cloned().unwrap_or_else(|| g.gene.to_string());
            out.push_str(&format!(
                "{id},{},{},{},{},{:e},{:e}\n",
                g.mean_high, g.mean_low, g.fold_change, g.t, g.p, g.q
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Welch t-test, pseudocounted fold change and BH correction for every
/// gene (column of `expr`) between two disjoint sample sets.
pub fn dge_high_vs_low(expr: ArrayView2<f32>, high: &[usize], low: &[usize], pseudocount: f64) -> Result<DgeResult> {
    if high.len() < 2 || low.len() < 2 {
        return Err(Error::Argument(format!(
            "set too small: high {} and low {} samples, need at least 2 each",
            high.len(),
            low.len()
        )));
    }
    let n = expr.nrows();
    if let Some(&i) = high.iter().chain(low).find(|&&i| i >= n) {
        return Err(Error::Argument(format!("sample index {i} out of range ({n})")));
    }
    let mut in_high = vec![false; n];
    for &i in high {
        in_high[i] = true;
    }
    if low.iter().any(|&i| in_high[i]) {
        return Err(Error::Argument("high and low sets overlap".into()));
    }

    let mut genes = Vec::with_capacity(expr.ncols());
    let mut a = vec![0.0; high.len()];
    let mut b = vec![0.0; low.len()];
    for (g, col) in expr.columns().into_iter().enumerate() {
        for (slot, &i) in a.iter_mut().zip(high) {
            *slot = col[i] as f64;
        }
        for (slot, &i) in b.iter_mut().zip(low) {
            *slot = col[i] as f64;
        }
        let test = welch_t(&a, &b)?;
        let mean_high = a.iter().sum::<f64>() / a.len() as f64;
        let mean_low = b.iter().sum::<f64>() / b.len() as f64;
        genes.push(GeneDge {
            gene: g,
            mean_high,
            mean_low,
            fold_change: (mean_high + pseudocount) / (mean_low + pseudocount),
            t: test.t,
            p: test.p,
            q: 0.0,
        });
    }
    let p: Vec<f64> = genes.iter().map(|g| g.p).collect();
    for (g, q) in genes.iter_mut().zip(bh_correct(&p)) {
        g.q = q;
    }
    Ok(DgeResult { genes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn welch_examples() {
        let same = welch_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        let r = welch_t(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.p - 0.34659350708733416).abs() < 1e-10);
        let flat = welch_t(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!((flat.t, flat.p), (0.0, 1.0));
        assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn welch_large_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..50).map(|_| 10.0 + n.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..50).map(|_| n.sample(&mut rng)).collect();
        assert!(welch_t(&a, &b).unwrap().p < 1e-20);
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_correct(&[0.01, 0.02, 0.03, 0.04]), vec![0.04; 4]);
        assert_eq!(bh_correct(&[0.3, 0.3, 0.3]), vec![0.3; 3]);
        assert_eq!(bh_correct(&[0.2]), vec![0.2]);
        assert!(bh_correct(&[]).is_empty());
    }

    proptest! {
        #[test]
        fn welch_is_antisymmetric(a in prop::collection::vec(-5.0f64..5.0, 2..20), b in prop::collection::vec(-5.0f64..5.0, 2..20)) {
            let x = welch_t(&a, &b).unwrap();
            let y = welch_t(&b, &a).unwrap();
            prop_assert_eq!(x.t, -y.t);
            prop_assert_eq!(x.p, y.p);
        }

        #[test]
        fn bh_permutation_equivariant(p in prop::collection::vec(0.0f64..1.0, 1..40), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..p.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let q = bh_correct(&p);
            let shuffled: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            let q2 = bh_correct(&shuffled);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(q2[k], q[i]);
                prop_assert!(q[i] >= p[i]);
            }
        }
    }

    #[test]
    fn planted_gene_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1100;
        let mut expr = Array2::from_shape_simple_fn((n, 50), || rng.random_range(0.5f32..1.5));
        for i in 0..100 {
            expr[[i, 7]] *= 4.0;
        }
        let high: Vec<usize> = (0..100).collect();
        let low: Vec<usize> = (100..n).collect();
        let r = dge_high_vs_low(expr.view(), &high, &low, DEFAULT_PSEUDOCOUNT).unwrap();
        let g = &r.genes[7];
        assert!(g.q < 1e-5);
        assert!((g.fold_change - 4.0).abs() < 0.3);
        assert_eq!(r.sorted()[0].gene, 7);
    }

    #[test]
    fn null_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let expr = Array2::from_shape_simple_fn((300, 1000), || rng.random_range(0.0f32..3.0));
        let high: Vec<usize> = (0..100).collect();
        let low: Vec<usize> = (100..300).collect();
        let r = dge_high_vs_low(expr.view(), &high, &low, DEFAULT_PSEUDOCOUNT).unwrap();
        let hits = r.genes.iter().filter(|g| g.q < 0.05).count();
        assert!(hits as f64 / 1000.0 <= 0.06);
    }

    #[test]
    fn set_preconditions() {
        let expr = Array2::<f32>::zeros((10, 2));
        let err = dge_high_vs_low(expr.view(), &[], &[1, 2], 1e-8).unwrap_err();
        assert!(err.to_string().contains("set too small"));
        assert!(dge_high_vs_low(expr.view(), &[0, 1], &[1, 2], 1e-8).is_err());
        let r = dge_high_vs_low(expr.view(), &[0, 1], &[2, 3], 1e-8).unwrap();
        assert_eq!((r.genes[0].p, r.genes[0].fold_change), (1.0, 1.0));
    }
}
