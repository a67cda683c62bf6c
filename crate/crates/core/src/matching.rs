//! Comparison of two feature spaces through their concept matrices.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::enrichment::ConceptMatrix;
use crate::error::Result;
use crate::io::write_json;

/// Jaccard distance between term sets; two empty sets are identical.
pub fn jaccard_distance(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).count() as f64 / union as f64
}

/// Pairwise distances between rows of `a` and rows of `b`. Rows are
/// compared by term id, so the matrices need not share columns.
pub fn jaccard_matrix(a: &ConceptMatrix, b: &ConceptMatrix) -> Array2<f64> {
    let (sa, sb) = (a.row_sets(), b.row_sets());
    Array2::from_shape_fn((sa.len(), sb.len()), |(i, j)| jaccard_distance(&sa[i], &sb[j]))
}

/// Minimum-cost assignment. Returns `(row, col)` pairs, one per row when
/// rows ≤ cols and one per column otherwise, sorted by row.
pub fn hungarian(cost: &Array2<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = cost.dim();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let transposed = rows > cols;
    let c = if transposed { cost.t().to_owned() } else { cost.clone() };
    let (n, m) = c.dim();

    // Potentials method with 1-based indexing; column 0 is a sentinel.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (r, c) = (owner[j] - 1, j - 1);
            if transposed {
                (c, r)
            } else {
                (r, c)
            }
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

pub fn assignment_cost(cost: &Array2<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[[i, j]]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub feature_a: String,
    pub feature_b: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub overall_similarity: f64,
    pub pairs: Vec<MatchedPair>,
}

impl MatchReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareOptions {
    /// Drop features without recorded terms before matching.
    pub exclude_empty: bool,
}

/// Optimal one-to-one matching on Jaccard distance; overall similarity is
/// the mean of `1 − distance` over matched pairs.
pub fn compare_feature_spaces(a: &ConceptMatrix, b: &ConceptMatrix) -> MatchReport {
    compare_feature_spaces_with(a, b, CompareOptions::default())
}

pub fn compare_feature_spaces_with(a: &ConceptMatrix, b: &ConceptMatrix, opts: CompareOptions) -> MatchReport {
    let keep = |m: &ConceptMatrix| -> Vec<(String, BTreeSet<String>)> {
        m.features
            .iter()
            .cloned()
            .zip(m.row_sets())
            .filter(|(_, s)| !opts.exclude_empty || !s.is_empty())
            .collect()
    };
    let (ra, rb) = (keep(a), keep(b));
    if ra.is_empty() || rb.is_empty() {
        return MatchReport {
            overall_similarity: 0.0,
            pairs: Vec::new(),
        };
    }
    let cost = Array2::from_shape_fn((ra.len(), rb.len()), |(i, j)| jaccard_distance(&ra[i].1, &rb[j].1));
    let assignment = hungarian(&cost);
    let pairs: Vec<MatchedPair> = assignment
        .iter()
        .map(|&(i, j)| MatchedPair {
            feature_a: ra[i].0.clone(),
            feature_b: rb[j].0.clone(),
            similarity: 1.0 - cost[[i, j]],
        })
        .collect();
    let overall = pairs.iter().map(|p| p.similarity).sum::<f64>() / pairs.len() as f64;
    MatchReport {
        overall_similarity: overall,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(ids: &[u32]) -> BTreeSet<String> {
        ids.iter().map(|i| format!("T{i}")).collect()
    }

    fn concept(sets: &[&[u32]]) -> ConceptMatrix {
        let features = (0..sets.len()).map(|i| format!("f{i}")).collect();
        let sets: Vec<BTreeSet<String>> = sets.iter().map(|s| set(s)).collect();
        ConceptMatrix::from_sets(features, &sets)
    }

    fn brute_force(cost: &Array2<f64>) -> f64 {
        let (r, c) = cost.dim();
        if r <= c {
            (0..c)
                .permutations(r)
                .map(|p| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        } else {
            brute_force(&cost.t().to_owned())
        }
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_distance(&set(&[1, 2]), &set(&[1, 2])), 0.0);
        assert_eq!(jaccard_distance(&set(&[1]), &set(&[2])), 1.0);
        assert_eq!(jaccard_distance(&set(&[1, 2, 3]), &set(&[2, 3, 4])), 0.5);
        assert_eq!(jaccard_distance(&set(&[]), &set(&[])), 0.0);
        assert_eq!(jaccard_distance(&set(&[]), &set(&[3])), 1.0);
    }

    #[test]
    fn jaccard_matrix_aligns_term_universes() {
        let a = concept(&[&[1, 2, 3]]);
        let b = concept(&[&[2, 3, 4], &[9]]);
        let d = jaccard_matrix(&a, &b);
        assert_eq!(d.dim(), (1, 2));
        assert_eq!(d[[0, 0]], 0.5);
        assert_eq!(d[[0, 1]], 1.0);
    }

    #[test]
    fn hungarian_identity() {
        let cost = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let a = hungarian(&cost);
        assert_eq!(a, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(assignment_cost(&cost, &a), 0.0);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (r, c) in [(6, 6), (2, 3), (3, 2), (4, 6), (1, 5)] {
            for _ in 0..30 {
                let cost = Array2::from_shape_simple_fn((r, c), || rng.random_range(0.0..1.0));
                let a = hungarian(&cost);
                assert_eq!(a.len(), r.min(c));
                assert!(a.iter().map(|p| p.0).all_unique() && a.iter().map(|p| p.1).all_unique());
                assert!((assignment_cost(&cost, &a) - brute_force(&cost)).abs() < 1e-12);
            }
        }
        assert!(hungarian(&Array2::zeros((0, 3))).is_empty());
    }

    #[test]
    fn compare_examples() {
        let a = concept(&[&[1, 2], &[3], &[]]);
        assert_eq!(compare_feature_spaces(&a, &a).overall_similarity, 1.0);
        let b = concept(&[&[7], &[8, 9]]);
        let r = compare_feature_spaces(&concept(&[&[1], &[2]]), &b);
        assert_eq!(r.overall_similarity, 0.0);
        assert_eq!(r.pairs.len(), 2);
        let empty = ConceptMatrix::from_sets(Vec::new(), &[]);
        let r = compare_feature_spaces(&a, &empty);
        assert_eq!((r.overall_similarity, r.pairs.len()), (0.0, 0));
    }

    #[test]
    fn exclude_empty_option() {
        let a = concept(&[&[1], &[]]);
        let b = concept(&[&[1], &[]]);
        let r = compare_feature_spaces_with(&a, &b, CompareOptions { exclude_empty: true });
        assert_eq!(r.pairs.len(), 1);
    }

    #[test]
    fn compare_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mut random = |rows: usize| -> ConceptMatrix {
                let sets: Vec<Vec<u32>> = (0..rows)
                    .map(|_| (0..12).filter(|_| rng.random_bool(0.3)).collect())
                    .collect();
                let refs: Vec<&[u32]> = sets.iter().map(|s| s.as_slice()).collect();
                concept(&refs)
            };
            let (a, b) = (random(7), random(5));
            let ab = compare_feature_spaces(&a, &b).overall_similarity;
            let ba = compare_feature_spaces(&b, &a).overall_similarity;
            assert!((ab - ba).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&ab));
        }
    }
}
