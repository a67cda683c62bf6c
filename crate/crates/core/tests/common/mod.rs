//! Independent reference implementations and frozen fixtures shared by the
//! integration and acceptance tests.

#![allow(dead_code)]

use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct WelchCase {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Deserialize)]
pub struct MwuCase {
    pub values: Vec<f64>,
    pub term: Vec<usize>,
    /// Number of (term, other) pairs where the term value is larger, ties
    /// counting one half.
    pub u_term: f64,
    pub p: f64,
}

#[derive(Debug, Deserialize)]
pub struct BinomialTailCase {
    pub k: u64,
    pub n: u64,
    pub p: f64,
    pub tail: f64,
}

#[derive(Debug, Deserialize)]
struct Fixture<T> {
    cases: Vec<T>,
}

fn load<T: for<'de> Deserialize<'de>>(name: &str) -> Vec<T> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str::<Fixture<T>>(&text).expect("fixture parses").cases
}

/// Welch t-tests computed with scipy's `ttest_ind(equal_var=False)`.
pub fn welch_cases() -> Vec<WelchCase> {
    load("welch_cases.json")
}

/// Two-sided asymptotic Mann–Whitney tests with continuity correction
/// computed with scipy's `mannwhitneyu`.
pub fn mwu_cases() -> Vec<MwuCase> {
    load("mwu_cases.json")
}

/// Upper binomial tails summed exactly at 60 significant digits with
/// mpmath and rounded once.
pub fn binomial_tail_cases() -> Vec<BinomialTailCase> {
    load("binomial_tail_cases.json")
}

/// Step-up adjustment written directly from its definition:
/// `q_(i) = min_{j ≥ i} m·p_(j)/j`, clipped at 1.
pub fn bh_oracle(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap());
    let mut q = vec![0.0; m];
    for i in 0..m {
        let best = (i..m)
            .map(|j| p[order[j]] * m as f64 / (j + 1) as f64)
            .fold(f64::INFINITY, f64::min);
        q[order[i]] = best.min(1.0);
    }
    q
}

/// Midranks computed by counting: rank = #smaller + (#equal + 1)/2.
pub fn midranks_oracle(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let smaller = values.iter().filter(|&&w| w < v).count() as f64;
            let equal = values.iter().filter(|&&w| w == v).count() as f64;
            smaller + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided exact p-value by enumerating every size-`n1` subset of the
/// observed midranks.
pub fn mwu_enumeration_p(values: &[f64], term: &[usize]) -> f64 {
    let ranks = midranks_oracle(values);
    let n = values.len();
    let n1 = term.len();
    let n2 = n - n1;
    let u_of = |idx: &[usize]| -> f64 {
        let r1: f64 = idx.iter().map(|&i| ranks[i]).sum();
        (n1 * n2) as f64 + (n1 * (n1 + 1)) as f64 / 2.0 - r1
    };
    let mu = (n1 * n2) as f64 / 2.0;
    let dev = (u_of(term) - mu).abs();
    let (mut extreme, mut total) = (0u64, 0u64);
    let mut combo: Vec<usize> = (0..n1).collect();
    loop {
        total += 1;
        if (u_of(&combo) - mu).abs() >= dev - 1e-9 {
            extreme += 1;
        }
        let Some(pos) = (0..n1).rev().find(|&i| combo[i] < n - n1 + i) else {
            break;
        };
        combo[pos] += 1;
        for i in pos + 1..n1 {
            combo[i] = combo[i - 1] + 1;
        }
    }
    extreme as f64 / total as f64
}

/// Minimum assignment cost over every injective map from the smaller side.
pub fn brute_force_assignment(cost: &ndarray::Array2<f64>) -> f64 {
    let (r, c) = cost.dim();
    if r > c {
        return brute_force_assignment(&cost.t().to_owned());
    }
    fn rec(cost: &ndarray::Array2<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.nrows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..cost.ncols() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[[row, j]] + rec(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    rec(cost, 0, &mut vec![false; c])
}
