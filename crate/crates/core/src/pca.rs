//! Principal components via SVD of the centred data.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `q × d`; each row has its largest-magnitude loading positive.
    pub components: Array2<f64>,
    pub explained_variance: Array1<f64>,
    pub explained_variance_ratio: Array1<f64>,
    /// `N × q` projected samples.
    pub coordinates: Array2<f64>,
}

pub fn pca(x: ArrayView2<f32>, q: usize) -> Result<Pca> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::Argument(format!("PCA needs at least two samples, got {n}")));
    }
    if q == 0 || q > n.min(d) {
        return Err(Error::Argument(format!(
            "number of components must be in 1..={}, got {q}",
            n.min(d)
        )));
    }
    let xf = x.mapv(f64::from);
    let mean = xf.mean_axis(ndarray::Axis(0)).expect("n ≥ 2");
    let centred = &xf - &mean;
    let m = DMatrix::from_fn(n, d, |i, j| centred[[i, j]]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested V");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();

    let mut components = Array2::zeros((q, d));
    let mut explained_variance = Array1::zeros(q);
    for (k, &idx) in order.iter().take(q).enumerate() {
        let row = vt.row(idx);
        let pivot = (0..d)
            .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()).then(b.cmp(&a)))
            .expect("d ≥ 1");
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[k, j]] = sign * row[j];
        }
        let s = svd.singular_values[idx];
        explained_variance[k] = s * s / (n - 1) as f64;
    }
    let explained_variance_ratio = if total > 0.0 {
        explained_variance.mapv(|v| v * (n - 1) as f64 / total)
    } else {
        Array1::zeros(q)
    };
    let coordinates = centred.dot(&components.t());
    Ok(Pca {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
        coordinates,
    })
}
