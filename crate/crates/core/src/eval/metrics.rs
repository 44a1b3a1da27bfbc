use ndarray::{Array2, ArrayView1};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shapes {0:?} and {1:?} differ")]
    Shape((usize, usize), (usize, usize)),
    #[error("empty sample")]
    Empty,
}

/// `(1/n) Σ_i sqrt((1/d) ‖y_i − ŷ_i‖²)`.
pub fn rmse(y: &Array2<f64>, y_hat: &Array2<f64>) -> Result<f64, MetricError> {
    if y.dim() != y_hat.dim() {
        return Err(MetricError::Shape(y.dim(), y_hat.dim()));
    }
    let (n, d) = y.dim();
    if n == 0 || d == 0 {
        return Err(MetricError::Empty);
    }
    let total: f64 = y
        .rows()
        .into_iter()
        .zip(y_hat.rows())
        .map(|(a, b)| (a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / d as f64).sqrt())
        .sum();
    Ok(total / n as f64)
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median of all pairwise Euclidean distances within `A ∪ B`; 1 when it is zero.
pub fn median_bandwidth(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let rows: Vec<_> = a.rows().into_iter().chain(b.rows()).collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            dists.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn mean_kernel(a: &Array2<f64>, b: &Array2<f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    for x in a.rows() {
        for y in b.rows() {
            total += (-gamma * sq_dist(x, y)).exp();
        }
    }
    total / (a.nrows() * b.nrows()) as f64
}

/// Biased MMD² estimate with kernel `exp(−‖x − y‖² / (2σ²))`; `σ` defaults to
/// [`median_bandwidth`].
pub fn mmd_rbf(a: &Array2<f64>, b: &Array2<f64>, bandwidth: Option<f64>) -> Result<f64, MetricError> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(MetricError::Empty);
    }
    if a.ncols() != b.ncols() {
        return Err(MetricError::Shape(a.dim(), b.dim()));
    }
    let sigma = bandwidth.unwrap_or_else(|| median_bandwidth(a, b));
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let v = mean_kernel(a, a, gamma) + mean_kernel(b, b, gamma) - 2.0 * mean_kernel(a, b, gamma);
    Ok(v.max(0.0))
}
