use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Laplace => "laplace",
        }
    }
}

/// Independent per-node noise. `scales` is the standard deviation for the
/// gaussian family and the Laplace scale `b` (variance `2b²`) otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    family: NoiseFamily,
    scales: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, scales: Vec<f64>) -> Result<Self, SimError> {
        if let Some(&s) = scales.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(SimError::InvalidParameter(format!("noise scale must be positive, got {s}")));
        }
        Ok(Self { family, scales })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn d(&self) -> usize {
        self.scales.len()
    }

    fn draw<R: Rng>(&self, node: usize, rng: &mut R) -> f64 {
        let s = self.scales[node];
        match self.family {
            NoiseFamily::Gaussian => s * Normal::new(0.0, 1.0).expect("valid normal").sample(rng),
            NoiseFamily::Laplace => {
                // inverse CDF on u ∈ (-1/2, 1/2)
                let u: f64 = rng.gen::<f64>() - 0.5;
                -s * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            }
        }
    }
}

/// `n × d` matrix of i.i.d. rows.
pub fn sample_noise<R: Rng>(spec: &NoiseSpec, n: usize, rng: &mut R) -> Result<Array2<f64>, SimError> {
    if n == 0 {
        return Err(SimError::InvalidParameter("need at least one noise row".into()));
    }
    let d = spec.d();
    let mut out = Array2::zeros((n, d));
    for r in 0..n {
        for i in 0..d {
            out[[r, i]] = spec.draw(i, rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_variance(col: ndarray::ArrayView1<f64>) -> f64 {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn gaussian_variance_within_clt_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let x = sample_noise(&NoiseSpec::new(NoiseFamily::Gaussian, vec![1.0]).unwrap(), n, &mut rng).unwrap();
        // sd of the sample variance is sqrt(2/(n-1)) for unit gaussian
        let sd = (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((sample_variance(x.column(0)) - 1.0).abs() < 3.0 * sd);
    }

    #[test]
    fn laplace_variance_is_two_b_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let b = 0.8;
        let x = sample_noise(&NoiseSpec::new(NoiseFamily::Laplace, vec![b]).unwrap(), n, &mut rng).unwrap();
        let var = 2.0 * b * b;
        // kurtosis 6 ⇒ Var(s²) ≈ (μ4 − σ⁴)/n = 5σ⁴/n
        let sd = (5.0 * var * var / n as f64).sqrt();
        assert!((sample_variance(x.column(0)) - var).abs() < 3.0 * sd);
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        assert!(NoiseSpec::new(NoiseFamily::Gaussian, vec![1.0, 0.0]).is_err());
        assert!(NoiseSpec::new(NoiseFamily::Laplace, vec![-1.0]).is_err());
    }
}
