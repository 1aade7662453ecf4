//! Full-covariance RGB Gaussian mixtures fitted by k-means++ seeding and EM.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

pub const DEFAULT_COMPONENTS: usize = 5;
pub const DEFAULT_EM_ITERS: usize = 10;
pub const COV_REG: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub weight: f64,
    inv: Matrix3<f64>,
    log_norm: f64,
}

impl Gaussian {
    fn new(mean: Vector3<f64>, cov: Matrix3<f64>, weight: f64) -> Self {
        let cov = 0.5 * (cov + cov.transpose()) + Matrix3::identity() * COV_REG;
        let (inv, det) = match cov.cholesky() {
            Some(ch) => (ch.inverse(), cov.determinant()),
            None => {
                let c = Matrix3::identity() * COV_REG;
                (c.try_inverse().unwrap(), COV_REG.powi(3))
            }
        };
        let log_norm = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + det.max(1e-300).ln());
        Self {
            mean,
            cov,
            weight,
            inv,
            log_norm,
        }
    }

    fn log_pdf(&self, x: &Vector3<f64>) -> f64 {
        let d = x - self.mean;
        self.log_norm - 0.5 * d.dot(&(self.inv * d))
    }
}

/// Weights sum to one; covariances carry `+1e-5 I`.
#[derive(Debug, Clone)]
pub struct GmmColorModel {
    components: Vec<Gaussian>,
}

impl GmmColorModel {
    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    /// `None` when there are no samples.
    pub fn fit(
        samples: &[Vector3<f64>],
        k: usize,
        iters: usize,
        rng: &mut impl Rng,
    ) -> Option<Self> {
        if samples.is_empty() || k == 0 {
            return None;
        }
        let k = k.min(samples.len());
        let centers = kmeans_pp(samples, k, rng);
        let n = samples.len();
        // hard assignment to seeds for the first M-step
        let mut resp = vec![0.0; n * k];
        for (i, x) in samples.iter().enumerate() {
            let c = (0..k)
                .min_by(|&a, &b| {
                    (x - centers[a])
                        .norm_squared()
                        .total_cmp(&(x - centers[b]).norm_squared())
                })
                .unwrap();
            resp[i * k + c] = 1.0;
        }
        let mut model = Self {
            components: m_step(samples, &resp, k),
        };
        for _ in 0..iters {
            for (i, x) in samples.iter().enumerate() {
                let logs: Vec<f64> = model
                    .components
                    .iter()
                    .map(|g| {
                        if g.weight > 0.0 {
                            g.weight.ln() + g.log_pdf(x)
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = logs.iter().map(|l| (l - m).exp()).sum();
                for c in 0..k {
                    resp[i * k + c] = (logs[c] - m).exp() / s;
                }
            }
            model.components = m_step(samples, &resp, k);
        }
        Some(model)
    }

    pub fn log_likelihood(&self, x: &Vector3<f64>) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .filter(|g| g.weight > 0.0)
            .map(|g| g.weight.ln() + g.log_pdf(x))
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
    }
}

fn m_step(samples: &[Vector3<f64>], resp: &[f64], k: usize) -> Vec<Gaussian> {
    let n = samples.len() as f64;
    (0..k)
        .map(|c| {
            let nk: f64 = samples
                .iter()
                .enumerate()
                .map(|(i, _)| resp[i * k + c])
                .sum();
            if nk <= 1e-12 {
                return Gaussian::new(Vector3::zeros(), Matrix3::identity(), 0.0);
            }
            let mean: Vector3<f64> = samples
                .iter()
                .enumerate()
                .map(|(i, x)| x * resp[i * k + c])
                .sum::<Vector3<f64>>()
                / nk;
            let cov: Matrix3<f64> = samples
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let d = x - mean;
                    d * d.transpose() * resp[i * k + c]
                })
                .sum::<Matrix3<f64>>()
                / nk;
            Gaussian::new(mean, cov, nk / n)
        })
        .collect()
}

fn kmeans_pp(samples: &[Vector3<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let mut centers = vec![samples[rng.random_range(0..samples.len())]];
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|x| (x - centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.random_range(0..samples.len())
        } else {
            let mut t = rng.random_range(0.0..total);
            let mut chosen = samples.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    chosen = i;
                    break;
                }
                t -= d;
            }
            chosen
        };
        let c = samples[idx];
        centers.push(c);
        for (d, x) in d2.iter_mut().zip(samples) {
            *d = d.min((x - c).norm_squared());
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut samples = Vec::new();
        for _ in 0..200 {
            samples.push(
                Vector3::new(0.9, 0.1, 0.1)
                    + Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02)),
            );
            samples.push(
                Vector3::new(0.1, 0.1, 0.9)
                    + Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02)),
            );
        }
        let red = GmmColorModel::fit(
            &samples[..200]
                .iter()
                .step_by(2)
                .cloned()
                .collect::<Vec<_>>(),
            5,
            10,
            &mut rng,
        )
        .unwrap();
        let w: f64 = red.components().iter().map(|g| g.weight).sum();
        assert!((w - 1.0).abs() < 1e-9);
        for g in red.components() {
            assert!(g.cov.cholesky().is_some());
            assert!((g.cov - g.cov.transpose()).norm() < 1e-15);
        }
        let r = Vector3::new(0.9, 0.1, 0.1);
        let b = Vector3::new(0.1, 0.1, 0.9);
        assert!(red.log_likelihood(&r) > red.log_likelihood(&b) + 10.0);
    }

    #[test]
    fn constant_samples_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = vec![Vector3::new(0.5, 0.5, 0.5); 30];
        let g = GmmColorModel::fit(&s, 5, 10, &mut rng).unwrap();
        assert!(g.log_likelihood(&s[0]).is_finite());
        assert!(GmmColorModel::fit(&[], 5, 10, &mut rng).is_none());
    }
}
