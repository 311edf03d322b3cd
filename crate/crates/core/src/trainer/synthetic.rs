use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Mean of the log-magnitudes.
    pub mu: f64,
    /// Standard deviation of the log-magnitudes.
    pub sigma: f64,
    pub seed: u64,
}

/// Gradient-like vectors: log-normal magnitudes with fair random signs.
#[derive(Clone, Debug)]
pub struct SyntheticGradientStream {
    n: usize,
    dist: LogNormal<f64>,
    rng: ChaCha8Rng,
}

impl SyntheticGradientStream {
    pub fn new(spec: &SyntheticSpec) -> Result<Self, TrainError> {
        if spec.sigma <= 0.0 || !spec.mu.is_finite() || !spec.sigma.is_finite() {
            return Err(TrainError::Invalid(format!(
                "log-normal parameters mu={} sigma={}",
                spec.mu, spec.sigma
            )));
        }
        if spec.n == 0 {
            return Err(TrainError::Invalid(
                "vector length must be at least 1".into(),
            ));
        }
        Ok(Self {
            n: spec.n,
            dist: LogNormal::new(spec.mu, spec.sigma)
                .map_err(|e| TrainError::Invalid(e.to_string()))?,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        })
    }

    pub fn next_vector(&mut self) -> Vec<f32> {
        (0..self.n)
            .map(|_| {
                let m = self.dist.sample(&mut self.rng) as f32;
                if self.rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect()
    }
}

impl Iterator for SyntheticGradientStream {
    type Item = Vec<f32>;

    fn next(&mut self) -> Option<Vec<f32>> {
        Some(self.next_vector())
    }
}
