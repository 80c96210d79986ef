use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard normal prior `N(0, I_d)` over generator inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentPrior {
    pub dim: usize,
}

impl LatentPrior {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    /// `ln P_Z(z) = −(d/2)·ln(2π) − ‖z‖²/2`.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let sq: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * self.dim as f64 * std::f64::consts::TAU.ln() - 0.5 * sq
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        self.log_density(z).exp()
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim).map(|_| StandardNormal.sample(rng)).collect()
    }
}

/// `n` i.i.d. draws from the prior, deterministic in `seed`.
pub fn sample_prior(prior: &LatentPrior, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("cannot sample zero latent vectors"));
    }
    if prior.dim == 0 {
        return Err(Error::invalid("latent dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| prior.sample_with(&mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_and_determinism() {
        let prior = LatentPrior::new(3);
        let draws = sample_prior(&prior, 100_000, 42).unwrap();
        for k in 0..3 {
            let mean = draws.iter().map(|z| z[k]).sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|z| (z[k] - mean).powi(2)).sum::<f64>() / draws.len() as f64;
            assert!(mean.abs() <= 0.02, "mean {mean}");
            assert!((0.97..=1.03).contains(&var), "var {var}");
        }
        assert_eq!(sample_prior(&prior, 5, 7).unwrap(), sample_prior(&prior, 5, 7).unwrap());
        assert!(sample_prior(&prior, 0, 7).is_err());
    }

    #[test]
    fn density_matches_closed_form() {
        let prior = LatentPrior::new(2);
        let z = [0.3, -1.2];
        let expected = (-(0.09 + 1.44) / 2.0f64).exp() / std::f64::consts::TAU;
        assert!((prior.density(&z) - expected).abs() < 1e-15);
    }
}
