use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Cryptographically strong, seedable stream for all DP noise.
pub type DpRng = ChaCha20Rng;

/// Euclidean norm, rescaled so that huge entries do not overflow.
pub fn l2_norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

/// Scales `g` by `min(1, c/‖g‖)` and returns the norm before clipping.
pub fn clip_in_place(g: &mut [f64], c: f64) -> f64 {
    let norm = l2_norm(g);
    if norm > c {
        let factor = c / norm;
        for v in g.iter_mut() {
            *v *= factor;
        }
    }
    norm
}

pub fn clip_per_sample(batch: &[Vec<f64>], c: f64) -> Result<Vec<Vec<f64>>> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!("clip norm {c} must be positive")));
    }
    Ok(batch
        .iter()
        .map(|g| {
            let mut g = g.clone();
            clip_in_place(&mut g, c);
            g
        })
        .collect())
}

/// `Σ gᵢ + ξ`, `ξ ~ N(0, (σC)² I)`. Inputs must already be clipped to `c`.
pub fn privatize_sum<R: Rng + ?Sized>(
    clipped: &[Vec<f64>],
    dim: usize,
    c: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(c > 0.0) || !(sigma >= 0.0) {
        return Err(Error::invalid(format!("bad privatization parameters C={c}, sigma={sigma}")));
    }
    let tolerance = c * 1e-9 + 1e-12;
    let mut sum = vec![0.0; dim];
    for (i, g) in clipped.iter().enumerate() {
        if g.len() != dim {
            return Err(Error::invalid(format!("gradient {i} has dimension {}, expected {dim}", g.len())));
        }
        let norm = l2_norm(g);
        if !(norm <= c + tolerance) {
            return Err(Error::ContractViolation(format!(
                "gradient {i} has norm {norm} above the clip bound {c}"
            )));
        }
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    if sigma > 0.0 {
        let std = sigma * c;
        for s in &mut sum {
            let z: f64 = StandardNormal.sample(rng);
            *s += std * z;
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn clip_examples() {
        let out = clip_per_sample(&[vec![3.0, 4.0], vec![0.3, 0.4], vec![0.0, 0.0]], 1.0).unwrap();
        assert!((out[0][0] - 0.6).abs() < 1e-15 && (out[0][1] - 0.8).abs() < 1e-15);
        assert_eq!(out[1], vec![0.3, 0.4]);
        assert_eq!(out[2], vec![0.0, 0.0]);
        assert!(clip_per_sample(&[vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn norm_survives_huge_entries() {
        let v = vec![1e200, 1e200];
        assert!((l2_norm(&v) / (1e200 * 2f64.sqrt()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_gives_exact_sum() {
        let mut rng = DpRng::seed_from_u64(0);
        let s = privatize_sum(&[vec![0.5, 0.0], vec![0.25, -0.5]], 2, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(s, vec![0.75, -0.5]);
    }

    #[test]
    fn unclipped_input_is_a_contract_violation() {
        let mut rng = DpRng::seed_from_u64(0);
        let err = privatize_sum(&[vec![3.0, 4.0]], 2, 1.0, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn noise_is_seeded() {
        let a = privatize_sum(&[], 4, 1.0, 1.0, &mut DpRng::seed_from_u64(9)).unwrap();
        let b = privatize_sum(&[], 4, 1.0, 1.0, &mut DpRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
