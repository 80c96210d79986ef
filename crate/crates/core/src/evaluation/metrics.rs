//! Fréchet distance between Gaussian feature summaries and the Inception
//! Score of a class-probability table.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Probabilities below this are floored before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Tolerance on row sums of probability tables.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Mean and covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl GaussianSummary {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        if cov.nrows() != m || cov.ncols() != m {
            return Err(Error::invalid(format!(
                "covariance is {}×{}, mean has {m} entries",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature statistics must be finite"));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-9 * scale {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        Ok(Self { mean, cov, count: 0 })
    }

    /// Sample mean and unbiased covariance (zero covariance for one row).
    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map(Vec::len).ok_or_else(|| Error::invalid("no feature rows"))?;
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("feature rows have differing lengths"));
        }
        let mut mean = DVector::zeros(m);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(m, m);
        for r in rows {
            let c = DVector::from_column_slice(r) - &mean;
            cov.syger(1.0, &c, &c, 1.0);
        }
        if n > 1 {
            cov /= (n - 1) as f64;
        }
        cov.fill_upper_triangle_with_lower_triangle();
        let mut s = Self::new(mean, cov)?;
        s.count = n;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `V·diag(√max(λ,0))·Vᵀ` for a symmetric matrix.
fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`.
///
/// The trace of `(Σ_a Σ_b)^{1/2}` is taken as the trace of
/// `(Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}`, which has the same eigenvalues and is
/// symmetric. Negative eigenvalues from round-off are clamped to zero.
pub fn fid(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("feature dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    for s in [a, b] {
        if s.mean.iter().chain(s.cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature statistics must be finite"));
        }
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = psd_sqrt(&a.cov);
    let inner = &root_a * &b.cov * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InceptionScore {
    pub value: f64,
    /// Entries that fell below [`PROBABILITY_FLOOR`].
    pub floored: usize,
}

/// `exp(mean_i KL(p(y|x_i) ‖ p̄))` computed in log space.
pub fn inception_score(probs: &[Vec<f64>]) -> Result<InceptionScore> {
    let k = probs.first().map(Vec::len).ok_or_else(|| Error::invalid("no probability rows"))?;
    if k == 0 {
        return Err(Error::invalid("probability rows are empty"));
    }
    for (i, row) in probs.iter().enumerate() {
        if row.len() != k {
            return Err(Error::invalid(format!("row {i} has {} classes, expected {k}", row.len())));
        }
        if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid(format!("row {i} has an invalid probability")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::invalid(format!("row {i} sums to {sum}")));
        }
    }
    let n = probs.len() as f64;
    let mut marginal = vec![0.0; k];
    for row in probs {
        for (m, p) in marginal.iter_mut().zip(row) {
            *m += p / n;
        }
    }
    let log_floor = |p: f64| p.max(PROBABILITY_FLOOR).ln();
    let log_marginal: Vec<f64> = marginal.iter().map(|&m| log_floor(m)).collect();
    let floored = probs.iter().flatten().filter(|&&p| p < PROBABILITY_FLOOR).count();
    let mean_kl = probs
        .iter()
        .map(|row| {
            row.iter()
                .zip(&log_marginal)
                .filter(|(p, _)| **p > 0.0)
                .map(|(&p, lm)| p * (log_floor(p) - lm))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(InceptionScore {
        value: mean_kl.exp(),
        floored,
    })
}
