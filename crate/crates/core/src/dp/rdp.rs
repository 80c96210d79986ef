//! Per-step Rényi divergence of the Poisson-subsampled Gaussian mechanism
//! with unit sensitivity and noise multiplier σ.
//!
//! Integer orders use the exact binomial expansion of
//! `E[(μ(x)/μ₀(x))^α]`; fractional orders use the two-sided series that
//! splits the integral at `z₀ = σ² ln(1/q − 1) + 1/2`. Everything is carried
//! in log space.

use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

const LN_HALF: f64 = -std::f64::consts::LN_2;

pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, order: f64) -> f64 {
    debug_assert!(q > 0.0 && q <= 1.0 && sigma > 0.0 && order > 1.0);
    if q == 1.0 {
        return order / (2.0 * sigma * sigma);
    }
    if order.is_infinite() {
        return f64::INFINITY;
    }
    let log_a = if order.fract() == 0.0 && order <= 1.0e6 {
        log_a_integer(q, sigma, order as u64)
    } else {
        log_a_fractional(q, sigma, order)
    };
    log_a / (order - 1.0)
}

fn log_a_integer(q: f64, sigma: f64, order: u64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let mut acc = f64::NEG_INFINITY;
    for i in 0..=order {
        let fi = i as f64;
        let term = ln_binomial(order, i)
            + fi * lq
            + (order - i) as f64 * l1q
            + (fi * fi - fi) / (2.0 * sigma * sigma);
        acc = log_add(acc, term);
    }
    acc
}

fn log_a_fractional(q: f64, sigma: f64, order: f64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let denom = std::f64::consts::SQRT_2 * sigma;
    let (mut a0, mut a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    // binomial(order, i), updated multiplicatively; may change sign past i > order
    let mut coef = 1.0f64;
    let mut i = 0u64;
    loop {
        let fi = i as f64;
        let j = order - fi;
        let log_coef = coef.abs().ln();
        let log_t0 = log_coef + fi * lq + j * l1q;
        let log_t1 = log_coef + j * lq + fi * l1q;
        let log_e0 = LN_HALF + log_erfc((fi - z0) / denom);
        let log_e1 = LN_HALF + log_erfc((z0 - j) / denom);
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if coef > 0.0 {
            a0 = log_add(a0, log_s0);
            a1 = log_add(a1, log_s1);
        } else {
            a0 = log_sub(a0, log_s0);
            a1 = log_sub(a1, log_s1);
        }
        i += 1;
        coef *= (order - fi) / i as f64;
        if log_s0.max(log_s1) < -30.0 || coef == 0.0 || i > 1_000_000 {
            break;
        }
    }
    log_add(a0, a1)
}

/// `ln(erfc(x))`, accurate far into the upper tail where `erfc` underflows.
pub(crate) fn log_erfc(x: f64) -> f64 {
    if x < 20.0 {
        return erfc(x).ln();
    }
    let inv2 = 1.0 / (x * x);
    // asymptotic series 1 − 1/(2x²) + 3/(4x⁴) − 15/(8x⁶) + 105/(16x⁸)
    let series = 1.0 - 0.5 * inv2 + 0.75 * inv2 * inv2 - 1.875 * inv2.powi(3) + 6.5625 * inv2.powi(4);
    -x * x - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(eᵃ − eᵇ)`; saturates to `-inf` when the difference is not positive.
fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a <= b {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}
