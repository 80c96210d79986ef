use serde::{Deserialize, Serialize};

use super::rdp::rdp_subsampled_gaussian;
use crate::error::{Error, Result};

/// Conversion recorded in manifests alongside every ε.
pub const CONVERSION_RULE: &str = "eps = min_a [rdp(a) + ln(1/delta)/(a - 1)]";

/// `{1.25, 1.5, …, 63}` followed by the integers `64..=256`.
pub fn default_orders() -> Vec<f64> {
    let mut orders: Vec<f64> = (5..=252).map(|k| k as f64 * 0.25).collect();
    orders.extend((64..=256).map(|a| a as f64));
    orders
}

/// A run of identical mechanism invocations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub sample_rate: f64,
    pub noise_multiplier: f64,
    pub steps: u64,
}

/// Cumulative RDP over a fixed order grid.
///
/// Totals are always recomputed as `Σ steps · per_step_rdp` over the merged
/// history, so splitting the same steps across calls yields a bitwise
/// identical state.
#[derive(Clone, Debug, PartialEq)]
pub struct AccountantState {
    orders: Vec<f64>,
    rdp: Vec<f64>,
    steps_taken: u64,
    history: Vec<Epoch>,
    per_step: Vec<Vec<f64>>,
}

impl AccountantState {
    pub fn new(orders: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::invalid("RDP order grid is empty"));
        }
        if orders.iter().any(|&a| !(a > 1.0)) {
            return Err(Error::invalid("RDP orders must exceed 1"));
        }
        let n = orders.len();
        Ok(Self {
            orders,
            rdp: vec![0.0; n],
            steps_taken: 0,
            history: Vec::new(),
            per_step: Vec::new(),
        })
    }

    /// Rebuilds a state by replaying `history` from scratch.
    pub fn replay(orders: Vec<f64>, history: &[Epoch]) -> Result<Self> {
        let mut state = Self::new(orders)?;
        for e in history {
            state.step(e.sample_rate, e.noise_multiplier, e.steps)?;
        }
        Ok(state)
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn rdp(&self) -> &[f64] {
        &self.rdp
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn history(&self) -> &[Epoch] {
        &self.history
    }

    /// Composes `n_steps` invocations of the subsampled Gaussian mechanism.
    pub fn step(&mut self, q: f64, sigma: f64, n_steps: u64) -> Result<()> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::invalid(format!("sample rate {q} outside (0, 1]")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("noise multiplier {sigma} must be positive")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("an accountant step must cover at least one step"));
        }
        match self.history.last_mut() {
            Some(last) if last.sample_rate == q && last.noise_multiplier == sigma => {
                last.steps += n_steps;
            }
            _ => {
                self.history.push(Epoch {
                    sample_rate: q,
                    noise_multiplier: sigma,
                    steps: n_steps,
                });
                self.per_step.push(
                    self.orders
                        .iter()
                        .map(|&a| rdp_subsampled_gaussian(q, sigma, a))
                        .collect(),
                );
            }
        }
        self.steps_taken += n_steps;
        for (k, total) in self.rdp.iter_mut().enumerate() {
            *total = self
                .history
                .iter()
                .zip(&self.per_step)
                .map(|(e, r)| e.steps as f64 * r[k])
                .sum();
        }
        Ok(())
    }

    /// `(ε, order achieving it)` under [`CONVERSION_RULE`]. An empty history
    /// has released nothing and converts to exactly zero.
    pub fn epsilon(&self, delta: f64) -> Result<(f64, Option<f64>)> {
        if self.steps_taken == 0 {
            check_delta(delta)?;
            return Ok((0.0, None));
        }
        let (eps, order) = conversion_bound(self, delta)?;
        Ok((eps, Some(order)))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 1)")));
    }
    Ok(())
}

/// Functional form of [`AccountantState::step`].
pub fn rdp_step(state: &AccountantState, q: f64, sigma: f64, n_steps: u64) -> Result<AccountantState> {
    let mut next = state.clone();
    next.step(q, sigma, n_steps)?;
    Ok(next)
}

pub fn rdp_to_dp(state: &AccountantState, delta: f64) -> Result<f64> {
    Ok(state.epsilon(delta)?.0)
}

/// The raw minimization `min_a [rdp(a) + ln(1/δ)/(a−1)]` over the grid,
/// without the empty-history shortcut of [`rdp_to_dp`].
pub fn conversion_bound(state: &AccountantState, delta: f64) -> Result<(f64, f64)> {
    check_delta(delta)?;
    let log_inv_delta = -delta.ln();
    state
        .orders
        .iter()
        .zip(&state.rdp)
        .map(|(&a, &r)| (r + log_inv_delta / (a - 1.0), a))
        .filter(|(e, _)| !e.is_nan())
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .ok_or_else(|| Error::invalid("RDP order grid is empty"))
}

/// Largest `n` with `ε(n steps) ≤ budget`; zero when one step already
/// exceeds it. Exponential bracketing followed by bisection.
pub fn max_steps_for_budget(
    epsilon_budget: f64,
    delta: f64,
    q: f64,
    sigma: f64,
    orders: &[f64],
) -> Result<u64> {
    check_delta(delta)?;
    let mut probe = AccountantState::new(orders.to_vec())?;
    probe.step(q, sigma, 1)?;
    let per_step = probe.rdp.clone();
    let log_inv_delta = -delta.ln();
    let eps_at = |n: u64| -> f64 {
        orders
            .iter()
            .zip(&per_step)
            .map(|(&a, &r)| n as f64 * r + log_inv_delta / (a - 1.0))
            .fold(f64::INFINITY, f64::min)
    };
    if !(eps_at(1) <= epsilon_budget) {
        return Ok(0);
    }
    const CAP: u64 = 1 << 52;
    let mut lo = 1u64;
    let mut hi = 2u64;
    while eps_at(hi) <= epsilon_budget {
        lo = hi;
        if hi >= CAP {
            return Ok(CAP);
        }
        hi *= 2;
    }
    // invariant: eps(lo) ≤ budget < eps(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eps_at(mid) <= epsilon_budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Smallest `σ` among `candidates` (taken in ascending order) whose budget
/// admits at least `min_steps` steps at sample rate `q`.
pub fn noise_for_steps(
    epsilon_budget: f64,
    delta: f64,
    q: f64,
    min_steps: u64,
    candidates: &[f64],
    orders: &[f64],
) -> Result<f64> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    for sigma in sorted {
        if max_steps_for_budget(epsilon_budget, delta, q, sigma, orders)? >= min_steps {
            return Ok(sigma);
        }
    }
    Err(Error::BudgetExhausted(format!(
        "no candidate noise multiplier allows {min_steps} steps at epsilon {epsilon_budget}, q = {q}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let g = default_orders();
        assert_eq!(g[0], 1.25);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*g.last().unwrap(), 256.0);
        assert!(g.contains(&63.0) && g.contains(&64.0));
    }

    #[test]
    fn fresh_state_is_zero_and_rejects_empty_steps() {
        let s = AccountantState::new(default_orders()).unwrap();
        assert!(s.rdp().iter().all(|&r| r == 0.0));
        assert_eq!(rdp_to_dp(&s, 1e-5).unwrap(), 0.0);
        assert_eq!(rdp_to_dp(&s, 0.5).unwrap(), 0.0);
        assert!(rdp_step(&s, 0.1, 1.0, 0).is_err());
        assert!(rdp_step(&s, 0.0, 1.0, 1).is_err());
        assert!(rdp_step(&s, 1.5, 1.0, 1).is_err());
        assert!(rdp_step(&s, 0.1, 0.0, 1).is_err());
        assert!(AccountantState::new(vec![]).is_err());
    }

    #[test]
    fn zero_step_bound_sits_at_the_largest_order() {
        let s = AccountantState::new(default_orders()).unwrap();
        let (eps, order) = conversion_bound(&s, 1e-5).unwrap();
        assert_eq!(order, 256.0);
        assert!((eps - 1e5f64.ln() / 255.0).abs() < 1e-15);
    }

    #[test]
    fn split_calls_equal_one_call() {
        let s = AccountantState::new(default_orders()).unwrap();
        let two = rdp_step(&rdp_step(&s, 0.02, 1.1, 50).unwrap(), 0.02, 1.1, 50).unwrap();
        let one = rdp_step(&s, 0.02, 1.1, 100).unwrap();
        assert_eq!(two, one);
        let odd = rdp_step(&rdp_step(&s, 0.02, 1.1, 37).unwrap(), 0.02, 1.1, 63).unwrap();
        assert_eq!(odd, one);
    }

    #[test]
    fn budget_smaller_than_one_step_gives_zero() {
        let n = max_steps_for_budget(0.01, 1e-5, 1.0, 1.0, &default_orders()).unwrap();
        assert_eq!(n, 0);
    }
}
