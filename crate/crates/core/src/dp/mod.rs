//! DPSGD privatization primitives and a Rényi-DP accountant for the
//! Poisson-subsampled Gaussian mechanism.

mod accountant;
mod audit;
mod mechanism;
mod rdp;

pub use accountant::{
    conversion_bound, default_orders, max_steps_for_budget, noise_for_steps, rdp_step, rdp_to_dp,
    AccountantState, Epoch, CONVERSION_RULE,
};
pub use audit::{AuditLog, AuditRecord};
pub use mechanism::{clip_in_place, clip_per_sample, l2_norm, privatize_sum, DpRng};
pub use rdp::rdp_subsampled_gaussian;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adjacency notion used when accounting. Recorded in every private manifest.
pub const ADJACENCY: &str = "add-remove (sensitivity C)";

/// Privacy parameters of one DPSGD run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub sample_rate: f64,
    pub delta: f64,
    pub epsilon_budget: f64,
    /// RDP orders; the default grid when absent.
    #[serde(default)]
    pub orders: Option<Vec<f64>>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            clip_norm: 1.0,
            noise_multiplier: 1.1,
            sample_rate: 0.01,
            delta: 1e-5,
            epsilon_budget: 10.0,
            orders: None,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::invalid(format!("clip norm {} must be positive", self.clip_norm)));
        }
        if !(self.noise_multiplier > 0.0) {
            return Err(Error::invalid(format!(
                "noise multiplier {} must be positive",
                self.noise_multiplier
            )));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::invalid(format!("sample rate {} outside (0, 1]", self.sample_rate)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta {} outside (0, 1)", self.delta)));
        }
        if !(self.epsilon_budget >= 0.0) {
            return Err(Error::invalid(format!("epsilon budget {} is negative", self.epsilon_budget)));
        }
        let orders = self.orders();
        if orders.is_empty() || orders.iter().any(|&a| !(a > 1.0)) {
            return Err(Error::invalid("RDP orders must be a nonempty grid of values > 1"));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("RDP orders must be sorted ascending"));
        }
        Ok(())
    }

    pub fn orders(&self) -> Vec<f64> {
        self.orders.clone().unwrap_or_else(default_orders)
    }
}
