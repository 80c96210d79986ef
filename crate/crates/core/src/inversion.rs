//! Model inversion: find the latent vector whose generated image best
//! matches a target, while staying plausible under the standard normal prior.
//!
//! Two variants share one Adam loop:
//!
//! * [`invert_mi`] minimizes `‖G(z) − x‖²` subject to `P_Z(z) ≥ P_Z(z₀)`. The
//!   constraint set is the ball `‖z‖ ≤ ‖z₀‖`, so each step is followed by a
//!   radial projection.
//! * [`invert_gomi`] minimizes the Gaussian-modulated ratio
//!   `‖G(z) − x‖² / P_Z(z)`, unconstrained. The `(2π)^{-d/2}` factor is
//!   dropped; the ratio itself is `f(z)·exp(‖z‖²/2)` which overflows for
//!   moderate `d`, so the default target is the monotone surrogate
//!   `ln(f(z) + e) + ‖z‖²/2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::ExampleSource;
use crate::error::{Error, Result};
use crate::gan::{Generator, LatentMap};
use crate::latent_gan::LatentDataset;
use crate::manifest::{config_hash, RunManifest};
use crate::nn::optim::Adam;
use crate::prior::LatentPrior;

/// Beyond this, `exp(‖z‖²/2)` is no longer representable.
const MAX_EXP_ARGUMENT: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveForm {
    /// `f(z)·exp(‖z‖²/2)`.
    LiteralRatio,
    /// `ln(f(z) + e) + ‖z‖²/2`.
    LogSurrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionMethod {
    Mi,
    Gomi,
}

impl InversionMethod {
    pub fn code(self) -> u8 {
        match self {
            InversionMethod::Mi => 0,
            InversionMethod::Gomi => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(InversionMethod::Mi),
            1 => Some(InversionMethod::Gomi),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InversionMethod::Mi => "mi",
            InversionMethod::Gomi => "gomi",
        }
    }
}

impl std::str::FromStr for InversionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mi" => Ok(InversionMethod::Mi),
            "gomi" => Ok(InversionMethod::Gomi),
            other => Err(Error::invalid(format!("unknown inversion method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Tolerance `e`: Adam's denominator guard and the surrogate's log offset.
    pub epsilon_div: f64,
    pub objective_form: ObjectiveForm,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_div: 1e-8,
            objective_form: ObjectiveForm::LogSurrogate,
            restarts: 4,
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 {
            return Err(Error::invalid("iterations and restarts must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon_div > 0.0) {
            return Err(Error::invalid("learning rate and tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    pub z: Vec<f64>,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// `‖G(z) − x‖² / pixels`.
    pub reconstruction_mse: f64,
    pub restart_index: usize,
    /// Objective form the reported values are expressed in (GOMI only).
    pub form: Option<ObjectiveForm>,
    /// Radius `‖z₀‖` of the constraint ball (MI only).
    pub constraint_radius: Option<f64>,
    /// The literal ratio overflowed and the surrogate took over.
    pub fell_back: bool,
    /// The final iterate was worse than the start and the start was kept.
    pub reverted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub form: ObjectiveForm,
    pub fell_back: bool,
}

fn squared_residual(output: &[f64], target: &[f64]) -> f64 {
    output.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum()
}

fn half_norm_sq(z: &[f64]) -> f64 {
    0.5 * z.iter().map(|v| v * v).sum::<f64>()
}

/// Evaluates the Gaussian-modulated objective at `z`. A literal-ratio
/// request falls back to the surrogate (and says so) when the exponential
/// overflows.
pub fn gomi_objective(
    z: &[f64],
    gen: &dyn LatentMap,
    target: &[f64],
    form: ObjectiveForm,
    tolerance: f64,
) -> Result<ObjectiveValue> {
    check_dims(z, gen, target)?;
    let f = squared_residual(&gen.map(z), target);
    Ok(objective_from_parts(f, half_norm_sq(z), form, tolerance))
}

fn objective_from_parts(f: f64, h: f64, form: ObjectiveForm, tolerance: f64) -> ObjectiveValue {
    if form == ObjectiveForm::LiteralRatio {
        let value = f * h.exp();
        if h <= MAX_EXP_ARGUMENT && value.is_finite() {
            return ObjectiveValue { value, form, fell_back: false };
        }
    }
    ObjectiveValue {
        value: (f + tolerance).ln() + h,
        form: ObjectiveForm::LogSurrogate,
        fell_back: form == ObjectiveForm::LiteralRatio,
    }
}

/// Objective and its gradient with respect to `z`.
pub fn gomi_objective_and_gradient(
    z: &[f64],
    gen: &dyn LatentMap,
    target: &[f64],
    form: ObjectiveForm,
    tolerance: f64,
) -> (ObjectiveValue, Vec<f64>) {
    let mut f = 0.0;
    let (_, grad_f) = gen.map_with_pullback(z, &mut |out| {
        f = squared_residual(out, target);
        out.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect()
    });
    let h = half_norm_sq(z);
    let value = objective_from_parts(f, h, form, tolerance);
    let grad = match value.form {
        // exp(h)·(∇f + f·z)
        ObjectiveForm::LiteralRatio => {
            let e = h.exp();
            grad_f.iter().zip(z).map(|(g, zi)| e * (g + f * zi)).collect()
        }
        // ∇f / (f + e) + z
        ObjectiveForm::LogSurrogate => {
            let denom = f + tolerance;
            grad_f.iter().zip(z).map(|(g, zi)| g / denom + zi).collect()
        }
    };
    (value, grad)
}

fn check_dims(z: &[f64], gen: &dyn LatentMap, target: &[f64]) -> Result<()> {
    if z.len() != gen.latent_dim() {
        return Err(Error::invalid(format!(
            "latent has dimension {}, generator expects {}",
            z.len(),
            gen.latent_dim()
        )));
    }
    if target.len() != gen.output_dim() {
        return Err(Error::invalid(format!(
            "target has {} values, generator produces {}",
            target.len(),
            gen.output_dim()
        )));
    }
    Ok(())
}

fn adam_for(config: &InversionConfig, dim: usize) -> Adam {
    Adam::new(dim, config.learning_rate, config.beta1, config.beta2, config.epsilon_div)
}

/// One GOMI descent from `init`: plain Adam on the chosen objective form
/// for `config.iterations` steps.
fn gomi_descent(gen: &dyn LatentMap, target: &[f64], config: &InversionConfig, init: Vec<f64>) -> RestartOutcome {
    let tol = config.epsilon_div;
    let mut form = config.objective_form;
    let mut fell_back = false;
    let mut z = init.clone();
    let mut adam = adam_for(config, z.len());
    for _ in 0..config.iterations {
        let (value, grad) = gomi_objective_and_gradient(&z, gen, target, form, tol);
        if value.fell_back {
            form = ObjectiveForm::LogSurrogate;
            fell_back = true;
        }
        if !value.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return RestartOutcome::failed(init);
        }
        adam.step(&mut z, &grad);
    }
    let final_value = evaluate(gen, target, &z, form, tol);
    if final_value.fell_back {
        form = ObjectiveForm::LogSurrogate;
        fell_back = true;
    }
    let initial = evaluate(gen, target, &init, form, tol);
    RestartOutcome::settle(init, z, initial.value, final_value.value, Some(form), None, fell_back)
}

fn evaluate(gen: &dyn LatentMap, target: &[f64], z: &[f64], form: ObjectiveForm, tol: f64) -> ObjectiveValue {
    let f = squared_residual(&gen.map(z), target);
    objective_from_parts(f, half_norm_sq(z), form, tol)
}

/// Radial projection onto `‖z‖ ≤ radius`.
pub fn project_to_ball(z: &mut [f64], radius: f64) {
    let norm = crate::dp::l2_norm(z);
    if norm > radius {
        let s = radius / norm;
        for v in z.iter_mut() {
            *v *= s;
        }
    }
}

fn mi_descent(gen: &dyn LatentMap, target: &[f64], config: &InversionConfig, z0: Vec<f64>) -> RestartOutcome {
    let radius = crate::dp::l2_norm(&z0);
    let mut z = z0.clone();
    let mut adam = adam_for(config, z.len());
    for _ in 0..config.iterations {
        let (_, grad) = gen.map_with_pullback(&z, &mut |out| {
            out.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect()
        });
        if grad.iter().any(|g| !g.is_finite()) {
            return RestartOutcome::failed(z0);
        }
        adam.step(&mut z, &grad);
        project_to_ball(&mut z, radius);
    }
    let initial = squared_residual(&gen.map(&z0), target);
    let final_value = squared_residual(&gen.map(&z), target);
    RestartOutcome::settle(z0, z, initial, final_value, None, Some(radius), false)
}

struct RestartOutcome {
    z: Vec<f64>,
    initial: f64,
    final_value: f64,
    form: Option<ObjectiveForm>,
    radius: Option<f64>,
    fell_back: bool,
    reverted: bool,
}

impl RestartOutcome {
    fn failed(init: Vec<f64>) -> Self {
        Self {
            z: init,
            initial: f64::NAN,
            final_value: f64::NAN,
            form: None,
            radius: None,
            fell_back: false,
            reverted: false,
        }
    }

    /// Keeps the starting point when the descent ended above it.
    fn settle(
        init: Vec<f64>,
        z: Vec<f64>,
        initial: f64,
        final_value: f64,
        form: Option<ObjectiveForm>,
        radius: Option<f64>,
        fell_back: bool,
    ) -> Self {
        let reverted = final_value > initial;
        let (z, final_value) = if reverted { (init, initial) } else { (z, final_value) };
        Self {
            z,
            initial,
            final_value,
            form,
            radius,
            fell_back,
            reverted,
        }
    }
}

fn select(
    gen: &dyn LatentMap,
    target: &[f64],
    config: &InversionConfig,
    outcomes: Vec<RestartOutcome>,
) -> Result<InversionResult> {
    // when some restarts fell back, compare all of them in surrogate form
    let mixed = outcomes.iter().any(|o| o.fell_back) && outcomes.iter().any(|o| !o.fell_back);
    let rank = |o: &RestartOutcome| -> f64 {
        if mixed && o.form == Some(ObjectiveForm::LiteralRatio) {
            evaluate(gen, target, &o.z, ObjectiveForm::LogSurrogate, config.epsilon_div).value
        } else {
            o.final_value
        }
    };
    let best = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.final_value.is_finite())
        .min_by(|a, b| rank(a.1).total_cmp(&rank(b.1)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InversionFailure(format!("all {} restarts produced non-finite objectives", outcomes.len())))?;
    let o = outcomes.into_iter().nth(best).unwrap();
    let mse = squared_residual(&gen.map(&o.z), target) / target.len() as f64;
    Ok(InversionResult {
        z: o.z,
        initial_objective: o.initial,
        final_objective: o.final_value,
        reconstruction_mse: mse,
        restart_index: best,
        form: o.form,
        constraint_radius: o.radius,
        fell_back: o.fell_back,
        reverted: o.reverted,
    })
}

/// GOMI from prior-drawn starting points, one per restart.
pub fn invert_gomi(gen: &dyn LatentMap, target: &[f64], config: &InversionConfig) -> Result<InversionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    invert_gomi_with_rng(gen, target, config, &mut rng)
}

fn invert_gomi_with_rng(
    gen: &dyn LatentMap,
    target: &[f64],
    config: &InversionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<InversionResult> {
    config.validate()?;
    let prior = LatentPrior::new(gen.latent_dim());
    check_dims(&vec![0.0; prior.dim], gen, target)?;
    let outcomes = (0..config.restarts)
        .map(|_| gomi_descent(gen, target, config, prior.sample_with(rng)))
        .collect();
    select(gen, target, config, outcomes)
}

/// GOMI from a caller-chosen start (single descent).
pub fn invert_gomi_from(
    gen: &dyn LatentMap,
    target: &[f64],
    config: &InversionConfig,
    init: &[f64],
) -> Result<InversionResult> {
    config.validate()?;
    check_dims(init, gen, target)?;
    let outcome = gomi_descent(gen, target, config, init.to_vec());
    select(gen, target, config, vec![outcome])
}

/// Density-constrained inversion; `z₀` is redrawn for every restart.
pub fn invert_mi(gen: &dyn LatentMap, target: &[f64], config: &InversionConfig) -> Result<InversionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    invert_mi_with_rng(gen, target, config, &mut rng)
}

fn invert_mi_with_rng(
    gen: &dyn LatentMap,
    target: &[f64],
    config: &InversionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<InversionResult> {
    config.validate()?;
    let prior = LatentPrior::new(gen.latent_dim());
    check_dims(&vec![0.0; prior.dim], gen, target)?;
    let outcomes = (0..config.restarts)
        .map(|_| mi_descent(gen, target, config, prior.sample_with(rng)))
        .collect();
    select(gen, target, config, outcomes)
}

/// Independent stream for image `index`: same seed, distinct ChaCha stream.
fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn invert_one(
    gen: &dyn LatentMap,
    target: &[f64],
    method: InversionMethod,
    config: &InversionConfig,
    index: usize,
) -> Result<InversionResult> {
    let mut rng = image_rng(config.seed, index);
    match method {
        InversionMethod::Gomi => invert_gomi_with_rng(gen, target, config, &mut rng),
        InversionMethod::Mi => invert_mi_with_rng(gen, target, config, &mut rng),
    }
}

/// Largest tolerated share of failed images in a batch.
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// Inverts every private image independently (in parallel) and collects the
/// latents. Failed images are skipped and listed in the manifest.
pub fn invert_batch(
    gen: &Generator,
    d_s: &dyn ExampleSource,
    method: InversionMethod,
    config: &InversionConfig,
) -> Result<(LatentDataset, RunManifest)> {
    config.validate()?;
    if d_s.pixels() != gen.net.output_dim() {
        return Err(Error::invalid(format!(
            "images have {} values but the generator produces {}",
            d_s.pixels(),
            gen.net.output_dim()
        )));
    }
    let n = d_s.len();
    let results: Vec<(Option<u32>, Result<InversionResult>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let target = d_s.image_signed(i);
            (d_s.label(i), invert_one(gen, &target, method, config, i))
        })
        .collect();

    let d = gen.latent_dim;
    let mut vectors = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut mse = Vec::with_capacity(n);
    let mut failed = Vec::new();
    let mut fallbacks = 0usize;
    for (i, (label, r)) in results.into_iter().enumerate() {
        match r {
            Ok(res) => {
                vectors.extend(res.z.iter().map(|&v| v as f32));
                labels.push(label);
                mse.push(res.reconstruction_mse);
                fallbacks += res.fell_back as usize;
            }
            Err(_) => failed.push(i),
        }
    }
    if n > 0 && failed.len() as f64 > MAX_FAILURE_RATE * n as f64 {
        return Err(Error::BatchFailure {
            failed: failed.len(),
            total: n,
        });
    }
    let labels = if labels.iter().all(Option::is_some) {
        Some(labels.into_iter().map(Option::unwrap).collect())
    } else {
        None
    };
    let latents = LatentDataset::new(d, vectors, labels, mse, gen.checksum(), method)?;

    let mut manifest = RunManifest::new("invert", config_hash(&(method, config)));
    let stats = latents.mse_summary();
    manifest
        .seed("inversion", config.seed)
        .metric("method", method.name())
        .metric("images", n)
        .metric("inverted", latents.len())
        .metric("failed", failed.len())
        .metric("failed_indices", failed)
        .metric("literal_ratio_fallbacks", fallbacks)
        .metric("mse_mean", stats.mean)
        .metric("mse_median", stats.median)
        .metric("mse_max", stats.max)
        .metric("generator_checksum", gen.checksum());
    Ok((latents, manifest))
}
