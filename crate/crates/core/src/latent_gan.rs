//! The differentially private latent-space WGAN.
//!
//! Only critic updates see private latents, and each of them goes through
//! per-sample clipping and the Gaussian mechanism on a Poisson-sampled
//! batch. Generator updates read nothing but critic outputs on generated
//! latents. The accountant is charged (and the audit log flushed) before
//! every critic update runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{LatentSource, Phase};
use crate::dp::{
    clip_in_place, max_steps_for_budget, privatize_sum, AccountantState, AuditLog, AuditRecord, DpConfig,
};
use crate::error::{Error, Result};
use crate::gan::{critic_loss_term, generator_batch_gradient, CriticMode, Discriminator, Generator};
use crate::inversion::InversionMethod;
use crate::io::{decode_latents, encode_latents, read_bytes, write_bytes, LatentFileContents};
use crate::manifest::{config_hash, PrivacyRecord, PrivateRecord, RunManifest};
use crate::nn::{arch, LayerSpec, Network, OptimizerConfig};
use crate::prior::LatentPrior;

pub const LATENT_FILE: &str = "latents.bin";
pub const MSE_FILE: &str = "latents.mse";

/// Inverted private latents, tied to the generator they were inverted
/// through.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDataset {
    dim: usize,
    vectors: Vec<f32>,
    labels: Option<Vec<u32>>,
    mse: Vec<f64>,
    source_generator_checksum: String,
    method: InversionMethod,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MseSummary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl LatentDataset {
    pub fn new(
        dim: usize,
        vectors: Vec<f32>,
        labels: Option<Vec<u32>>,
        mse: Vec<f64>,
        source_generator_checksum: String,
        method: InversionMethod,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("latent dimension must be positive"));
        }
        if vectors.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} values do not form rows of dimension {dim}",
                vectors.len()
            )));
        }
        let n = vectors.len() / dim;
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent vectors must be finite"));
        }
        if labels.as_ref().is_some_and(|l| l.len() != n) || mse.len() != n {
            return Err(Error::invalid("labels and mse must have one entry per latent"));
        }
        Ok(Self {
            dim,
            vectors,
            labels,
            mse,
            source_generator_checksum,
            method,
        })
    }

    /// Unlabeled latents from `f64` rows; mse is recorded as zero.
    pub fn from_rows(rows: &[Vec<f64>], source_generator_checksum: String, method: InversionMethod) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("latent rows have differing dimensions"));
        }
        let vectors = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(dim, vectors, None, vec![0.0; rows.len()], source_generator_checksum, method)
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn mse(&self) -> &[f64] {
        &self.mse
    }

    pub fn source_generator_checksum(&self) -> &str {
        &self.source_generator_checksum
    }

    pub fn method(&self) -> InversionMethod {
        self.method
    }

    pub fn mse_summary(&self) -> MseSummary {
        if self.mse.is_empty() {
            return MseSummary::default();
        }
        let mut sorted = self.mse.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        MseSummary {
            mean: sorted.iter().sum::<f64>() / n as f64,
            median,
            max: sorted[n - 1],
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_latents(&LatentFileContents {
            dim: self.dim,
            generator_checksum: self.source_generator_checksum.clone(),
            method: self.method.code(),
            vectors: self.vectors.clone(),
            labels: self.labels.clone(),
        })
    }

    /// Writes `latents.bin` and the one-value-per-line `latents.mse` sidecar.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join(LATENT_FILE), &self.to_bytes()?)?;
        let mut text = String::new();
        for m in &self.mse {
            text.push_str(&format!("{m:e}\n"));
        }
        write_bytes(&dir.join(MSE_FILE), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(LATENT_FILE);
        let c = decode_latents(&path, &read_bytes(&path)?)?;
        let method = InversionMethod::from_code(c.method)
            .ok_or_else(|| Error::format(&path, format!("unknown method code {}", c.method)))?;
        let mse_path = dir.join(MSE_FILE);
        let mse = match std::fs::read_to_string(&mse_path) {
            Ok(text) => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.trim().parse::<f64>().map_err(|e| Error::format(&mse_path, e.to_string())))
                .collect::<Result<Vec<_>>>()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => vec![0.0; c.vectors.len() / c.dim.max(1)],
            Err(e) => return Err(Error::io(&mse_path, e)),
        };
        Self::new(c.dim, c.vectors, c.labels, mse, c.generator_checksum, method)
            .map_err(|e| Error::format(&path, e.to_string()))
    }
}

impl LatentSource for LatentDataset {
    fn len(&self) -> usize {
        LatentDataset::len(self)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.vector(i).iter().map(|&v| v as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpGanConfig {
    /// Input dimension `d''` of the latent generator.
    pub inner_latent_dim: usize,
    /// Hidden widths shared by both MLPs (two hidden layers: three linear layers).
    pub hidden: Vec<usize>,
    pub critic_steps: usize,
    /// Expected batch size; sets `q = batch_size / n`. When absent,
    /// `dp.sample_rate` is used as given.
    pub batch_size: Option<usize>,
    /// Generated latents per generator update.
    pub generator_batch: usize,
    pub generator_optimizer: OptimizerConfig,
    pub critic_optimizer: OptimizerConfig,
    pub weight_clip: f64,
    pub dp: DpConfig,
    /// Decay of the exponential moving average of generator weights that is
    /// released instead of the last iterate. Zero releases the last iterate.
    pub generator_ema: f64,
    /// Cap on private critic updates; the budget may stop training earlier.
    pub max_critic_steps: u64,
    /// Debug only: permits `σ = 0` and records an unbounded guarantee.
    #[serde(default)]
    pub unbounded_debug: bool,
    pub seed: u64,
}

impl Default for DpGanConfig {
    fn default() -> Self {
        Self {
            inner_latent_dim: 16,
            hidden: vec![128, 128],
            critic_steps: 5,
            batch_size: Some(64),
            generator_batch: 64,
            generator_optimizer: OptimizerConfig::Adam { learning_rate: 1e-3, beta1: 0.5, beta2: 0.9, epsilon: 1e-8 },
            critic_optimizer: OptimizerConfig::Adam { learning_rate: 1e-3, beta1: 0.5, beta2: 0.9, epsilon: 1e-8 },
            weight_clip: 0.1,
            generator_ema: 0.99,
            dp: DpConfig::default(),
            max_critic_steps: 20_000,
            unbounded_debug: false,
            seed: 0,
        }
    }
}

impl DpGanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_latent_dim == 0 || self.critic_steps == 0 || self.generator_batch == 0 {
            return Err(Error::invalid(
                "inner latent dimension, critic steps and generator batch must be at least 1",
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.generator_ema) {
            return Err(Error::invalid("generator EMA decay must lie in [0, 1)"));
        }
        if !(self.weight_clip > 0.0) {
            return Err(Error::invalid("weight clip must be positive"));
        }
        if self.unbounded_debug {
            if self.dp.noise_multiplier < 0.0 {
                return Err(Error::invalid("noise multiplier must be nonnegative"));
            }
            let mut probe = self.dp.clone();
            probe.noise_multiplier = 1.0;
            probe.validate()
        } else {
            self.dp.validate()
        }
    }

    /// Poisson sampling rate for a dataset of `n` latents.
    pub fn sample_rate(&self, n: usize) -> f64 {
        match self.batch_size {
            Some(b) => (b as f64 / n as f64).min(1.0),
            None => self.dp.sample_rate,
        }
    }
}

/// Output of [`train_dp_latent_gan`].
#[derive(Clone, Debug)]
pub struct DpLatentGan {
    pub generator: Generator,
    pub critic: Discriminator,
    pub accountant: AccountantState,
    pub manifest: RunManifest,
}

/// Critic updates the budget allows, capped by the configuration.
pub fn planned_critic_steps(config: &DpGanConfig, n: usize) -> Result<u64> {
    if config.unbounded_debug {
        return Ok(config.max_critic_steps);
    }
    let q = config.sample_rate(n);
    let affordable = max_steps_for_budget(
        config.dp.epsilon_budget,
        config.dp.delta,
        q,
        config.dp.noise_multiplier,
        &config.dp.orders(),
    )?;
    Ok(affordable.min(config.max_critic_steps))
}

pub fn train_dp_latent_gan(
    latents: &dyn LatentSource,
    config: &DpGanConfig,
    audit: &mut AuditLog,
) -> Result<DpLatentGan> {
    config.validate()?;
    let n = latents.len();
    if n == 0 {
        return Err(Error::invalid("latent dataset is empty"));
    }
    let d = latents.dim();
    let q = config.sample_rate(n);
    let sigma = config.dp.noise_multiplier;
    let clip = config.dp.clip_norm;
    let delta = config.dp.delta;
    let total_steps = planned_critic_steps(config, n)?;
    if total_steps == 0 {
        return Err(Error::BudgetExhausted(format!(
            "epsilon budget {} does not cover one step at q = {q}, sigma = {sigma}",
            config.dp.epsilon_budget
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let g_arch = arch::mlp("latent-generator", config.inner_latent_dim, &config.hidden, d, LayerSpec::Relu, None);
    let c_arch = arch::mlp("latent-critic", d, &config.hidden, 1, LayerSpec::LeakyRelu { slope: 0.2 }, None);
    let mut gen = Generator::new(Network::init(g_arch, &mut rng)?, vec![d])?;
    let mut critic = Discriminator::new(Network::init(c_arch, &mut rng)?, CriticMode::Wasserstein)?;
    critic.net.clip_weights(config.weight_clip);
    let mut g_opt = config.generator_optimizer.build(gen.net.param_count());
    let mut c_opt = config.critic_optimizer.build(critic.net.param_count());
    let inner = LatentPrior::new(config.inner_latent_dim);
    let mut accountant = AccountantState::new(config.dp.orders())?;
    let expected_batch = q * n as f64;
    let mut ema = gen.net.params.clone();

    let mut critic_loss = 0.0;
    let mut gen_loss = 0.0;
    let mut realized_batches = 0usize;
    let mut step = 0u64;
    let fail = |step: u64, reason: String, acc: &AccountantState| Error::TrainingFailure {
        step: step as usize,
        reason,
        last_good: None,
        accountant: Some(Box::new(acc.clone())),
    };
    while step < total_steps {
        let burst = (config.critic_steps as u64).min(total_steps - step);
        for _ in 0..burst {
            if !config.unbounded_debug {
                accountant.step(q, sigma, 1)?;
                let (eps, _) = accountant.epsilon(delta)?;
                audit.append(AuditRecord {
                    sample_rate: q,
                    noise_multiplier: sigma,
                    steps: accountant.steps_taken(),
                    epsilon_so_far: eps,
                    delta,
                })?;
            }
            latents.enter_phase(Phase::CriticUpdate);
            let batch: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < q).collect();
            realized_batches += batch.len();
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = batch
                .iter()
                .map(|&i| (latents.row(i), gen.generate(&inner.sample_with(&mut rng))))
                .collect();
            let per_sample: Vec<(f64, Vec<f64>)> = pairs
                .par_iter()
                .map(|(real, fake)| {
                    let (loss, mut g) = per_sample_critic_gradient(&critic, real, fake);
                    clip_in_place(&mut g, clip);
                    (loss, g)
                })
                .collect();
            critic_loss = per_sample.iter().map(|(l, _)| l).sum::<f64>() / expected_batch;
            let grads: Vec<Vec<f64>> = per_sample.into_iter().map(|(_, g)| g).collect();
            let mut noisy = privatize_sum(&grads, critic.net.param_count(), clip, sigma, &mut rng)?;
            for v in &mut noisy {
                *v /= expected_batch;
            }
            c_opt.step(&mut critic.net.params, &noisy);
            critic.net.clip_weights(config.weight_clip);
            step += 1;
        }

        latents.enter_phase(Phase::GeneratorUpdate);
        let zs: Vec<Vec<f64>> = (0..config.generator_batch).map(|_| inner.sample_with(&mut rng)).collect();
        let (loss, grad) = generator_batch_gradient(&gen, &critic, &zs);
        gen_loss = loss;
        g_opt.step(&mut gen.net.params, &grad);
        let decay = config.generator_ema;
        for (a, p) in ema.iter_mut().zip(&gen.net.params) {
            *a = decay * *a + (1.0 - decay) * p;
        }

        if !critic_loss.is_finite() || !gen_loss.is_finite() || !gen.net.is_finite() || !critic.net.is_finite() {
            return Err(fail(
                step,
                format!("objective diverged (critic {critic_loss}, generator {gen_loss})"),
                &accountant,
            ));
        }
    }

    gen.net.params = ema;
    let privacy = if config.unbounded_debug {
        PrivacyRecord::Unbounded {
            reason: format!("debug run with noise multiplier {sigma}"),
        }
    } else {
        PrivacyRecord::Private(PrivateRecord::from_state(&accountant, delta, config.dp.epsilon_budget, clip)?)
    };
    let mut manifest = RunManifest::new("train-dp", config_hash(config));
    manifest.privacy = privacy;
    manifest
        .seed("training", config.seed)
        .metric("latents", n)
        .metric("latent_dim", d)
        .metric("inner_latent_dim", config.inner_latent_dim)
        .metric("sample_rate", q)
        .metric("critic_steps_taken", step)
        .metric("mean_realized_batch", realized_batches as f64 / step.max(1) as f64)
        .metric("final_critic_loss", critic_loss)
        .metric("final_generator_loss", gen_loss)
        .metric("generator_checksum", gen.checksum());
    Ok(DpLatentGan {
        generator: gen,
        critic,
        accountant,
        manifest,
    })
}

/// Gradient of the per-example critic loss `f(fake) − f(real)`.
fn per_sample_critic_gradient(critic: &Discriminator, real: &[f64], fake: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; critic.net.param_count()];
    let mut loss = 0.0;
    for (x, is_real) in [(real, true), (fake, false)] {
        let trace = critic.net.forward(x);
        let (l, dl) = critic_loss_term(critic.mode, trace.output()[0], is_real);
        loss += l;
        critic.net.backward(&trace, &[dl], Some(&mut grad));
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_latents(n: usize, seed: u64) -> LatentDataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { 1.0 } else { -0.5 };
                vec![c + 0.1 * rng.random::<f64>(), 0.5 - c + 0.1 * rng.random::<f64>()]
            })
            .collect();
        LatentDataset::from_rows(&rows, "00".repeat(32), InversionMethod::Gomi).unwrap()
    }

    #[test]
    fn latent_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = LatentDataset::new(
            2,
            vec![0.5, -1.0, 2.0, 3.5],
            Some(vec![1, 3]),
            vec![0.25, 1e-7],
            "ab".repeat(32),
            InversionMethod::Mi,
        )
        .unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(LatentDataset::load(dir.path()).unwrap(), ds);
        let s = ds.mse_summary();
        assert_eq!(s.max, 0.25);
        assert!((s.median - (0.25 + 1e-7) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_latents_are_rejected() {
        let r = LatentDataset::new(1, vec![f32::NAN], None, vec![0.0], "00".repeat(32), InversionMethod::Gomi);
        assert!(r.is_err());
    }

    #[test]
    fn budget_below_one_step_trains_nothing() {
        let latents = blob_latents(200, 1);
        let mut config = DpGanConfig::default();
        config.dp.epsilon_budget = 1e-3;
        let mut log = AuditLog::in_memory();
        let err = train_dp_latent_gan(&latents, &config, &mut log).unwrap_err();
        assert!(matches!(err, Error::BudgetExhausted(_)));
        assert!(log.records().is_empty());
    }

    #[test]
    fn steps_respect_the_budget_and_replay() {
        let latents = blob_latents(400, 2);
        let mut config = DpGanConfig {
            hidden: vec![16, 16],
            batch_size: Some(8),
            max_critic_steps: 1_000_000,
            ..Default::default()
        };
        config.dp.epsilon_budget = 1.0;
        config.dp.noise_multiplier = 2.0;
        let mut log = AuditLog::in_memory();
        let out = train_dp_latent_gan(&latents, &config, &mut log).unwrap();
        let q = config.sample_rate(400);
        let cap = max_steps_for_budget(1.0, 1e-5, q, 2.0, &config.dp.orders()).unwrap();
        assert_eq!(out.accountant.steps_taken(), cap);
        assert_eq!(log.records().len() as u64, cap);
        let PrivacyRecord::Private(rec) = &out.manifest.privacy else {
            panic!("expected a private record")
        };
        assert!(rec.epsilon <= 1.0);
        assert_eq!(rec.replay_epsilon().unwrap(), rec.epsilon);
    }

    #[test]
    fn zero_noise_requires_debug_flag() {
        let latents = blob_latents(50, 3);
        let mut config = DpGanConfig { max_critic_steps: 10, ..Default::default() };
        config.dp.noise_multiplier = 0.0;
        let mut log = AuditLog::in_memory();
        assert!(train_dp_latent_gan(&latents, &config, &mut log).is_err());
        config.unbounded_debug = true;
        let out = train_dp_latent_gan(&latents, &config, &mut log).unwrap();
        assert!(matches!(out.manifest.privacy, PrivacyRecord::Unbounded { .. }));
        assert_eq!(out.generator.net.output_dim(), 2);
    }
}
