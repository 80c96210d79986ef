//! Generator / discriminator abstractions, the two adversarial value
//! functions, and non-private training of the public GAN.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::manifest::{config_hash, RunManifest};
use crate::nn::{arch, Architecture, LayerSpec, Network, OptimizerConfig};
use crate::prior::LatentPrior;

/// A differentiable map from latent space, as seen by model inversion.
pub trait LatentMap: Sync {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn map(&self, z: &[f64]) -> Vec<f64>;
    /// Returns `(G(z), Jᵀ·grad_out)` for the `grad_out` produced by `loss`
    /// from the output.
    fn map_with_pullback(&self, z: &[f64], loss: &mut dyn FnMut(&[f64]) -> Vec<f64>) -> (Vec<f64>, Vec<f64>);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub net: Network,
    pub latent_dim: usize,
    /// `[h, w, c]` for image generators, `[d]` for latent-space generators.
    pub output_shape: Vec<usize>,
}

impl Generator {
    pub fn new(net: Network, output_shape: Vec<usize>) -> Result<Self> {
        if output_shape.iter().product::<usize>() != net.output_dim() {
            return Err(Error::invalid(format!(
                "output shape {output_shape:?} does not match network output {}",
                net.output_dim()
            )));
        }
        Ok(Self {
            latent_dim: net.input_dim(),
            net,
            output_shape,
        })
    }

    pub fn prior(&self) -> LatentPrior {
        LatentPrior::new(self.latent_dim)
    }

    pub fn generate(&self, z: &[f64]) -> Vec<f64> {
        self.net.predict(z)
    }

    pub fn arch_id(&self) -> &str {
        &self.net.arch().id
    }

    pub fn checksum(&self) -> String {
        self.net.checksum()
    }
}

impl LatentMap for Generator {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn map(&self, z: &[f64]) -> Vec<f64> {
        self.generate(z)
    }

    fn map_with_pullback(&self, z: &[f64], loss: &mut dyn FnMut(&[f64]) -> Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let trace = self.net.forward(z);
        let grad_out = loss(trace.output());
        let grad_z = self.net.backward(&trace, &grad_out, None);
        (trace.output().to_vec(), grad_z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    /// Outputs a probability `C(x) ∈ (0, 1)` through a sigmoid.
    Vanilla,
    /// Outputs an unbounded real score `f_w(x)`.
    Wasserstein,
}

/// The network always produces one raw value; vanilla mode squashes it.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: Network,
    pub mode: CriticMode,
}

impl Discriminator {
    pub fn new(net: Network, mode: CriticMode) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::invalid("discriminator must have a single output"));
        }
        Ok(Self { net, mode })
    }

    pub fn raw(&self, x: &[f64]) -> f64 {
        self.net.predict(x)[0]
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        match self.mode {
            CriticMode::Vanilla => crate::nn_sigmoid(self.raw(x)),
            CriticMode::Wasserstein => self.raw(x),
        }
    }
}

/// Value of the minimax objective together with how many probabilities hit
/// the clamp floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanValue {
    pub value: f64,
    pub clamped: usize,
}

pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// `mean log C(x) + mean log(1 − C(G(z)))` from precomputed probabilities.
pub fn gan_value_from_probabilities(real: &[f64], fake: &[f64], floor: f64) -> Result<GanValue> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid("gan value needs nonempty real and fake batches"));
    }
    let mut clamped = 0;
    let mut safe_log = |p: f64| {
        if p < floor {
            clamped += 1;
            floor.ln()
        } else {
            p.ln()
        }
    };
    let real_term = real.iter().map(|&p| safe_log(p)).sum::<f64>() / real.len() as f64;
    let fake_term = fake.iter().map(|&p| safe_log(1.0 - p)).sum::<f64>() / fake.len() as f64;
    Ok(GanValue {
        value: real_term + fake_term,
        clamped,
    })
}

fn check_batches(real: &[Vec<f64>], z: &[Vec<f64>], disc: &Discriminator, gen: &Generator) -> Result<()> {
    if real.iter().any(|x| x.len() != disc.net.input_dim()) {
        return Err(Error::invalid("real batch does not match discriminator input"));
    }
    if z.iter().any(|v| v.len() != gen.latent_dim) {
        return Err(Error::invalid("latent batch does not match generator"));
    }
    if gen.net.output_dim() != disc.net.input_dim() {
        return Err(Error::invalid("generator output does not match discriminator input"));
    }
    Ok(())
}

pub fn gan_value(
    disc: &Discriminator,
    gen: &Generator,
    real_batch: &[Vec<f64>],
    z_batch: &[Vec<f64>],
) -> Result<GanValue> {
    if disc.mode != CriticMode::Vanilla {
        return Err(Error::invalid("gan_value requires a vanilla discriminator"));
    }
    check_batches(real_batch, z_batch, disc, gen)?;
    let real: Vec<f64> = real_batch.iter().map(|x| disc.score(x)).collect();
    let fake: Vec<f64> = z_batch.iter().map(|z| disc.score(&gen.generate(z))).collect();
    gan_value_from_probabilities(&real, &fake, PROBABILITY_FLOOR)
}

/// `mean f(real) − mean f(fake)` from precomputed critic scores.
pub fn wgan_value_from_scores(real: &[f64], fake: &[f64]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid("wgan value needs nonempty real and fake batches"));
    }
    Ok(real.iter().sum::<f64>() / real.len() as f64 - fake.iter().sum::<f64>() / fake.len() as f64)
}

pub fn wgan_value(
    critic: &Discriminator,
    gen: &Generator,
    real_batch: &[Vec<f64>],
    z_batch: &[Vec<f64>],
) -> Result<f64> {
    if critic.mode != CriticMode::Wasserstein {
        return Err(Error::invalid("wgan_value requires a Wasserstein critic"));
    }
    check_batches(real_batch, z_batch, critic, gen)?;
    let real: Vec<f64> = real_batch.iter().map(|x| critic.raw(x)).collect();
    let fake: Vec<f64> = z_batch.iter().map(|z| critic.raw(&gen.generate(z))).collect();
    wgan_value_from_scores(&real, &fake)
}

// ---------------------------------------------------------------------------
// public GAN training

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchChoice {
    Mlp { hidden: Vec<usize> },
    /// DCGAN-style networks for 32×32 images.
    Dcgan { width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lipschitz {
    WeightClip { bound: f64 },
    /// Penalizes `(D_u f(x̂) − 1)²` where `D_u` is a finite-difference
    /// directional derivative along the normalized input gradient at
    /// interpolates `x̂`.
    GradientPenalty { weight: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PublicGanConfig {
    pub objective: CriticMode,
    pub latent_dim: usize,
    pub architecture: ArchChoice,
    /// Generator updates.
    pub steps: usize,
    pub critic_steps: usize,
    pub batch_size: usize,
    pub generator_optimizer: OptimizerConfig,
    pub critic_optimizer: OptimizerConfig,
    pub lipschitz: Lipschitz,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for PublicGanConfig {
    fn default() -> Self {
        Self {
            objective: CriticMode::Wasserstein,
            latent_dim: 64,
            architecture: ArchChoice::Dcgan { width: 32 },
            steps: 20_000,
            critic_steps: 5,
            batch_size: 64,
            generator_optimizer: OptimizerConfig::RmsProp { learning_rate: 5e-5, decay: 0.99, epsilon: 1e-8 },
            critic_optimizer: OptimizerConfig::RmsProp { learning_rate: 5e-5, decay: 0.99, epsilon: 1e-8 },
            lipschitz: Lipschitz::WeightClip { bound: 0.01 },
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

/// Builds (generator, critic) architectures for a data shape.
pub fn build_architectures(
    choice: &ArchChoice,
    latent_dim: usize,
    shape: &[usize],
) -> Result<(Architecture, Architecture)> {
    let data_dim: usize = shape.iter().product();
    match choice {
        ArchChoice::Mlp { hidden } => Ok((
            arch::mlp("mlp-generator", latent_dim, hidden, data_dim, LayerSpec::Relu, Some(LayerSpec::Tanh)),
            arch::mlp("mlp-critic", data_dim, hidden, 1, LayerSpec::LeakyRelu { slope: 0.2 }, None),
        )),
        ArchChoice::Dcgan { width } => {
            if shape.len() != 3 || shape[0] != 32 || shape[1] != 32 {
                return Err(Error::invalid(format!("DCGAN networks need 32×32 images, got {shape:?}")));
            }
            Ok((
                arch::dcgan_generator(latent_dim, shape[2], *width),
                arch::dcgan_encoder("dcgan-critic", shape[2], *width, 1),
            ))
        }
    }
}

/// Output of [`train_public_gan`].
#[derive(Clone, Debug)]
pub struct PublicGan {
    pub generator: Generator,
    pub critic: Discriminator,
    pub manifest: RunManifest,
}

pub fn train_public_gan(d_p: &LabeledDataset, config: &PublicGanConfig) -> Result<PublicGan> {
    if d_p.is_empty() {
        return Err(Error::invalid("public training set is empty"));
    }
    if config.batch_size == 0 || config.critic_steps == 0 || config.latent_dim == 0 {
        return Err(Error::invalid("batch size, critic steps and latent dimension must be positive"));
    }
    let shape = d_p.shape().to_vec();
    let (g_arch, c_arch) = build_architectures(&config.architecture, config.latent_dim, &shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gen = Generator::new(Network::init(g_arch, &mut rng)?, shape)?;
    let mut critic = Discriminator::new(Network::init(c_arch, &mut rng)?, config.objective)?;
    if let Lipschitz::WeightClip { bound } = config.lipschitz {
        critic.net.clip_weights(bound);
    }
    let mut g_opt = config.generator_optimizer.build(gen.net.param_count());
    let mut c_opt = config.critic_optimizer.build(critic.net.param_count());
    let prior = gen.prior();
    let m = config.batch_size;

    let mut last_good = gen.net.params.clone();
    let (mut critic_loss, mut gen_loss) = (0.0, 0.0);
    for step in 0..config.steps {
        for _ in 0..config.critic_steps {
            let real: Vec<Vec<f64>> = (0..m)
                .map(|_| d_p.image_signed(rng.random_range(0..d_p.len())))
                .collect();
            let fake: Vec<Vec<f64>> = (0..m).map(|_| gen.generate(&prior.sample_with(&mut rng))).collect();
            let (loss, mut grad) = critic_batch_gradient(&critic, &real, &fake);
            if let Lipschitz::GradientPenalty { weight } = config.lipschitz {
                let penalty = penalty_gradient(&critic, &real, &fake, weight, &mut rng, &mut grad);
                critic_loss = loss + penalty;
            } else {
                critic_loss = loss;
            }
            c_opt.step(&mut critic.net.params, &grad);
            if let Lipschitz::WeightClip { bound } = config.lipschitz {
                critic.net.clip_weights(bound);
            }
        }
        let zs: Vec<Vec<f64>> = (0..m).map(|_| prior.sample_with(&mut rng)).collect();
        let (loss, grad) = generator_batch_gradient(&gen, &critic, &zs);
        gen_loss = loss;
        g_opt.step(&mut gen.net.params, &grad);

        if !critic_loss.is_finite() || !gen_loss.is_finite() || !gen.net.is_finite() || !critic.net.is_finite() {
            return Err(Error::TrainingFailure {
                step,
                reason: format!("objective diverged (critic {critic_loss}, generator {gen_loss})"),
                last_good: Some(last_good),
                accountant: None,
            });
        }
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            last_good.clone_from(&gen.net.params);
        }
    }

    let mut manifest = RunManifest::new("train-public", config_hash(config));
    manifest
        .seed("training", config.seed)
        .metric("training_examples", d_p.len())
        .metric("final_critic_loss", critic_loss)
        .metric("final_generator_loss", gen_loss)
        .metric("generator_checksum", gen.checksum())
        .metric("generator_arch", gen.arch_id().to_string());
    Ok(PublicGan {
        generator: gen,
        critic,
        manifest,
    })
}

/// Mean critic loss over the batch and its parameter gradient.
///
/// Wasserstein: `−(mean f(real) − mean f(fake))`. Vanilla: binary cross
/// entropy with real labelled 1 and fake 0.
pub(crate) fn critic_batch_gradient(critic: &Discriminator, real: &[Vec<f64>], fake: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; critic.net.param_count()];
    let mut loss = 0.0;
    for (batch, is_real) in [(real, true), (fake, false)] {
        let scale = 1.0 / batch.len() as f64;
        for x in batch {
            let trace = critic.net.forward(x);
            let (l, d) = critic_loss_term(critic.mode, trace.output()[0], is_real);
            loss += scale * l;
            critic.net.backward(&trace, &[scale * d], Some(&mut grad));
        }
    }
    (loss, grad)
}

/// Per-example critic loss and its derivative with respect to the raw output.
pub(crate) fn critic_loss_term(mode: CriticMode, raw: f64, is_real: bool) -> (f64, f64) {
    match (mode, is_real) {
        (CriticMode::Wasserstein, true) => (-raw, -1.0),
        (CriticMode::Wasserstein, false) => (raw, 1.0),
        (CriticMode::Vanilla, true) => {
            let p = crate::nn_sigmoid(raw);
            (softplus(-raw), p - 1.0)
        }
        (CriticMode::Vanilla, false) => {
            let p = crate::nn_sigmoid(raw);
            (softplus(raw), p)
        }
    }
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Generator loss on `zs` (Wasserstein: `−mean f(G(z))`; vanilla: the
/// non-saturating `−mean log C(G(z))`) and its gradient in generator
/// parameters. Only the critic's view of generated samples is consulted.
pub(crate) fn generator_batch_gradient(gen: &Generator, critic: &Discriminator, zs: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; gen.net.param_count()];
    let mut loss = 0.0;
    let scale = 1.0 / zs.len() as f64;
    for z in zs {
        let g_trace = gen.net.forward(z);
        let c_trace = critic.net.forward(g_trace.output());
        let raw = c_trace.output()[0];
        let (l, d) = match critic.mode {
            CriticMode::Wasserstein => (-raw, -1.0),
            CriticMode::Vanilla => (softplus(-raw), crate::nn_sigmoid(raw) - 1.0),
        };
        loss += scale * l;
        let grad_x = critic.net.backward(&c_trace, &[scale * d], None);
        gen.net.backward(&g_trace, &grad_x, Some(&mut grad));
    }
    (loss, grad)
}

fn penalty_gradient(
    critic: &Discriminator,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    weight: f64,
    rng: &mut ChaCha8Rng,
    grad: &mut [f64],
) -> f64 {
    const H: f64 = 1e-3;
    let scale = weight / real.len() as f64;
    let mut total = 0.0;
    for (xr, xf) in real.iter().zip(fake) {
        let t: f64 = rng.random();
        let x_hat: Vec<f64> = xr.iter().zip(xf).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let base = critic.net.forward(&x_hat);
        let dir = critic.net.backward(&base, &[1.0], None);
        let norm = crate::dp::l2_norm(&dir);
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        let shifted: Vec<f64> = x_hat.iter().zip(&dir).map(|(x, d)| x + H * d / norm).collect();
        let moved = critic.net.forward(&shifted);
        let slope = (moved.output()[0] - base.output()[0]) / H;
        total += scale * (slope - 1.0).powi(2);
        let coef = 2.0 * scale * (slope - 1.0) / H;
        critic.net.backward(&moved, &[coef], Some(grad));
        critic.net.backward(&base, &[-coef], Some(grad));
    }
    total
}
