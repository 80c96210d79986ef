//! `gomi`: command-line driver for partitioning, public GAN training,
//! latent inversion, DP latent GAN training, synthesis and evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use gomi_core::dataset::ToyMixture;
use gomi_core::audit::AccessAudit;
use gomi_core::dp::{default_orders, max_steps_for_budget, AccountantState};
use gomi_core::pipeline::{self, DataConfig, DataSource, EvaluationConfig, InversionStageConfig, PipelineConfig, SynthesisConfig};
use gomi_core::{DpGanConfig, Error, InversionMethod, PrivacyRecord};

#[derive(Parser)]
#[command(name = "gomi", version, about = "Differentially private image release through latent inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a dataset into labeling, public and private parts.
    Partition(PartitionArgs),
    /// Train the public GAN on the public split.
    TrainPublic(TrainPublicArgs),
    /// Invert the private split into the public generator's latent space.
    Invert(InvertArgs),
    /// Train the DP latent GAN on inverted latents.
    TrainDp(TrainDpArgs),
    /// Sample synthetic images through both generators.
    Synthesize(SynthesizeArgs),
    /// Score a synthetic release.
    Evaluate(EvaluateArgs),
    /// Run every stage from one configuration file.
    Run(RunArgs),
    /// Check a run directory's manifest chain.
    Verify(VerifyArgs),
    /// Largest number of DP steps within a privacy budget.
    Budget(BudgetArgs),
}

#[derive(Args)]
struct PartitionArgs {
    /// `toy`, a CIFAR-10 binary directory, or a dataset file (with --test).
    #[arg(long)]
    dataset: String,
    /// Test set file when --dataset is a dataset file.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Class preset: toy, cifar10 or svhn. Inferred from --dataset when omitted.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    label_fraction: f64,
    /// Comma-separated class names or ids; the preset's public classes by default.
    #[arg(long, value_delimiter = ',')]
    public_classes: Option<Vec<String>>,
    /// Draw the labeling split per class.
    #[arg(long)]
    stratified: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainPublicArgs {
    #[arg(long)]
    split: PathBuf,
    /// TOML file: a `[public_gan]` table or a bare public GAN configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InvertArgs {
    /// Public GAN directory (as written by train-public).
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    method: Option<InversionMethod>,
    /// TOML file: an `[inversion]` table or a bare inversion configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainDpArgs {
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    /// TOML file: a `[dp_gan]` table or a bare DP GAN configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    dp_ckpt: PathBuf,
    #[arg(long)]
    public_ckpt: PathBuf,
    #[arg(short = 'n', long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Store pixels as 8-bit values.
    #[arg(long)]
    quantize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Trained classifier checkpoint; trained on the labeling split when omitted.
    #[arg(long)]
    backbone: Option<PathBuf>,
    /// TOML file: an `[evaluation]` table or a bare evaluation configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file; the evaluation manifest goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory; defaults to a directory under $GOMI_CACHE_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    run_dir: PathBuf,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    sigma: f64,
}

/// `println!` that ignores a closed stdout instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! say_raw {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Partition(a) => partition(a),
        Command::TrainPublic(a) => {
            let config = load_section(a.config.as_deref(), "public_gan")?;
            let m = pipeline::public_stage(&a.split, &config, &a.out)?;
            say!("generator checksum {}", m.metrics["generator_checksum"]);
            Ok(ExitCode::SUCCESS)
        }
        Command::Invert(a) => {
            let mut config: InversionStageConfig = load_section(a.config.as_deref(), "inversion")?;
            if let Some(m) = a.method {
                config.method = m;
            }
            let audit = AccessAudit::new();
            let m = pipeline::invert_stage(&a.ckpt, &a.split, &config, &a.out, &audit)?;
            say!(
                "inverted {} of {} images (mean mse {})",
                m.metrics["inverted"], m.metrics["images"], m.metrics["mse_mean"]
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainDp(a) => {
            let mut config: DpGanConfig = load_section(a.config.as_deref(), "dp_gan")?;
            if let Some(v) = a.epsilon {
                config.dp.epsilon_budget = v;
            }
            if let Some(v) = a.delta {
                config.dp.delta = v;
            }
            if let Some(v) = a.sigma {
                config.dp.noise_multiplier = v;
            }
            if let Some(v) = a.clip {
                config.dp.clip_norm = v;
            }
            let audit = AccessAudit::new();
            let m = pipeline::dp_stage(&a.latents, &config, &a.out, &audit)?;
            print_privacy(&m.privacy);
            Ok(ExitCode::SUCCESS)
        }
        Command::Synthesize(a) => {
            let config = SynthesisConfig {
                samples: a.samples,
                seed: a.seed,
                quantize: a.quantize,
            };
            let m = pipeline::synthesis_stage(&a.dp_ckpt, &a.public_ckpt, &config, &a.out)?;
            say!("wrote {} samples", m.metrics["samples"]);
            print_privacy(&m.privacy);
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a),
        Command::Verify(a) => {
            let violations = pipeline::verify(&a.run_dir)?;
            if violations.is_empty() {
                say!("ok");
                return Ok(ExitCode::SUCCESS);
            }
            for v in &violations {
                say!("{v}");
            }
            Ok(ExitCode::from(Error::Provenance(String::new()).exit_code() as u8))
        }
        Command::Budget(a) => {
            let orders = default_orders();
            let steps = max_steps_for_budget(a.epsilon, a.delta, a.q, a.sigma, &orders)?;
            say!("max_steps: {steps}");
            if steps > 0 {
                let mut state = AccountantState::new(orders)?;
                state.step(a.q, a.sigma, steps)?;
                let (eps, order) = state.epsilon(a.delta)?;
                say!("epsilon_at_max_steps: {eps}");
                if let Some(order) = order {
                    say!("optimal_order: {order}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn partition(a: PartitionArgs) -> anyhow::Result<ExitCode> {
    let path = Path::new(&a.dataset);
    let (source, inferred) = if a.dataset == "toy" {
        (DataSource::Toy(ToyMixture::default()), "toy")
    } else if path.join("data_batch_1.bin").exists() {
        (DataSource::Cifar10 { dir: path.to_path_buf() }, "cifar10")
    } else if path.is_file() {
        let test = a.test.clone().ok_or_else(|| anyhow!("--test is required with a dataset file"))?;
        (DataSource::Files { train: path.to_path_buf(), test }, "")
    } else {
        bail!(Error::InvalidArgument(format!("cannot read dataset {:?}", a.dataset)));
    };
    let preset = match (a.preset, inferred) {
        (Some(p), _) => p,
        (None, "") => bail!(Error::InvalidArgument("--preset is required with a dataset file".into())),
        (None, p) => p.to_string(),
    };
    let config = DataConfig {
        source,
        preset,
        public_classes: a.public_classes,
        label_fraction: a.label_fraction,
        stratified: a.stratified,
        seed: a.seed,
    };
    let m = pipeline::partition_stage(&config, &a.out)?;
    say!(
        "labeling {} public {} private {} test-private {}",
        m.metrics["labeling"], m.metrics["public"], m.metrics["private"], m.metrics["test_private"]
    );
    Ok(ExitCode::SUCCESS)
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<ExitCode> {
    let config: EvaluationConfig = load_section(a.config.as_deref(), "evaluation")?;
    let dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let (_, report) = pipeline::evaluation_stage(&a.synthetic, &a.split, &config, a.backbone.as_deref(), &dir)?;
    if a.out.file_name() != Some(pipeline::REPORT_FILE.as_ref()) {
        std::fs::write(&a.out, report.to_text()).with_context(|| format!("writing {}", a.out.display()))?;
    }
    say_raw!("{}", report.to_text());
    Ok(ExitCode::SUCCESS)
}

fn run(a: RunArgs) -> anyhow::Result<ExitCode> {
    let config = PipelineConfig::load(&a.config)?;
    let dir = match a.out {
        Some(d) => d,
        None => {
            let root = std::env::var_os(pipeline::CACHE_ENV)
                .ok_or_else(|| Error::InvalidArgument(format!("pass --out or set {}", pipeline::CACHE_ENV)))?;
            PathBuf::from(root).join("runs").join(&config.hash()[..16])
        }
    };
    let outcome = pipeline::run_pipeline(&config, &dir)?;
    say_raw!("{}", outcome.evaluation.to_text());
    say!("run_dir: {}", dir.display());
    say!("report_checksum: {}", outcome.report_checksum);
    if !outcome.reused.is_empty() {
        say!("reused: {}", outcome.reused.join(", "));
    }
    if !outcome.violations.is_empty() {
        for v in &outcome.violations {
            say!("{v}");
        }
        return Ok(ExitCode::from(Error::Provenance(String::new()).exit_code() as u8));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_privacy(record: &PrivacyRecord) {
    match record {
        PrivacyRecord::Private(r) => say!(
            "epsilon {} delta {} (sigma {}, clip {}, q {}, {} steps)",
            r.epsilon, r.delta, r.noise_multiplier, r.clip_norm, r.sample_rate, r.steps
        ),
        other => say!("privacy: {other:?}"),
    }
}

/// Reads `section` from a TOML file, accepting either a full run
/// configuration or the bare section. Defaults when no file is given.
fn load_section<T: DeserializeOwned + Default>(path: Option<&Path>, section: &str) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let value = match table.get(section) {
        Some(v) => v.clone(),
        None => toml::Value::Table(table),
    };
    value
        .try_into()
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())).into())
}
