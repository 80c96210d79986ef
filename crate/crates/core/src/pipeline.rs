//! End-to-end orchestration: partition, public GAN, inversion, DP latent
//! GAN, synthesis and evaluation. Each stage writes its artifacts and a
//! manifest into its own directory under the run directory; a stage whose
//! manifest already matches the current configuration is reused.
//!
//! Key schema of the run configuration (TOML):
//!
//! ```toml
//! [run]          # seed
//! [data]         # source (toy | cifar10 | files), preset, public_classes,
//!                # label_fraction, stratified, seed
//! [public_gan]   # objective, latent_dim, architecture, steps, ...
//! [inversion]    # method, iterations, learning_rate, restarts, ...
//! [dp_gan]       # inner_latent_dim, hidden, critic_steps, dp.{epsilon_budget, delta, ...}
//! [synthesis]    # samples, seed, quantize
//! [evaluation]   # labeler, downstream (classifier configs)
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::{AccessAudit, Audited};
use crate::dataset::{LabeledDataset, ToyMixture};
use crate::dp::AuditLog;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_synthetic, train_label_classifier, ClassifierConfig, EvaluationReport, FeatureBackbone};
use crate::gan::{train_public_gan, Generator, PublicGanConfig};
use crate::inversion::{invert_batch, InversionConfig, InversionMethod};
use crate::io::{
    load_cifar10, load_dataset, save_dataset, sha256_hex, write_bytes, write_index_list, Checkpoint, CheckpointHeader,
    ImageArchive,
};
use crate::latent_gan::{train_dp_latent_gan, DpGanConfig, LatentDataset, LATENT_FILE, MSE_FILE};
use crate::manifest::{config_hash, verify_manifest_chain, PrivacyRecord, PrivateRecord, RunManifest, Violation};
use crate::partition::{partition_with, split_test_private, ClassPreset, PartitionOptions};

/// Environment variable naming the default artifact cache root.
pub const CACHE_ENV: &str = "GOMI_CACHE_DIR";

/// Source name under which private-image reads are audited.
pub const PRIVATE_SOURCE: &str = "d_s";
/// Source name under which private-latent reads are audited.
pub const LATENT_SOURCE: &str = "latents";
/// Stages allowed to read private data.
pub const PRIVATE_READERS: &[&str] = &["invert", "train-dp"];

pub const STAGE_PARTITION: &str = "partition";
pub const STAGE_PUBLIC: &str = "public";
pub const STAGE_LATENTS: &str = "latents";
pub const STAGE_DP: &str = "dp";
pub const STAGE_SYNTHETIC: &str = "synthetic";
pub const STAGE_EVAL: &str = "eval";

pub const LABELED_FILE: &str = "d_l.dset";
pub const PUBLIC_FILE: &str = "d_p.dset";
pub const PRIVATE_FILE: &str = "d_s.dset";
pub const TEST_PRIVATE_FILE: &str = "test_private.dset";
pub const SPLIT_FILE: &str = "split.json";
pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const CRITIC_FILE: &str = "critic.ckpt";
pub const LATENT_GENERATOR_FILE: &str = "latent_generator.ckpt";
pub const DP_AUDIT_FILE: &str = "privacy_audit.jsonl";
pub const SYNTHETIC_FILE: &str = "synthetic.img";
pub const BACKBONE_FILE: &str = "backbone.ckpt";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Toy(ToyMixture),
    /// CIFAR-10 binary distribution directory.
    Cifar10 { dir: PathBuf },
    /// Dataset files in this tool's own format.
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Class preset name (cifar10, svhn, toy).
    pub preset: String,
    /// Overrides the preset's public classes (names or ids).
    pub public_classes: Option<Vec<String>>,
    pub label_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Toy(ToyMixture::default()),
            preset: "toy".into(),
            public_classes: None,
            label_fraction: 1.0 / 3.0,
            stratified: false,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn load_source(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        match &self.source {
            DataSource::Toy(t) => t.generate(),
            DataSource::Cifar10 { dir } => load_cifar10(dir),
            DataSource::Files { train, test } => Ok((load_dataset(train)?, load_dataset(test)?)),
        }
    }

    pub fn preset(&self, num_classes: usize) -> Result<ClassPreset> {
        let preset = if self.preset == "toy" {
            ClassPreset::toy_mixture(num_classes)
        } else {
            ClassPreset::by_name(&self.preset)
                .ok_or_else(|| Error::invalid(format!("unknown class preset {:?}", self.preset)))?
        };
        if preset.class_names.len() != num_classes {
            return Err(Error::invalid(format!(
                "preset {} has {} classes, data has {num_classes}",
                preset.name,
                preset.class_names.len()
            )));
        }
        Ok(preset)
    }

    pub fn public_classes(&self, preset: &ClassPreset) -> Result<BTreeSet<u32>> {
        match &self.public_classes {
            Some(tokens) => preset.resolve(tokens),
            None => Ok(preset.public_classes.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionStageConfig {
    pub method: InversionMethod,
    #[serde(flatten)]
    pub config: InversionConfig,
}

impl Default for InversionStageConfig {
    fn default() -> Self {
        Self {
            method: InversionMethod::Gomi,
            config: InversionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub samples: usize,
    pub seed: u64,
    pub quantize: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            quantize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Labeling classifier; also the feature backbone for FID and IS.
    pub labeler: ClassifierConfig,
    pub downstream: ClassifierConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            labeler: ClassifierConfig::default(),
            downstream: ClassifierConfig { seed: 1, ..ClassifierConfig::default() },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub public_gan: PublicGanConfig,
    pub inversion: InversionStageConfig,
    pub dp_gan: DpGanConfig,
    pub synthesis: SynthesisConfig,
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("bad pipeline configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline configuration serializes")
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Identifies a stage's inputs: its own configuration plus the hashes of
/// the manifests it builds on.
fn stage_hash<T: Serialize>(stage: &str, config: &T, parents: &[&Path]) -> Result<String> {
    let parent_hashes: Vec<String> = parents
        .iter()
        .map(|p| RunManifest::load(p).map(|m| m.config_hash))
        .collect::<Result<_>>()?;
    Ok(config_hash(&(stage, config, parent_hashes)))
}

fn checkpoint(role: &str, net: &crate::nn::Network, latent: Option<usize>, shape: Vec<usize>, hash: &str) -> Checkpoint {
    Checkpoint {
        header: CheckpointHeader {
            role: role.into(),
            arch: net.arch().clone(),
            latent_dim: latent,
            output_shape: shape,
            config_hash: hash.to_string(),
            extra: serde_json::Value::Null,
        },
        params: net.params.clone(),
    }
}

pub fn load_generator(path: &Path) -> Result<Generator> {
    let ck = Checkpoint::load(path)?;
    Generator::new(ck.network()?, ck.header.output_shape.clone()).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub preset: String,
    pub num_classes: usize,
    pub public_classes: BTreeSet<u32>,
    pub private_classes: BTreeSet<u32>,
    pub seed: u64,
}

impl SplitInfo {
    pub fn load(split_dir: &Path) -> Result<Self> {
        let path = split_dir.join(SPLIT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// stages

/// Splits the source training set into labeling, public and private parts
/// and extracts the private-class test set.
pub fn partition_stage(config: &DataConfig, out: &Path) -> Result<RunManifest> {
    let hash = stage_hash("partition", config, &[])?;
    let (train, test) = config.load_source()?;
    let preset = config.preset(train.num_classes())?;
    let public = config.public_classes(&preset)?;
    let options = PartitionOptions {
        label_fraction: config.label_fraction,
        stratified: config.stratified,
        seed: config.seed,
    };
    let split = partition_with(&train, &options, &public)?;
    let test_private = split_test_private(&test, &split.private_classes)?;
    let [l_idx, p_idx, s_idx] = split.index_lists();
    write_index_list(&out.join("d_l.idx"), &l_idx)?;
    write_index_list(&out.join("d_p.idx"), &p_idx)?;
    write_index_list(&out.join("d_s.idx"), &s_idx)?;
    save_dataset(&out.join(LABELED_FILE), &split.d_l)?;
    save_dataset(&out.join(PUBLIC_FILE), &split.d_p)?;
    save_dataset(&out.join(PRIVATE_FILE), &split.d_s)?;
    save_dataset(&out.join(TEST_PRIVATE_FILE), &test_private)?;
    let info = SplitInfo {
        preset: preset.name.to_string(),
        num_classes: train.num_classes(),
        public_classes: split.public_classes.clone(),
        private_classes: split.private_classes.clone(),
        seed: config.seed,
    };
    write_bytes(&out.join(SPLIT_FILE), serde_json::to_string_pretty(&info).expect("split info").as_bytes())?;

    let mut m = RunManifest::new("partition", hash);
    for f in ["d_l.idx", "d_p.idx", "d_s.idx", LABELED_FILE, PUBLIC_FILE, PRIVATE_FILE, TEST_PRIVATE_FILE, SPLIT_FILE] {
        m.add_output(out, f)?;
    }
    m.seed("partition", config.seed)
        .metric("labeling", split.d_l.len())
        .metric("public", split.d_p.len())
        .metric("private", split.d_s.len())
        .metric("test_private", test_private.len());
    m.save(out)?;
    Ok(m)
}

pub fn public_stage(split_dir: &Path, config: &PublicGanConfig, out: &Path) -> Result<RunManifest> {
    let hash = stage_hash("train-public", config, &[split_dir])?;
    let d_p_path = split_dir.join(PUBLIC_FILE);
    let d_p = load_dataset(&d_p_path)?;
    let trained = train_public_gan(&d_p, config)?;
    let g = &trained.generator;
    checkpoint("generator", &g.net, Some(g.latent_dim), g.output_shape.clone(), &hash).save(&out.join(GENERATOR_FILE))?;
    checkpoint("critic", &trained.critic.net, None, vec![1], &hash).save(&out.join(CRITIC_FILE))?;
    let mut m = trained.manifest;
    m.stage = "train-public".into();
    m.config_hash = hash;
    m.add_parent(out, split_dir);
    m.add_input(out, &d_p_path)?;
    m.add_output(out, GENERATOR_FILE)?;
    m.add_output(out, CRITIC_FILE)?;
    m.save(out)?;
    Ok(m)
}

/// Inverts the private split through the public generator. Private-image
/// reads go through `audit` under stage `invert`.
pub fn invert_stage(
    public_dir: &Path,
    split_dir: &Path,
    config: &InversionStageConfig,
    out: &Path,
    audit: &AccessAudit,
) -> Result<RunManifest> {
    let hash = stage_hash("invert", config, &[public_dir, split_dir])?;
    let gen_path = public_dir.join(GENERATOR_FILE);
    let gen = load_generator(&gen_path)?;
    let d_s_path = split_dir.join(PRIVATE_FILE);
    let d_s = load_dataset(&d_s_path)?;
    audit.set_stage("invert");
    let source = Audited::new(&d_s, audit, PRIVATE_SOURCE);
    let (latents, mut m) = invert_batch(&gen, &source, config.method, &config.config)?;
    latents.save(out)?;
    m.config_hash = hash;
    m.privacy = PrivacyRecord::Unbounded {
        reason: "raw private latents; not for release".into(),
    };
    m.add_parent(out, public_dir);
    m.add_parent(out, split_dir);
    m.add_input(out, &gen_path)?;
    m.add_input(out, &d_s_path)?;
    m.add_output(out, LATENT_FILE)?;
    m.add_output(out, MSE_FILE)?;
    m.save(out)?;
    Ok(m)
}

/// Trains the DP latent GAN. Accountant charges are appended to
/// `privacy_audit.jsonl` before each private step. On failure after privacy
/// was spent, a `failed` manifest recording the spend is written before the
/// error is returned.
pub fn dp_stage(latents_dir: &Path, config: &DpGanConfig, out: &Path, audit: &AccessAudit) -> Result<RunManifest> {
    let hash = stage_hash("train-dp", config, &[latents_dir])?;
    let latents = LatentDataset::load(latents_dir)?;
    let audit_path = out.join(DP_AUDIT_FILE);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if audit_path.exists() {
        std::fs::remove_file(&audit_path).map_err(|e| Error::io(&audit_path, e))?;
    }
    let mut log = AuditLog::append_to(&audit_path)?;
    audit.set_stage("train-dp");
    let source = Audited::new(&latents, audit, LATENT_SOURCE);
    let trained = match train_dp_latent_gan(&source, config, &mut log) {
        Ok(t) => t,
        Err(e) => {
            if let Error::TrainingFailure { accountant: Some(acc), .. } = &e {
                let mut m = RunManifest::new("train-dp", hash);
                m.status = "failed".into();
                m.privacy = PrivacyRecord::Private(PrivateRecord::from_state(
                    acc,
                    config.dp.delta,
                    config.dp.epsilon_budget,
                    config.dp.clip_norm,
                )?);
                m.add_parent(out, latents_dir);
                m.add_output(out, DP_AUDIT_FILE)?;
                m.metric("error", e.to_string());
                m.save(out)?;
            }
            return Err(e);
        }
    };
    let g = &trained.generator;
    checkpoint("latent-generator", &g.net, Some(g.latent_dim), g.output_shape.clone(), &hash)
        .save(&out.join(LATENT_GENERATOR_FILE))?;
    let mut m = trained.manifest;
    m.config_hash = hash;
    m.add_parent(out, latents_dir);
    m.add_input(out, &latents_dir.join(LATENT_FILE))?;
    m.add_output(out, LATENT_GENERATOR_FILE)?;
    m.add_output(out, DP_AUDIT_FILE)?;
    m.save(out)?;
    Ok(m)
}

pub fn synthesis_stage(dp_dir: &Path, public_dir: &Path, config: &SynthesisConfig, out: &Path) -> Result<RunManifest> {
    let hash = stage_hash("synthesize", config, &[dp_dir, public_dir])?;
    let upstream = RunManifest::load(dp_dir).map_err(|e| Error::Provenance(format!("latent generator manifest: {e}")))?;
    if upstream.status != "complete" {
        return Err(Error::Provenance(format!("latent generator stage is {}", upstream.status)));
    }
    let g_ds = load_generator(&dp_dir.join(LATENT_GENERATOR_FILE))?;
    let g_p = load_generator(&public_dir.join(GENERATOR_FILE))?;
    let (images, mut m) = crate::synthesis::synthesize(&g_ds, &g_p, config.samples, config.seed, Some(&upstream))?;
    images.save(&out.join(SYNTHETIC_FILE), config.quantize)?;
    m.config_hash = hash;
    m.add_parent(out, dp_dir);
    m.add_parent(out, public_dir);
    m.add_input(out, &dp_dir.join(LATENT_GENERATOR_FILE))?;
    m.add_input(out, &public_dir.join(GENERATOR_FILE))?;
    m.add_output(out, SYNTHETIC_FILE)?;
    m.save(out)?;
    Ok(m)
}

/// Scores the synthetic release. The backbone is trained on the labeling
/// split unless `backbone` names an existing checkpoint.
pub fn evaluation_stage(
    synthetic_dir: &Path,
    split_dir: &Path,
    config: &EvaluationConfig,
    backbone: Option<&Path>,
    out: &Path,
) -> Result<(RunManifest, EvaluationReport)> {
    let hash = stage_hash("evaluate", &(config, backbone.map(crate::io::file_sha256).transpose()?), &[
        synthetic_dir,
        split_dir,
    ])?;
    let upstream = RunManifest::load(synthetic_dir)?;
    let info = SplitInfo::load(split_dir)?;
    let (backbone, validation) = match backbone {
        Some(path) => (FeatureBackbone::load(path)?, None),
        None => {
            let d_l = load_dataset(&split_dir.join(LABELED_FILE))?;
            let trained = train_label_classifier(&d_l, &config.labeler)?;
            (trained.backbone, Some((trained.validation_accuracy, trained.validation_size)))
        }
    };
    backbone.save(&out.join(BACKBONE_FILE))?;
    let synthetic = ImageArchive::load(&synthetic_dir.join(SYNTHETIC_FILE))?;
    let test_private = load_dataset(&split_dir.join(TEST_PRIVATE_FILE))?;
    let report = evaluate_synthetic(
        &backbone,
        &synthetic,
        &test_private,
        &info.private_classes,
        &config.downstream,
        upstream.privacy.clone(),
    )?;
    write_bytes(&out.join(REPORT_FILE), report.to_text().as_bytes())?;

    let mut m = RunManifest::new("evaluate", hash);
    m.privacy = upstream.privacy.clone();
    m.add_parent(out, synthetic_dir);
    m.add_parent(out, split_dir);
    m.add_input(out, &synthetic_dir.join(SYNTHETIC_FILE))?;
    m.add_input(out, &split_dir.join(TEST_PRIVATE_FILE))?;
    m.add_output(out, BACKBONE_FILE)?;
    m.add_output(out, REPORT_FILE)?;
    m.seed("labeler", config.labeler.seed)
        .seed("downstream", config.downstream.seed)
        .metric("fid", report.fid)
        .metric("inception_score", report.inception_score)
        .metric("precision_macro", report.precision.macro_precision)
        .metric("backbone_checksum", report.backbone_checksum.clone());
    if let Some((acc, n)) = validation {
        m.metric("labeler_validation_accuracy", acc).metric("labeler_validation_size", n);
    }
    m.save(out)?;
    Ok((m, report))
}

// ---------------------------------------------------------------------------
// whole runs

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub report_text: String,
    /// SHA-256 of `report.txt` in the run directory.
    pub report_checksum: String,
    pub evaluation: EvaluationReport,
    /// Stages reused from an earlier run.
    pub reused: Vec<String>,
    pub violations: Vec<Violation>,
}

/// Reuses `dir` when its manifest is complete, was produced from
/// `expected_hash`, and its outputs are intact.
fn reusable(dir: &Path, expected_hash: &str) -> bool {
    let Ok(m) = RunManifest::load(dir) else {
        return false;
    };
    m.status == "complete"
        && m.config_hash == expected_hash
        && m.outputs.iter().all(|a| crate::io::file_sha256(&dir.join(&a.path)).is_ok_and(|s| s == a.sha256))
}

pub fn run_pipeline(config: &PipelineConfig, run_dir: &Path) -> Result<PipelineOutcome> {
    run_pipeline_audited(config, run_dir, &AccessAudit::new())
}

/// Runs every stage in order, stopping at the first failure. Completed
/// stage directories are left in place.
pub fn run_pipeline_audited(config: &PipelineConfig, run_dir: &Path, audit: &AccessAudit) -> Result<PipelineOutcome> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write_bytes(&run_dir.join("config.toml"), config.to_toml().as_bytes())?;
    let dir = |s: &str| run_dir.join(s);
    let (split, public, latents, dp, synthetic, eval) = (
        dir(STAGE_PARTITION),
        dir(STAGE_PUBLIC),
        dir(STAGE_LATENTS),
        dir(STAGE_DP),
        dir(STAGE_SYNTHETIC),
        dir(STAGE_EVAL),
    );
    let mut reused = Vec::new();

    let h = stage_hash("partition", &config.data, &[])?;
    if reusable(&split, &h) {
        reused.push("partition".to_string());
    } else {
        partition_stage(&config.data, &split)?;
    }

    let h = stage_hash("train-public", &config.public_gan, &[&split])?;
    if reusable(&public, &h) {
        reused.push("train-public".to_string());
    } else {
        public_stage(&split, &config.public_gan, &public)?;
    }

    let h = stage_hash("invert", &config.inversion, &[&public, &split])?;
    if reusable(&latents, &h) {
        reused.push("invert".to_string());
    } else {
        invert_stage(&public, &split, &config.inversion, &latents, audit)?;
    }

    let h = stage_hash("train-dp", &config.dp_gan, &[&latents])?;
    if reusable(&dp, &h) {
        reused.push("train-dp".to_string());
    } else {
        dp_stage(&latents, &config.dp_gan, &dp, audit)?;
    }

    audit.set_stage("synthesize");
    let h = stage_hash("synthesize", &config.synthesis, &[&dp, &public])?;
    if reusable(&synthetic, &h) {
        reused.push("synthesize".to_string());
    } else {
        synthesis_stage(&dp, &public, &config.synthesis, &synthetic)?;
    }

    audit.set_stage("evaluate");
    let (_, evaluation) = evaluation_stage(&synthetic, &split, &config.evaluation, None, &eval)?;
    let report_text = final_report(config, run_dir, &evaluation)?;
    let report_path = run_dir.join(REPORT_FILE);
    write_bytes(&report_path, report_text.as_bytes())?;
    let violations = verify_manifest_chain(run_dir)?;
    Ok(PipelineOutcome {
        report_checksum: sha256_hex(report_text.as_bytes()),
        report_text,
        evaluation,
        reused,
        violations,
    })
}

/// Evaluation report followed by each stage's configuration hash and
/// output checksums. Contains no timestamps.
fn final_report(config: &PipelineConfig, run_dir: &Path, evaluation: &EvaluationReport) -> Result<String> {
    let mut text = format!("config_hash: {}\n", config.hash());
    text.push_str(&evaluation.to_text());
    for stage in [STAGE_PARTITION, STAGE_PUBLIC, STAGE_LATENTS, STAGE_DP, STAGE_SYNTHETIC, STAGE_EVAL] {
        let m = RunManifest::load(&run_dir.join(stage))?;
        text.push_str(&format!("stage {}: {}\n", m.stage, m.config_hash));
        for a in &m.outputs {
            text.push_str(&format!("  {} {}\n", a.path, a.sha256));
        }
    }
    Ok(text)
}

/// Verifies the manifest chain under `run_dir`.
pub fn verify(run_dir: &Path) -> Result<Vec<Violation>> {
    verify_manifest_chain(run_dir)
}
