//! Classifiers used for evaluation: the labeling classifier (which doubles
//! as the feature backbone for FID and IS) and the downstream classifier
//! trained on labeled synthetic data.
//!
//! Inputs are unit-range images (`[0, 1]`).

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{permutation, LabeledDataset};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, CheckpointHeader};
use crate::nn::{arch, LayerSpec, Network, OptimizerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierArch {
    Mlp { hidden: Vec<usize> },
    /// Convolutional trunk for 32×32 images.
    Cnn { width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub architecture: ClassifierArch,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Share of the labeled set held out for validation accuracy.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            architecture: ClassifierArch::Mlp { hidden: vec![64, 64] },
            steps: 2000,
            batch_size: 64,
            optimizer: OptimizerConfig::Adam { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 },
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// K-way classifier with a designated feature layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBackbone {
    pub net: Network,
    /// Index of the layer whose output serves as the feature vector.
    pub feature_layer: usize,
    pub num_classes: usize,
    /// What the backbone was trained on.
    pub provenance: String,
}

impl FeatureBackbone {
    pub fn arch_id(&self) -> &str {
        &self.net.arch().id
    }

    pub fn checksum(&self) -> String {
        self.net.checksum()
    }

    pub fn feature_dim(&self) -> usize {
        self.net.arch().dims().expect("validated architecture")[self.feature_layer + 1]
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.net.predict(x)
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x).layer_output(self.feature_layer).to_vec()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                role: "classifier".into(),
                arch: self.net.arch().clone(),
                latent_dim: None,
                output_shape: vec![self.num_classes],
                config_hash: String::new(),
                extra: serde_json::json!({
                    "feature_layer": self.feature_layer,
                    "num_classes": self.num_classes,
                    "provenance": self.provenance,
                }),
            },
            params: self.net.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.header.role != "classifier" {
            return Err(Error::format(path, format!("expected a classifier, found {}", ck.header.role)));
        }
        let field = |k: &str| ck.header.extra.get(k).cloned();
        let feature_layer = field("feature_layer").and_then(|v| v.as_u64()).map(|v| v as usize);
        let num_classes = field("num_classes").and_then(|v| v.as_u64()).map(|v| v as usize);
        let (Some(feature_layer), Some(num_classes)) = (feature_layer, num_classes) else {
            return Err(Error::format(path, "classifier header lacks feature layer or class count"));
        };
        let provenance = field("provenance").and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        Ok(Self {
            net: ck.network()?,
            feature_layer,
            num_classes,
            provenance,
        })
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn build_network(
    config: &ClassifierConfig,
    id: &str,
    shape: [usize; 3],
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Network, usize)> {
    let arch = match &config.architecture {
        ClassifierArch::Mlp { hidden } => {
            if hidden.is_empty() {
                return Err(Error::invalid("classifier needs at least one hidden layer"));
            }
            arch::mlp(id, shape.iter().product(), hidden, num_classes, LayerSpec::Relu, None)
        }
        ClassifierArch::Cnn { width } => {
            if shape[0] != 32 || shape[1] != 32 {
                return Err(Error::invalid(format!("convolutional classifier needs 32×32 images, got {shape:?}")));
            }
            arch::dcgan_encoder(id, shape[2], *width, num_classes)
        }
    };
    let feature_layer = arch.layers.len() - 2;
    Ok((Network::init(arch, rng)?, feature_layer))
}

/// Examples processed per parallel work unit; fixed so that gradient sums
/// do not depend on the thread count.
const GRAD_CHUNK: usize = 16;

/// Trains a classifier by minibatch cross-entropy. `image(i)` returns a
/// unit-range image for training example `i`.
pub fn train_classifier(
    image: &(dyn Fn(usize) -> Vec<f64> + Sync),
    labels: &[u32],
    shape: [usize; 3],
    num_classes: usize,
    config: &ClassifierConfig,
    id: &str,
) -> Result<FeatureBackbone> {
    if labels.is_empty() {
        return Err(Error::invalid("classifier training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::invalid(format!("label {l} outside {num_classes} classes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut net, feature_layer) = build_network(config, id, shape, num_classes, &mut rng)?;
    let mut opt = config.optimizer.build(net.param_count());
    for step in 0..config.steps {
        let batch: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..labels.len())).collect();
        let parts: Vec<Vec<f64>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; net.param_count()];
                for &i in chunk {
                    let trace = net.forward(&image(i));
                    let mut grad = softmax(trace.output());
                    grad[labels[i] as usize] -= 1.0;
                    net.backward(&trace, &grad, Some(&mut g));
                }
                g
            })
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; net.param_count()];
        for p in parts {
            for (a, b) in grad.iter_mut().zip(p) {
                *a += scale * b;
            }
        }
        opt.step(&mut net.params, &grad);
        if !net.is_finite() {
            return Err(Error::TrainingFailure {
                step,
                reason: "classifier parameters became non-finite".into(),
                last_good: None,
                accountant: None,
            });
        }
    }
    Ok(FeatureBackbone {
        net,
        feature_layer,
        num_classes,
        provenance: String::new(),
    })
}

/// Fraction of `positions` classified correctly.
pub fn accuracy(backbone: &FeatureBackbone, data: &LabeledDataset, positions: &[usize]) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let correct = positions
        .par_iter()
        .filter(|&&i| argmax_lowest(&backbone.logits(&data.image_unit(i))) == data.label(i) as usize)
        .count();
    correct as f64 / positions.len() as f64
}

#[derive(Clone, Debug)]
pub struct TrainedLabeler {
    pub backbone: FeatureBackbone,
    pub validation_accuracy: f64,
    pub validation_size: usize,
}

/// Trains the labeling classifier on the labeled split, holding out a slice
/// for validation. Every class must be present.
pub fn train_label_classifier(d_l: &LabeledDataset, config: &ClassifierConfig) -> Result<TrainedLabeler> {
    if d_l.is_empty() {
        return Err(Error::invalid("labeled split is empty"));
    }
    let present = d_l.classes_present();
    let missing: Vec<u32> = (0..d_l.num_classes() as u32).filter(|c| !present.contains(c)).collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("labeled split lacks classes {missing:?}")));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(Error::invalid("holdout fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let order = permutation(d_l.len(), &mut rng);
    let held = ((config.holdout_fraction * d_l.len() as f64).round() as usize).min(d_l.len() - 1);
    let (valid, train) = order.split_at(held);
    let labels: Vec<u32> = train.iter().map(|&i| d_l.label(i)).collect();
    let image = |k: usize| d_l.image_unit(train[k]);
    let mut backbone = train_classifier(&image, &labels, d_l.shape(), d_l.num_classes(), config, "labeler")?;
    backbone.provenance = format!("trained on {} ({} examples)", d_l.name, train.len());
    let validation_accuracy = accuracy(&backbone, d_l, valid);
    Ok(TrainedLabeler {
        backbone,
        validation_accuracy,
        validation_size: valid.len(),
    })
}

/// Argmax label and its probability for each unit-range image.
pub fn label_synthetic(backbone: &FeatureBackbone, images: &[Vec<f64>]) -> Vec<(u32, f64)> {
    images
        .par_iter()
        .map(|x| {
            let logits = backbone.logits(x);
            let k = argmax_lowest(&logits);
            (k as u32, softmax(&logits)[k])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    /// Precision per evaluated class; zero when the class is never predicted.
    pub per_class: Vec<(u32, f64)>,
    pub macro_precision: f64,
    pub test_size: usize,
}

/// Macro-averaged precision over `classes`.
pub fn macro_precision(predicted: &[u32], truth: &[u32], classes: &BTreeSet<u32>) -> Result<PrecisionReport> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid("prediction and truth lengths differ"));
    }
    if classes.is_empty() {
        return Err(Error::invalid("no classes to evaluate"));
    }
    let per_class: Vec<(u32, f64)> = classes
        .iter()
        .map(|&c| {
            let hits = predicted.iter().filter(|&&p| p == c).count();
            let right = predicted.iter().zip(truth).filter(|(&p, &t)| p == c && t == c).count();
            (c, if hits == 0 { 0.0 } else { right as f64 / hits as f64 })
        })
        .collect();
    let macro_precision = per_class.iter().map(|(_, p)| p).sum::<f64>() / per_class.len() as f64;
    Ok(PrecisionReport {
        per_class,
        macro_precision,
        test_size: predicted.len(),
    })
}

/// Trains a fresh classifier on labeled synthetic images and reports macro
/// precision over `private_classes` on the private test set.
pub fn downstream_precision(
    synthetic: &[Vec<f64>],
    labels: &[u32],
    shape: [usize; 3],
    test: &LabeledDataset,
    private_classes: &BTreeSet<u32>,
    config: &ClassifierConfig,
) -> Result<PrecisionReport> {
    if synthetic.len() != labels.len() {
        return Err(Error::invalid("synthetic images and labels differ in count"));
    }
    let covered: BTreeSet<u32> = labels.iter().copied().filter(|l| private_classes.contains(l)).collect();
    if covered.len() < 2 {
        return Err(Error::DegenerateTraining(format!(
            "synthetic labels cover {} private class(es); at least 2 are needed",
            covered.len()
        )));
    }
    if test.is_empty() {
        return Err(Error::EmptyResult("private test set is empty".into()));
    }
    let image = |i: usize| synthetic[i].clone();
    let net = train_classifier(&image, labels, shape, test.num_classes(), config, "downstream")?;
    let predicted: Vec<u32> = (0..test.len())
        .into_par_iter()
        .map(|i| argmax_lowest(&net.logits(&test.image_unit(i))) as u32)
        .collect();
    macro_precision(&predicted, test.labels(), private_classes)
}
