//! Scoring of released synthetic data: FID and Inception Score through a
//! trained feature backbone, and downstream classification precision on the
//! private classes.

mod classifier;
mod metrics;

pub use classifier::{
    accuracy, argmax_lowest, downstream_precision, label_synthetic, macro_precision, softmax, train_classifier,
    train_label_classifier, ClassifierArch, ClassifierConfig, FeatureBackbone, PrecisionReport, TrainedLabeler,
};
pub use metrics::{fid, inception_score, GaussianSummary, InceptionScore, PROBABILITY_FLOOR, ROW_SUM_TOLERANCE};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::io::ImageArchive;
use crate::manifest::PrivacyRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub fid: f64,
    pub inception_score: f64,
    pub is_floored_entries: usize,
    pub precision: PrecisionReport,
    pub synthetic_count: usize,
    pub reference_count: usize,
    /// Synthetic images per assigned label.
    pub label_counts: Vec<(u32, usize)>,
    pub backbone_arch: String,
    pub backbone_checksum: String,
    pub privacy: PrivacyRecord,
}

impl EvaluationReport {
    /// Line-oriented `key: value` text. Stable for identical inputs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fid: {:.6}", self.fid);
        let _ = writeln!(s, "inception_score: {:.6}", self.inception_score);
        let _ = writeln!(s, "inception_score_floored_entries: {}", self.is_floored_entries);
        for (c, p) in &self.precision.per_class {
            let _ = writeln!(s, "precision_class_{c}: {p:.6}");
        }
        let _ = writeln!(s, "precision_macro: {:.6}", self.precision.macro_precision);
        let _ = writeln!(s, "test_count: {}", self.precision.test_size);
        let _ = writeln!(s, "synthetic_count: {}", self.synthetic_count);
        let _ = writeln!(s, "reference_count: {}", self.reference_count);
        for (c, n) in &self.label_counts {
            let _ = writeln!(s, "synthetic_label_{c}: {n}");
        }
        let _ = writeln!(s, "backbone_arch: {}", self.backbone_arch);
        let _ = writeln!(s, "backbone_checksum: {}", self.backbone_checksum);
        match &self.privacy {
            PrivacyRecord::Public => {
                let _ = writeln!(s, "privacy: public");
            }
            PrivacyRecord::Unbounded { reason } => {
                let _ = writeln!(s, "privacy: unbounded ({reason})");
            }
            PrivacyRecord::Private(r) => {
                let _ = writeln!(s, "privacy_epsilon: {}", r.epsilon);
                let _ = writeln!(s, "privacy_delta: {}", r.delta);
                let _ = writeln!(s, "privacy_noise_multiplier: {}", r.noise_multiplier);
                let _ = writeln!(s, "privacy_clip_norm: {}", r.clip_norm);
                let _ = writeln!(s, "privacy_sample_rate: {}", r.sample_rate);
                let _ = writeln!(s, "privacy_steps: {}", r.steps);
            }
        }
        s
    }
}

/// Unit-range rows from a generator-range archive.
pub fn archive_unit_rows(archive: &ImageArchive) -> Vec<Vec<f64>> {
    let p: usize = archive.shape.iter().product();
    archive
        .images
        .chunks(p.max(1))
        .map(|c| c.iter().map(|&v| ((v as f64 + 1.0) * 0.5).clamp(0.0, 1.0)).collect())
        .collect()
}

/// Full evaluation of a synthetic release against the private-class test
/// set. Every score here depends on `backbone`.
pub fn evaluate_synthetic(
    backbone: &FeatureBackbone,
    synthetic: &ImageArchive,
    reference: &LabeledDataset,
    private_classes: &BTreeSet<u32>,
    downstream: &ClassifierConfig,
    privacy: PrivacyRecord,
) -> Result<EvaluationReport> {
    if synthetic.shape != reference.shape() {
        return Err(Error::invalid(format!(
            "synthetic shape {:?} differs from reference shape {:?}",
            synthetic.shape,
            reference.shape()
        )));
    }
    let rows = archive_unit_rows(synthetic);
    if rows.len() < 2 || reference.len() < 2 {
        return Err(Error::EmptyResult("need at least two synthetic and two reference images".into()));
    }
    let synth_features: Vec<Vec<f64>> = rows.par_iter().map(|x| backbone.features(x)).collect();
    let ref_features: Vec<Vec<f64>> = (0..reference.len())
        .into_par_iter()
        .map(|i| backbone.features(&reference.image_unit(i)))
        .collect();
    let fid_value = fid(
        &GaussianSummary::from_features(&synth_features)?,
        &GaussianSummary::from_features(&ref_features)?,
    )?;
    let probs: Vec<Vec<f64>> = rows.par_iter().map(|x| backbone.probabilities(x)).collect();
    let is = inception_score(&probs)?;

    let labeled = label_synthetic(backbone, &rows);
    let labels: Vec<u32> = labeled.iter().map(|(l, _)| *l).collect();
    let mut label_counts = vec![0usize; backbone.num_classes];
    for &l in &labels {
        label_counts[l as usize] += 1;
    }
    let precision = downstream_precision(&rows, &labels, synthetic.shape, reference, private_classes, downstream)?;
    Ok(EvaluationReport {
        fid: fid_value,
        inception_score: is.value,
        is_floored_entries: is.floored,
        precision,
        synthetic_count: rows.len(),
        reference_count: reference.len(),
        label_counts: label_counts.into_iter().enumerate().map(|(c, n)| (c as u32, n)).collect(),
        backbone_arch: backbone.arch_id().to_string(),
        backbone_checksum: backbone.checksum(),
        privacy,
    })
}
