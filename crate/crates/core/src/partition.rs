//! Labeling / public / private partition of a training set.
//!
//! A uniform (or class-stratified) fraction of all examples becomes the
//! labeling set. Every remaining example is routed by class membership:
//! public classes feed the public GAN, private classes are the sensitive set.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{permutation, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub d_l: LabeledDataset,
    pub d_p: LabeledDataset,
    pub d_s: LabeledDataset,
    pub public_classes: BTreeSet<u32>,
    pub private_classes: BTreeSet<u32>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionOptions {
    pub label_fraction: f64,
    /// Draw the labeling set per class instead of uniformly over all examples.
    #[serde(default)]
    pub stratified: bool,
    pub seed: u64,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            label_fraction: 1.0 / 3.0,
            stratified: false,
            seed: 0,
        }
    }
}

/// Named class assignment shipped with the tool.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPreset {
    pub name: &'static str,
    pub class_names: Vec<String>,
    pub public_classes: BTreeSet<u32>,
}

impl ClassPreset {
    pub fn cifar10() -> Self {
        let names = [
            "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
        ];
        let public = ["automobile", "bird", "cat", "deer", "dog"];
        Self::from_names("cifar10", &names, &public)
    }

    /// Digit classes; label `k` is digit `k`.
    pub fn svhn() -> Self {
        let names: Vec<String> = (0..10).map(|d| d.to_string()).collect();
        Self {
            name: "svhn",
            class_names: names,
            public_classes: [1, 5, 7, 8, 9].into_iter().collect(),
        }
    }

    /// Even-numbered mixture components are public.
    pub fn toy_mixture(classes: usize) -> Self {
        Self {
            name: "toy-mixture",
            class_names: (0..classes).map(|k| format!("blob{k}")).collect(),
            public_classes: (0..classes as u32).filter(|k| k % 2 == 0).collect(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "cifar10" => Some(Self::cifar10()),
            "svhn" => Some(Self::svhn()),
            "toy-mixture" => Some(Self::toy_mixture(8)),
            _ => None,
        }
    }

    fn from_names(name: &'static str, names: &[&str], public: &[&str]) -> Self {
        let public_classes = public
            .iter()
            .map(|p| names.iter().position(|n| n == p).expect("preset names are consistent") as u32)
            .collect();
        Self {
            name,
            class_names: names.iter().map(|s| s.to_string()).collect(),
            public_classes,
        }
    }

    pub fn private_classes(&self) -> BTreeSet<u32> {
        (0..self.class_names.len() as u32)
            .filter(|k| !self.public_classes.contains(k))
            .collect()
    }

    /// Resolves class names or numeric ids against this preset.
    pub fn resolve(&self, tokens: &[String]) -> Result<BTreeSet<u32>> {
        tokens
            .iter()
            .map(|t| {
                self.class_names
                    .iter()
                    .position(|n| n == t)
                    .map(|p| p as u32)
                    .or_else(|| t.parse().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown class {t:?} for {}", self.name)))
            })
            .collect()
    }
}

pub fn partition_dataset(
    source: &LabeledDataset,
    label_fraction: f64,
    public_classes: &BTreeSet<u32>,
    seed: u64,
) -> Result<DatasetSplit> {
    let options = PartitionOptions {
        label_fraction,
        stratified: false,
        seed,
    };
    partition_with(source, &options, public_classes)
}

pub fn partition_with(
    source: &LabeledDataset,
    options: &PartitionOptions,
    public_classes: &BTreeSet<u32>,
) -> Result<DatasetSplit> {
    let k = source.num_classes() as u32;
    let fraction = options.label_fraction;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("label fraction {fraction} outside (0, 1)")));
    }
    if public_classes.is_empty() {
        return Err(Error::invalid("public class set is empty"));
    }
    if let Some(bad) = public_classes.iter().find(|&&c| c >= k) {
        return Err(Error::invalid(format!("public class {bad} outside [0, {k})")));
    }
    if public_classes.len() == k as usize {
        return Err(Error::invalid("public classes cover the whole class universe"));
    }
    let private_classes: BTreeSet<u32> = (0..k).filter(|c| !public_classes.contains(c)).collect();

    let n = source.len();
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let mut in_labeling = vec![false; n];
    if options.stratified {
        for pos in stratified_draw(source, fraction, &mut rng) {
            in_labeling[pos] = true;
        }
    } else {
        let n_l = (fraction * n as f64).round() as usize;
        for &pos in permutation(n, &mut rng).iter().take(n_l) {
            in_labeling[pos] = true;
        }
    }

    let (mut l, mut p, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (pos, &labeled) in in_labeling.iter().enumerate() {
        if labeled {
            l.push(pos);
        } else if public_classes.contains(&source.label(pos)) {
            p.push(pos);
        } else {
            s.push(pos);
        }
    }
    let tag = |mut d: LabeledDataset, suffix: &str| {
        d.name = format!("{}/{suffix}", source.name);
        d
    };
    Ok(DatasetSplit {
        d_l: tag(source.subset(&l), "labeling"),
        d_p: tag(source.subset(&p), "public"),
        d_s: tag(source.subset(&s), "private"),
        public_classes: public_classes.clone(),
        private_classes,
        seed: options.seed,
    })
}

/// Per-class draw whose total equals `round(fraction·n)`, with the rounding
/// slack handed to the classes with the largest remainders.
fn stratified_draw(source: &LabeledDataset, fraction: f64, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let k = source.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for pos in 0..source.len() {
        by_class[source.label(pos) as usize].push(pos);
    }
    let target = (fraction * source.len() as f64).round() as usize;
    let mut quotas: Vec<(usize, f64)> = by_class
        .iter()
        .map(|members| {
            let exact = fraction * members.len() as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &c in order.iter().take(target.saturating_sub(assigned)) {
        quotas[c].0 += 1;
    }
    let mut chosen = Vec::with_capacity(target);
    for (members, (quota, _)) in by_class.iter().zip(quotas) {
        let perm = permutation(members.len(), rng);
        chosen.extend(perm.iter().take(quota).map(|&i| members[i]));
    }
    chosen
}

/// Test examples whose labels are private, in their original order.
pub fn split_test_private(
    test: &LabeledDataset,
    private_classes: &BTreeSet<u32>,
) -> Result<LabeledDataset> {
    if private_classes.is_empty() {
        return Err(Error::invalid("private class set is empty"));
    }
    let keep: Vec<usize> = (0..test.len())
        .filter(|&i| private_classes.contains(&test.label(i)))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no test example carries a private label {private_classes:?}"
        )));
    }
    Ok(test.subset(&keep))
}

impl DatasetSplit {
    /// Sorted source indices of each part, in (labeling, public, private) order.
    pub fn index_lists(&self) -> [Vec<usize>; 3] {
        [&self.d_l, &self.d_p, &self.d_s].map(|d| {
            let mut v = d.source_index().to_vec();
            v.sort_unstable();
            v
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ToyMixture;

    fn cifar_like(n: usize) -> LabeledDataset {
        let labels: Vec<u32> = (0..n).map(|i| (i % 10) as u32).collect();
        LabeledDataset::new("cifar-like", [1, 1, 1], 10, vec![0.5; n], labels).unwrap()
    }

    #[test]
    fn cifar_preset_counts() {
        let src = cifar_like(50_000);
        let preset = ClassPreset::cifar10();
        let split = partition_dataset(&src, 1.0 / 3.0, &preset.public_classes, 11).unwrap();
        assert_eq!(split.d_l.len(), 16_667);
        assert_eq!(split.d_p.len() + split.d_s.len(), 33_333);
        assert_eq!(split.private_classes, preset.private_classes());
        let names: Vec<&str> = split
            .private_classes
            .iter()
            .map(|&c| preset.class_names[c as usize].as_str())
            .collect();
        assert_eq!(names, ["airplane", "frog", "horse", "ship", "truck"]);
    }

    #[test]
    fn svhn_preset_classes() {
        let preset = ClassPreset::svhn();
        assert_eq!(preset.public_classes, [1, 5, 7, 8, 9].into_iter().collect());
        assert_eq!(preset.private_classes(), [0, 2, 3, 4, 6].into_iter().collect());
    }

    #[test]
    fn invalid_arguments() {
        let src = cifar_like(100);
        let all: BTreeSet<u32> = (0..10).collect();
        let one: BTreeSet<u32> = [1].into_iter().collect();
        assert!(partition_dataset(&src, 0.3, &BTreeSet::new(), 0).is_err());
        assert!(partition_dataset(&src, 0.3, &all, 0).is_err());
        assert!(partition_dataset(&src, 0.0, &one, 0).is_err());
        assert!(partition_dataset(&src, 1.0, &one, 0).is_err());
        assert!(partition_dataset(&src, 0.3, &[12].into_iter().collect(), 0).is_err());
    }

    #[test]
    fn stratified_draw_hits_the_rounded_total() {
        let (train, _) = ToyMixture { train: 1001, ..Default::default() }.generate().unwrap();
        let opts = PartitionOptions { label_fraction: 0.3, stratified: true, seed: 5 };
        let public = ClassPreset::toy_mixture(8).public_classes;
        let split = partition_with(&train, &opts, &public).unwrap();
        assert_eq!(split.d_l.len(), 300);
        for k in 0..8u32 {
            let count = split.d_l.labels().iter().filter(|&&l| l == k).count();
            assert!((37..=38).contains(&count), "class {k}: {count}");
        }
    }

    #[test]
    fn private_test_filter() {
        let labels: Vec<u32> = (0..10_000).map(|i| (i % 10) as u32).collect();
        let test = LabeledDataset::new("t", [1, 1, 1], 10, vec![0.0; 10_000], labels).unwrap();
        let private = ClassPreset::cifar10().private_classes();
        let out = split_test_private(&test, &private).unwrap();
        assert_eq!(out.len(), 5_000);
        assert!(out.source_index().windows(2).all(|w| w[0] < w[1]));
        let everything: BTreeSet<u32> = (0..10).collect();
        assert_eq!(split_test_private(&test, &everything).unwrap().len(), 10_000);
        let sub = test.subset(&(0..100).filter(|i| i % 10 < 5).collect::<Vec<_>>());
        let high: BTreeSet<u32> = [7, 8].into_iter().collect();
        assert!(matches!(split_test_private(&sub, &high), Err(Error::EmptyResult(_))));
        assert!(split_test_private(&sub, &BTreeSet::new()).is_err());
    }
}
