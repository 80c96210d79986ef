//! Labeled image datasets and the built-in desk-scale sources.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Images in HWC layout with pixel values in `[0, 1]`, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    shape: [usize; 3],
    num_classes: usize,
    images: Vec<f32>,
    labels: Vec<u32>,
    /// Position of each example in the dataset it was drawn from.
    source_index: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        shape: [usize; 3],
        num_classes: usize,
        images: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let n = labels.len();
        let source_index = (0..n).collect();
        Self::with_source_index(name, shape, num_classes, images, labels, source_index)
    }

    pub fn with_source_index(
        name: impl Into<String>,
        shape: [usize; 3],
        num_classes: usize,
        images: Vec<f32>,
        labels: Vec<u32>,
        source_index: Vec<usize>,
    ) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::invalid(format!("image shape {shape:?} has a zero extent")));
        }
        let pixels: usize = shape.iter().product();
        if images.len() != labels.len() * pixels {
            return Err(Error::invalid(format!(
                "{} pixel values do not match {} images of shape {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if source_index.len() != labels.len() {
            return Err(Error::invalid("source index length differs from label count"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        if let Some(bad) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            name: name.into(),
            shape,
            num_classes,
            images,
            labels,
            source_index,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn pixels(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    /// Image `i` mapped from `[0, 1]` to the generator range `[-1, 1]`.
    pub fn image_signed(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|&v| 2.0 * v as f64 - 1.0).collect()
    }

    /// Image `i` as `f64` in `[0, 1]`.
    pub fn image_unit(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|&v| v as f64).collect()
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn raw_images(&self) -> &[f32] {
        &self.images
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn classes_present(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    /// Examples at the given positions, keeping source indices.
    pub fn subset(&self, positions: &[usize]) -> LabeledDataset {
        let p = self.pixels();
        let mut images = Vec::with_capacity(positions.len() * p);
        let mut labels = Vec::with_capacity(positions.len());
        let mut source_index = Vec::with_capacity(positions.len());
        for &i in positions {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
            source_index.push(self.source_index[i]);
        }
        LabeledDataset {
            name: self.name.clone(),
            shape: self.shape,
            num_classes: self.num_classes,
            images,
            labels,
            source_index,
        }
    }
}

/// Parameters of the built-in 2-D Gaussian mixture used for desk-scale runs.
///
/// Each example is a `1×1×2` "image": a point in the unit square. Class `k`
/// is an isotropic Gaussian blob centred on a circle at angle `k·2π/K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyMixture {
    pub classes: usize,
    pub radius: f64,
    pub spread: f64,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for ToyMixture {
    fn default() -> Self {
        Self {
            classes: 8,
            radius: 0.3,
            spread: 0.04,
            train: 3000,
            test: 1600,
            seed: 0,
        }
    }
}

impl ToyMixture {
    pub fn center(&self, class: usize) -> [f64; 2] {
        let angle = class as f64 * std::f64::consts::TAU / self.classes as f64;
        [0.5 + self.radius * angle.cos(), 0.5 + self.radius * angle.sin()]
    }

    /// Returns `(train, test)`. Labels cycle through the classes so every
    /// class has equal counts (up to one).
    pub fn generate(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        if self.classes < 2 {
            return Err(Error::invalid("toy mixture needs at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut make = |n: usize, tag: &str| {
            let mut images = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let k = i % self.classes;
                let c = self.center(k);
                for &mu in &c {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    images.push((mu + self.spread * noise).clamp(0.0, 1.0) as f32);
                }
                labels.push(k as u32);
            }
            LabeledDataset::new(format!("toy-mixture-{tag}"), [1, 1, 2], self.classes, images, labels)
        };
        let train = make(self.train, "train")?;
        let test = make(self.test, "test")?;
        Ok((train, test))
    }
}

/// Fisher-Yates permutation of `0..n` under `rng`.
pub(crate) fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_labels_and_pixels() {
        assert!(LabeledDataset::new("x", [1, 1, 1], 2, vec![0.5], vec![2]).is_err());
        assert!(LabeledDataset::new("x", [1, 1, 1], 2, vec![1.5], vec![0]).is_err());
        assert!(LabeledDataset::new("x", [1, 0, 1], 2, vec![], vec![]).is_err());
        assert!(LabeledDataset::new("x", [1, 1, 2], 2, vec![0.5], vec![0]).is_err());
    }

    #[test]
    fn toy_mixture_is_balanced_and_seeded() {
        let toy = ToyMixture::default();
        let (a, _) = toy.generate().unwrap();
        let (b, _) = toy.generate().unwrap();
        assert_eq!(a, b);
        let counts = (0..8).map(|k| a.labels().iter().filter(|&&l| l == k).count());
        for c in counts {
            assert_eq!(c, 3000 / 8);
        }
    }

    #[test]
    fn subset_keeps_source_positions() {
        let (train, _) = ToyMixture::default().generate().unwrap();
        let sub = train.subset(&[5, 2]);
        assert_eq!(sub.source_index(), &[5, 2]);
        assert_eq!(sub.image(0), train.image(5));
    }
}
