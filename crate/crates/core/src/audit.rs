//! Access auditing for private data.
//!
//! Training and inversion code reads examples only through the
//! [`ExampleSource`] / [`LatentSource`] traits. Wrapping a source in
//! [`Audited`] records every read under the phase that was active at the
//! time, so tests and the pipeline can assert which phases touched private
//! data.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::dataset::LabeledDataset;

/// Read-only image access.
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;
    fn pixels(&self) -> usize;
    /// Image `i` in generator range `[-1, 1]`.
    fn image_signed(&self, i: usize) -> Vec<f64>;
    fn label(&self, i: usize) -> Option<u32>;
}

impl ExampleSource for LabeledDataset {
    fn len(&self) -> usize {
        LabeledDataset::len(self)
    }

    fn pixels(&self) -> usize {
        LabeledDataset::pixels(self)
    }

    fn image_signed(&self, i: usize) -> Vec<f64> {
        LabeledDataset::image_signed(self, i)
    }

    fn label(&self, i: usize) -> Option<u32> {
        Some(LabeledDataset::label(self, i))
    }
}

/// Training phases announced by consumers of private rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    CriticUpdate,
    GeneratorUpdate,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::CriticUpdate => "critic-update",
            Phase::GeneratorUpdate => "generator-update",
        }
    }
}

/// Read-only access to latent rows.
pub trait LatentSource: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn row(&self, i: usize) -> Vec<f64>;
    /// Called by trainers whenever they switch phase. No-op by default.
    fn enter_phase(&self, _phase: Phase) {}
}

#[derive(Debug, Default)]
pub struct AccessAudit {
    stage: Mutex<String>,
    phase: Mutex<Option<Phase>>,
    reads: Mutex<BTreeMap<(String, String), usize>>,
}

impl AccessAudit {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the pipeline stage; clears any sub-phase.
    pub fn set_stage(&self, stage: &str) {
        *self.stage.lock().unwrap() = stage.to_string();
        *self.phase.lock().unwrap() = None;
    }

    pub fn set_phase(&self, phase: Phase) {
        *self.phase.lock().unwrap() = Some(phase);
    }

    fn current(&self) -> String {
        let stage = self.stage.lock().unwrap().clone();
        match *self.phase.lock().unwrap() {
            Some(p) if stage.is_empty() => p.name().to_string(),
            Some(p) => format!("{stage}/{}", p.name()),
            None => stage,
        }
    }

    fn record(&self, source: &str) {
        let key = (source.to_string(), self.current());
        *self.reads.lock().unwrap().entry(key).or_insert(0) += 1;
    }

    /// Reads of `source` grouped by phase label.
    pub fn reads_of(&self, source: &str) -> BTreeMap<String, usize> {
        self.reads
            .lock()
            .unwrap()
            .iter()
            .filter(|((s, _), _)| s == source)
            .map(|((_, p), n)| (p.clone(), *n))
            .collect()
    }

    /// Total reads of `source` in phases whose label contains `needle`.
    pub fn reads_matching(&self, source: &str, needle: &str) -> usize {
        self.reads_of(source)
            .iter()
            .filter(|(p, _)| p.contains(needle))
            .map(|(_, n)| n)
            .sum()
    }

    /// Reads of `source` outside the stages listed in `allowed` (a phase
    /// `stage/sub` counts as belonging to `stage`).
    pub fn reads_outside(&self, source: &str, allowed: &[&str]) -> BTreeMap<String, usize> {
        self.reads_of(source)
            .into_iter()
            .filter(|(p, _)| {
                let stage = p.split('/').next().unwrap_or("");
                !allowed.contains(&stage)
            })
            .collect()
    }
}

/// Recording proxy around a source.
pub struct Audited<'a, S: ?Sized> {
    inner: &'a S,
    audit: &'a AccessAudit,
    name: &'a str,
}

impl<'a, S: ?Sized> Audited<'a, S> {
    pub fn new(inner: &'a S, audit: &'a AccessAudit, name: &'a str) -> Self {
        Self { inner, audit, name }
    }
}

impl<S: ExampleSource + ?Sized> ExampleSource for Audited<'_, S> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn pixels(&self) -> usize {
        self.inner.pixels()
    }

    fn image_signed(&self, i: usize) -> Vec<f64> {
        self.audit.record(self.name);
        self.inner.image_signed(i)
    }

    fn label(&self, i: usize) -> Option<u32> {
        self.audit.record(self.name);
        self.inner.label(i)
    }
}

impl<S: LatentSource + ?Sized> LatentSource for Audited<'_, S> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.audit.record(self.name);
        self.inner.row(i)
    }

    fn enter_phase(&self, phase: Phase) {
        self.audit.set_phase(phase);
        self.inner.enter_phase(phase);
    }
}
