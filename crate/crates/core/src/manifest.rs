//! Run manifests: one machine-readable record per pipeline stage, chained
//! through parent links so that privacy claims can be audited after the fact.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dp::{AccountantState, Epoch};
use crate::error::{Error, Result};
use crate::io::{file_sha256, sha256_hex, write_bytes};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Stages that only transform already-privatized outputs.
pub const POST_PROCESSING_STAGES: &[&str] = &["synthesize", "evaluate"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Path relative to the manifest's directory (or absolute).
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrivacyRecord {
    /// The stage never touched private data.
    Public,
    /// Debug runs without noise; no finite guarantee.
    Unbounded { reason: String },
    Private(PrivateRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivateRecord {
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon_budget: f64,
    pub noise_multiplier: f64,
    pub clip_norm: f64,
    pub sample_rate: f64,
    pub steps: u64,
    pub history: Vec<Epoch>,
    pub orders: Vec<f64>,
    pub conversion: String,
    pub adjacency: String,
}

impl PrivateRecord {
    pub fn from_state(
        state: &AccountantState,
        delta: f64,
        epsilon_budget: f64,
        clip_norm: f64,
    ) -> Result<Self> {
        let (epsilon, _) = state.epsilon(delta)?;
        let last = state.history().last();
        Ok(Self {
            epsilon,
            delta,
            epsilon_budget,
            noise_multiplier: last.map_or(0.0, |e| e.noise_multiplier),
            clip_norm,
            sample_rate: last.map_or(0.0, |e| e.sample_rate),
            steps: state.steps_taken(),
            history: state.history().to_vec(),
            orders: state.orders().to_vec(),
            conversion: crate::dp::CONVERSION_RULE.to_string(),
            adjacency: crate::dp::ADJACENCY.to_string(),
        })
    }

    /// Recomputes ε from the recorded history.
    pub fn replay_epsilon(&self) -> Result<f64> {
        let state = AccountantState::replay(self.orders.clone(), &self.history)?;
        state.epsilon(self.delta).map(|(e, _)| e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub status: String,
    pub config_hash: String,
    /// Directories of upstream manifests, relative to this manifest's directory.
    pub parents: Vec<String>,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
    pub privacy: PrivacyRecord,
    pub seeds: BTreeMap<String, u64>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(stage: &str, config_hash: String) -> Self {
        Self {
            stage: stage.to_string(),
            status: "complete".to_string(),
            config_hash,
            parents: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            privacy: PrivacyRecord::Public,
            seeds: BTreeMap::new(),
            metrics: BTreeMap::new(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Into<serde_json::Value>) -> &mut Self {
        self.metrics.insert(key.to_string(), value.into());
        self
    }

    pub fn seed(&mut self, key: &str, value: u64) -> &mut Self {
        self.seeds.insert(key.to_string(), value);
        self
    }

    /// Records `file` (inside `stage_dir`) as an output with its checksum.
    pub fn add_output(&mut self, stage_dir: &Path, file: &str) -> Result<()> {
        let sha256 = file_sha256(&stage_dir.join(file))?;
        self.outputs.push(ArtifactRef {
            path: file.to_string(),
            sha256,
        });
        Ok(())
    }

    /// Records an upstream file as an input.
    pub fn add_input(&mut self, stage_dir: &Path, file: &Path) -> Result<()> {
        let sha256 = file_sha256(file)?;
        self.inputs.push(ArtifactRef {
            path: relative_to(stage_dir, file),
            sha256,
        });
        Ok(())
    }

    pub fn add_parent(&mut self, stage_dir: &Path, parent_dir: &Path) {
        let rel = relative_to(stage_dir, parent_dir);
        if !self.parents.contains(&rel) {
            self.parents.push(rel);
        }
    }

    pub fn save(&self, stage_dir: &Path) -> Result<PathBuf> {
        let path = stage_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_bytes(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn load(stage_dir: &Path) -> Result<Self> {
        let path = stage_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    /// The record a post-processing stage must carry unchanged: the privacy
    /// record of its non-public parents, which must all agree.
    pub fn inherited_privacy(parents: &[&RunManifest]) -> Result<PrivacyRecord> {
        let mut found: Option<&PrivacyRecord> = None;
        for p in parents {
            if p.privacy == PrivacyRecord::Public {
                continue;
            }
            match found {
                None => found = Some(&p.privacy),
                Some(prev) if prev == &p.privacy => {}
                Some(_) => {
                    return Err(Error::Provenance(
                        "upstream manifests carry conflicting privacy records".into(),
                    ))
                }
            }
        }
        found
            .cloned()
            .ok_or_else(|| Error::Provenance("no upstream privacy record to inherit".into()))
    }
}

/// SHA-256 of a value's canonical JSON serialization.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

/// `../<name>/...` when `target` sits in a sibling of `stage_dir`, the
/// plain name inside `stage_dir`, otherwise the absolute path.
fn relative_to(stage_dir: &Path, target: &Path) -> String {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (stage, target) = (abs(stage_dir), abs(target));
    if let Ok(inner) = target.strip_prefix(&stage) {
        return inner.to_string_lossy().into_owned();
    }
    if let Some(root) = stage.parent() {
        if let Ok(rest) = target.strip_prefix(root) {
            return Path::new("..").join(rest).to_string_lossy().into_owned();
        }
    }
    target.to_string_lossy().into_owned()
}

// ---------------------------------------------------------------------------
// chain verification

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub stage: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

/// Audits every manifest under `run_dir` (the directory itself and its
/// immediate subdirectories) plus anything they link to. Returns the list
/// of violations; empty means the chain is sound.
pub fn verify_manifest_chain(run_dir: &Path) -> Result<Vec<Violation>> {
    let mut dirs = Vec::new();
    if run_dir.join(MANIFEST_FILE).exists() {
        dirs.push(run_dir.to_path_buf());
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(run_dir)
        .map_err(|e| Error::io(run_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).exists())
        .collect();
    subdirs.sort();
    dirs.extend(subdirs);
    if dirs.is_empty() {
        return Err(Error::format(run_dir, "no manifest found"));
    }

    let canon = |p: &Path| p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    let mut manifests: HashMap<PathBuf, RunManifest> = HashMap::new();
    let mut queue: Vec<PathBuf> = dirs.iter().map(|d| canon(d)).collect();
    let mut violations = Vec::new();
    while let Some(dir) = queue.pop() {
        if manifests.contains_key(&dir) {
            continue;
        }
        let m = RunManifest::load(&dir)?;
        for parent in &m.parents {
            let pdir = canon(&dir.join(parent));
            if pdir.join(MANIFEST_FILE).exists() {
                queue.push(pdir);
            } else {
                violations.push(Violation {
                    stage: m.stage.clone(),
                    message: format!("parent manifest {parent} is missing"),
                });
            }
        }
        manifests.insert(dir, m);
    }

    let mut keys: Vec<&PathBuf> = manifests.keys().collect();
    keys.sort();
    for dir in &keys {
        let m = &manifests[*dir];
        check_artifacts(dir, m, &mut violations);
        check_privacy_replay(m, &mut violations);
        let parents: Vec<&RunManifest> = m
            .parents
            .iter()
            .filter_map(|p| manifests.get(&canon(&dir.join(p))))
            .collect();
        if POST_PROCESSING_STAGES.contains(&m.stage.as_str()) {
            match RunManifest::inherited_privacy(&parents) {
                Ok(inherited) if inherited == m.privacy => {}
                Ok(_) => violations.push(Violation {
                    stage: m.stage.clone(),
                    message: "privacy record mutated in post-processing stage".into(),
                }),
                Err(e) => violations.push(Violation {
                    stage: m.stage.clone(),
                    message: e.to_string(),
                }),
            }
        }
    }
    if let Some(cycle_at) = find_cycle(&manifests, &canon) {
        violations.push(Violation {
            stage: manifests[&cycle_at].stage.clone(),
            message: "manifest lineage contains a cycle".into(),
        });
    }
    Ok(violations)
}

fn check_artifacts(dir: &Path, m: &RunManifest, out: &mut Vec<Violation>) {
    for (kind, list) in [("output", &m.outputs), ("input", &m.inputs)] {
        for a in list {
            let path = dir.join(&a.path);
            match file_sha256(&path) {
                Ok(sum) if sum == a.sha256 => {}
                Ok(_) => out.push(Violation {
                    stage: m.stage.clone(),
                    message: format!("{kind} {} checksum mismatch", a.path),
                }),
                Err(_) => out.push(Violation {
                    stage: m.stage.clone(),
                    message: format!("{kind} {} is missing", a.path),
                }),
            }
        }
    }
}

fn check_privacy_replay(m: &RunManifest, out: &mut Vec<Violation>) {
    let PrivacyRecord::Private(rec) = &m.privacy else {
        return;
    };
    let mut flag = |message: String| {
        out.push(Violation {
            stage: m.stage.clone(),
            message,
        })
    };
    let steps: u64 = rec.history.iter().map(|e| e.steps).sum();
    if steps != rec.steps {
        flag(format!("history sums to {steps} steps but {} are reported", rec.steps));
    }
    match rec.replay_epsilon() {
        Ok(eps) if eps == rec.epsilon => {}
        Ok(eps) => flag(format!(
            "accountant replay gives epsilon {eps} but {} is reported",
            rec.epsilon
        )),
        Err(e) => flag(format!("accountant replay failed: {e}")),
    }
    if rec.epsilon > rec.epsilon_budget {
        flag(format!(
            "reported epsilon {} exceeds the budget {}",
            rec.epsilon, rec.epsilon_budget
        ));
    }
}

fn find_cycle(
    manifests: &HashMap<PathBuf, RunManifest>,
    canon: &dyn Fn(&Path) -> PathBuf,
) -> Option<PathBuf> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: HashMap<&PathBuf, u8> = HashMap::new();
    let mut keys: Vec<&PathBuf> = manifests.keys().collect();
    keys.sort();
    for start in keys {
        if state.get(start).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(&PathBuf, usize)> = vec![(start, 0)];
        state.insert(start, 1);
        while let Some((node, next)) = stack.pop() {
            let parents = &manifests[node].parents;
            if next < parents.len() {
                stack.push((node, next + 1));
                let child = canon(&node.join(&parents[next]));
                if let Some((key, _)) = manifests.get_key_value(&child) {
                    match state.get(key).copied().unwrap_or(0) {
                        1 => return Some(key.clone()),
                        0 => {
                            state.insert(key, 1);
                            stack.push((key, 0));
                        }
                        _ => {}
                    }
                }
            } else {
                state.insert(node, 2);
            }
        }
    }
    None
}
