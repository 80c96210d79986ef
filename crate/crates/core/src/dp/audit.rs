use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One accountant charge as written to the audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sample_rate: f64,
    pub noise_multiplier: f64,
    pub steps: u64,
    pub epsilon_so_far: f64,
    pub delta: f64,
}

/// Append-only JSON-lines log of accountant charges. Each record is flushed
/// before the step it pays for runs.
#[derive(Debug, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    sink: Option<(PathBuf, File)>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            records: Vec::new(),
            sink: Some((path.to_path_buf(), file)),
        })
    }

    pub fn append(&mut self, record: AuditRecord) -> Result<()> {
        if let Some((path, file)) = &mut self.sink {
            let mut line = serde_json::to_string(&record).expect("audit record serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(path.clone(), e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn read(path: &Path) -> Result<Vec<AuditRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
            .collect()
    }
}
