//! Finding records and the findings store.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::oracle::ExecSummary;
use crate::corpus::ProgramText;
use crate::store::{self, Appender, Keyed, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Crash,
    Hang,
    Inconsistency,
}

impl FindingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingKind::Crash => "crash",
            FindingKind::Hang => "hang",
            FindingKind::Inconsistency => "inconsistency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub finding_id: String,
    pub kind: FindingKind,
    pub program: ProgramText,
    pub seed_id: String,
    /// Mutators that actually changed the program, in application order.
    pub mutator_chain: Vec<String>,
    /// Absent for inconsistencies, which carry `results` instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compiler: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub results: BTreeMap<String, ExecSummary>,
    #[serde(default)]
    pub stderr: String,
    pub timestamp_ms: u64,
    /// Position in the campaign's total order of findings.
    #[serde(default)]
    pub seq: u64,
}

impl Keyed for Finding {
    fn key(&self) -> &str {
        &self.finding_id
    }
}

/// Serialized destination for findings.
pub trait FindingSink: Send {
    /// Sequence number the next recorded finding will receive.
    fn next_seq(&self) -> u64 {
        0
    }
    fn record(&mut self, finding: Finding) -> Result<(), StoreError>;
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub findings: Vec<Finding>,
}

impl FindingSink for MemorySink {
    fn next_seq(&self) -> u64 {
        self.findings.len() as u64
    }

    fn record(&mut self, finding: Finding) -> Result<(), StoreError> {
        self.findings.push(finding);
        Ok(())
    }
}

pub const FINDINGS_FILE: &str = "findings.jsonl";
pub const PROGRAMS_DIR: &str = "programs";

/// `findings.jsonl` plus `programs/<finding_id>.<ext>` holding each
/// triggering program verbatim.
pub struct FindingStore {
    dir: PathBuf,
    ext: String,
    appender: Appender,
    count: u64,
}

impl FindingStore {
    pub fn open(dir: &Path, ext: &str) -> Result<Self, StoreError> {
        let file = dir.join(FINDINGS_FILE);
        let count = store::read_records_or_empty::<Finding>(&file)?.len() as u64;
        let appender = Appender::open::<Finding>(&file)?;
        let programs = dir.join(PROGRAMS_DIR);
        fs::create_dir_all(&programs).map_err(|source| StoreError::Io {
            path: programs.clone(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            ext: ext.to_string(),
            appender,
            count,
        })
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join(FINDINGS_FILE)
    }

    pub fn program_path(&self, finding_id: &str) -> PathBuf {
        self.dir
            .join(PROGRAMS_DIR)
            .join(format!("{finding_id}.{}", self.ext))
    }
}

impl FindingSink for FindingStore {
    fn next_seq(&self) -> u64 {
        self.count
    }

    fn record(&mut self, finding: Finding) -> Result<(), StoreError> {
        let path = self.program_path(&finding.finding_id);
        fs::write(&path, &finding.program.text)
            .map_err(|source| StoreError::Io { path, source })?;
        self.appender.append(&finding)?;
        self.count += 1;
        Ok(())
    }
}

pub fn load_findings(dir_or_file: &Path) -> Result<Vec<Finding>, StoreError> {
    let file = if dir_or_file.is_dir() {
        dir_or_file.join(FINDINGS_FILE)
    } else {
        dir_or_file.to_path_buf()
    };
    store::read_records(&file)
}
