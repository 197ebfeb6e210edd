//! Building mutator sources into executables and running them under the
//! mutator executable protocol:
//!
//! * the program source arrives on standard input;
//! * the full mutated source is written to standard output;
//! * exit 0 means mutated, exit [`NO_MATCH_EXIT`] means no matching construct,
//!   any other exit (or a timeout) is an error;
//! * randomized mutators read their seed from [`SEED_ENV`] (decimal).
//!
//! Exit 0 with empty output is a protocol violation and classified as error.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::ProgramText;
use crate::factory::{FailureLabel, MutatorSource, RefinementRecord};
use crate::fuzz::{compile_and_classify, CompileOutcome, CompilerTarget, OracleError};
use crate::process::{self, CommandLine, SpawnError};
use crate::seeds::SeedProgram;
use crate::store::Keyed;

pub const NO_MATCH_EXIT: i32 = 10;
pub const SEED_ENV: &str = "MUT_SEED";
pub const DEFAULT_BUILD_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_APPLY_TIMEOUT: Duration = Duration::from_secs(10);
/// Prefix of the synthetic diagnostic emitted when a build times out.
pub const BUILD_TIMEOUT_MARKER: &str = "[mutforge] build timed out";

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("toolchain not runnable: {0}")]
    ToolchainMissing(String),
    #[error("mutator {mutator_id} has no built executable at {path:?}")]
    MissingBinary {
        mutator_id: String,
        path: Option<PathBuf>,
    },
    #[error("no probe seeds supplied")]
    NoProbeSeeds,
    #[error("build workspace {path}: {source}")]
    Workspace {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("running mutator {mutator_id}: {source}")]
    Spawn {
        mutator_id: String,
        #[source]
        source: SpawnError,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactStatus {
    Pending,
    Valid,
    Ineffective,
    BuildFailed,
    ValidationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutatorArtifact {
    pub mutator_id: String,
    pub spec_id: String,
    #[serde(default)]
    pub report_id: String,
    pub source: MutatorSource,
    #[serde(default)]
    pub binary_ref: Option<PathBuf>,
    pub status: ArtifactStatus,
    pub attempts: u32,
    #[serde(default)]
    pub history: Vec<RefinementRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<FailureLabel>,
}

impl Keyed for MutatorArtifact {
    fn key(&self) -> &str {
        &self.mutator_id
    }
}

impl MutatorArtifact {
    /// Wraps an already-built executable, e.g. a hand-written fixture mutator.
    pub fn from_binary(mutator_id: impl Into<String>, binary: impl Into<PathBuf>) -> Self {
        let mutator_id = mutator_id.into();
        Self {
            spec_id: format!("external-{mutator_id}"),
            report_id: String::new(),
            source: MutatorSource {
                spec_id: format!("external-{mutator_id}"),
                language: "external".into(),
                code: String::new(),
                template_id: String::new(),
                generation: 0,
            },
            binary_ref: Some(binary.into()),
            status: ArtifactStatus::Valid,
            attempts: 1,
            history: Vec::new(),
            label: None,
            mutator_id,
        }
    }

    fn binary(&self) -> Result<&Path, RuntimeError> {
        match &self.binary_ref {
            Some(p) if p.is_file() => Ok(p),
            other => Err(RuntimeError::MissingBinary {
                mutator_id: self.mutator_id.clone(),
                path: other.clone(),
            }),
        }
    }
}

/// How to turn a mutator source into an executable for one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toolchain {
    pub language: String,
    /// Command template; `{src_dir}` and `{out_bin}` are substituted.
    pub command: Vec<String>,
    /// Harness project copied into every fresh build workspace.
    #[serde(default)]
    pub skeleton_dir: Option<PathBuf>,
    /// Where the generated source is written, relative to `{src_dir}`.
    #[serde(default = "default_source_file")]
    pub source_file: String,
    #[serde(default = "default_build_timeout")]
    pub timeout_secs: f64,
    pub cache_dir: PathBuf,
}

fn default_source_file() -> String {
    "mutator.src".into()
}

fn default_build_timeout() -> f64 {
    DEFAULT_BUILD_TIMEOUT.as_secs_f64()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildOutcome {
    Built { binary: PathBuf, cached: bool },
    CompileErrors(String),
}

fn build_locks() -> &'static Mutex<HashMap<String, Arc<Mutex<()>>>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    LOCKS.get_or_init(Default::default)
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in walkdir::WalkDir::new(from) {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(from).expect("walk stays under root");
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest)?;
        } else {
            fs::copy(entry.path(), &dest)?;
        }
    }
    Ok(())
}

impl Toolchain {
    /// Content address of a build: toolchain identity plus source text.
    pub fn build_key(&self, source: &MutatorSource) -> String {
        let skeleton = self
            .skeleton_dir
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        let material = [
            self.language.as_str(),
            &self.command.join("\u{1f}"),
            &skeleton,
            &self.source_file,
            &source.code,
        ]
        .join("\u{0}");
        crate::sha256_hex(material)[..24].to_string()
    }
}

/// Builds `source` in a content-addressed workspace under the toolchain's
/// cache directory. Rebuilding an unchanged source returns the cached binary.
pub fn build(source: &MutatorSource, toolchain: &Toolchain) -> Result<BuildOutcome, RuntimeError> {
    let key = toolchain.build_key(source);
    let lock = build_locks()
        .lock()
        .expect("build lock table")
        .entry(key.clone())
        .or_default()
        .clone();
    let _guard = lock.lock().expect("build lock");

    let workspace = toolchain.cache_dir.join(&key);
    let src_dir = workspace.join("src");
    let out_bin = workspace.join("bin").join("mutator");
    let ok_marker = workspace.join(".built");
    if ok_marker.is_file() && out_bin.is_file() {
        return Ok(BuildOutcome::Built {
            binary: out_bin,
            cached: true,
        });
    }

    let ws_err = |source| RuntimeError::Workspace {
        path: workspace.clone(),
        source,
    };
    if workspace.exists() {
        fs::remove_dir_all(&workspace).map_err(ws_err)?;
    }
    fs::create_dir_all(&src_dir).map_err(ws_err)?;
    fs::create_dir_all(workspace.join("bin")).map_err(ws_err)?;
    if let Some(skeleton) = &toolchain.skeleton_dir {
        copy_tree(skeleton, &src_dir).map_err(ws_err)?;
    }
    let src_path = src_dir.join(&toolchain.source_file);
    if let Some(parent) = src_path.parent() {
        fs::create_dir_all(parent).map_err(ws_err)?;
    }
    fs::write(&src_path, &source.code).map_err(ws_err)?;

    let argv = process::substitute(
        &toolchain.command,
        &[
            ("src_dir", &src_dir.to_string_lossy()),
            ("out_bin", &out_bin.to_string_lossy()),
        ],
    );
    let cmd = CommandLine::new(&argv)
        .map_err(|e| RuntimeError::ToolchainMissing(e.to_string()))?
        .cwd(&src_dir);
    let timeout = Duration::from_secs_f64(toolchain.timeout_secs);
    let out = match process::run(&cmd, None, timeout) {
        Ok(out) => out,
        Err(SpawnError::NotFound { program }) => {
            return Err(RuntimeError::ToolchainMissing(program))
        }
        Err(e) => return Err(RuntimeError::ToolchainMissing(e.to_string())),
    };
    if out.timed_out {
        let mut msg = format!("{BUILD_TIMEOUT_MARKER} after {}s\n", toolchain.timeout_secs);
        msg.push_str(&out.stderr_text());
        return Ok(BuildOutcome::CompileErrors(msg));
    }
    if out.success() && out_bin.is_file() {
        fs::write(&ok_marker, b"").map_err(ws_err)?;
        return Ok(BuildOutcome::Built {
            binary: out_bin,
            cached: false,
        });
    }
    let mut diagnostics = out.stderr_text();
    let stdout = out.stdout_text();
    if !stdout.trim().is_empty() {
        if !diagnostics.is_empty() && !diagnostics.ends_with('\n') {
            diagnostics.push('\n');
        }
        diagnostics.push_str(&stdout);
    }
    if out.success() {
        diagnostics.push_str("toolchain exited successfully but produced no executable\n");
    }
    Ok(BuildOutcome::CompileErrors(diagnostics))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitClass {
    Mutated,
    NoMatch,
    Error,
}

/// Four-way reading of an outcome: `Mutated` with identical bytes is
/// reported as `NoChange`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolClass {
    NoChange,
    Mutated,
    NoMatch,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationOutcome {
    pub changed: bool,
    pub output: Option<ProgramText>,
    pub exit_class: ExitClass,
    pub stderr: String,
}

impl MutationOutcome {
    pub fn protocol_class(&self) -> ProtocolClass {
        match (self.exit_class, self.changed) {
            (ExitClass::Mutated, true) => ProtocolClass::Mutated,
            (ExitClass::Mutated, false) => ProtocolClass::NoChange,
            (ExitClass::NoMatch, _) => ProtocolClass::NoMatch,
            (ExitClass::Error, _) => ProtocolClass::Error,
        }
    }

    fn error(stderr: String) -> Self {
        Self {
            changed: false,
            output: None,
            exit_class: ExitClass::Error,
            stderr,
        }
    }
}

/// Runs the mutator on `program`. Change detection is plain byte equality.
pub fn apply(
    artifact: &MutatorArtifact,
    program: &ProgramText,
    rng_seed: Option<u64>,
    timeout: Duration,
) -> Result<MutationOutcome, RuntimeError> {
    let binary = artifact.binary()?;
    let mut cmd = CommandLine::new(&[binary.to_string_lossy().into_owned()])
        .expect("non-empty argv");
    if let Some(seed) = rng_seed {
        cmd = cmd.env(SEED_ENV, seed.to_string());
    }
    let out = process::run(&cmd, Some(program.text.as_bytes()), timeout).map_err(|source| {
        RuntimeError::Spawn {
            mutator_id: artifact.mutator_id.clone(),
            source,
        }
    })?;
    let stderr = out.stderr_text();
    if out.timed_out {
        return Ok(MutationOutcome::error(format!(
            "{stderr}[mutforge] mutator timed out after {:?}",
            timeout
        )));
    }
    Ok(match out.code {
        Some(0) if out.stdout.is_empty() => MutationOutcome::error(format!(
            "{stderr}[mutforge] protocol violation: exit 0 with empty output"
        )),
        Some(0) => match String::from_utf8(out.stdout) {
            Ok(text) => MutationOutcome {
                changed: text.as_bytes() != program.text.as_bytes(),
                output: Some(ProgramText {
                    text,
                    language_hint: program.language_hint.clone(),
                }),
                exit_class: ExitClass::Mutated,
                stderr,
            },
            Err(_) => MutationOutcome::error(format!(
                "{stderr}[mutforge] protocol violation: output is not UTF-8"
            )),
        },
        Some(NO_MATCH_EXIT) => MutationOutcome {
            changed: false,
            output: None,
            exit_class: ExitClass::NoMatch,
            stderr,
        },
        code => MutationOutcome::error(match (code, out.signal) {
            (_, Some(sig)) => format!("{stderr}[mutforge] mutator killed by signal {sig}"),
            (Some(c), _) => format!("{stderr}[mutforge] mutator exited with status {c}"),
            _ => stderr,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedFailureKind {
    /// The mutator itself broke the protocol or crashed.
    MutatorError,
    /// The reference compiler rejected the mutated seed.
    MutantRejected,
    MutantCrashed,
    MutantHung,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed_id: String,
    pub kind: SeedFailureKind,
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub failures: Vec<SeedFailure>,
    /// Per-seed protocol class, in probe-seed order.
    pub outcomes: Vec<(String, ProtocolClass)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn any_changed(&self) -> bool {
        self.outcomes.iter().any(|(_, c)| *c == ProtocolClass::Mutated)
    }

    /// Diagnostics text handed to the refinement agent.
    pub fn diagnostics(&self) -> String {
        self.failures
            .iter()
            .map(|f| {
                let kind = match f.kind {
                    SeedFailureKind::MutatorError => "mutator error",
                    SeedFailureKind::MutantRejected => "mutated program failed to compile",
                    SeedFailureKind::MutantCrashed => "compiler crashed on mutated program",
                    SeedFailureKind::MutantHung => "compiler hung on mutated program",
                };
                format!("[seed {}] {kind}\n{}", f.seed_id, f.diagnostics.trim_end())
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Applies the mutator to every probe seed and compiles each changed output
/// with the reference compiler.
pub fn validate(
    artifact: &MutatorArtifact,
    probe_seeds: &[SeedProgram],
    compiler: &CompilerTarget,
    work_dir: &Path,
    apply_timeout: Duration,
) -> Result<ValidationReport, RuntimeError> {
    if probe_seeds.is_empty() {
        return Err(RuntimeError::NoProbeSeeds);
    }
    let mut report = ValidationReport {
        failures: Vec::new(),
        outcomes: Vec::new(),
    };
    for seed in probe_seeds {
        let outcome = apply(artifact, &seed.text, Some(0), apply_timeout)?;
        report.outcomes.push((seed.seed_id.clone(), outcome.protocol_class()));
        match outcome.protocol_class() {
            ProtocolClass::Error => report.failures.push(SeedFailure {
                seed_id: seed.seed_id.clone(),
                kind: SeedFailureKind::MutatorError,
                diagnostics: outcome.stderr,
            }),
            ProtocolClass::Mutated => {
                let mutant = outcome.output.expect("mutated outcome has output");
                let dir = work_dir.join(&seed.seed_id);
                let (kind, diagnostics) = match compile_and_classify(compiler, &mutant, &dir)? {
                    CompileOutcome::Ok { .. } => continue,
                    CompileOutcome::Reject { stderr } => (SeedFailureKind::MutantRejected, stderr),
                    CompileOutcome::Crash { stderr, .. } => (SeedFailureKind::MutantCrashed, stderr),
                    CompileOutcome::Hang { stderr } => (SeedFailureKind::MutantHung, stderr),
                };
                report.failures.push(SeedFailure {
                    seed_id: seed.seed_id.clone(),
                    kind,
                    diagnostics,
                });
            }
            ProtocolClass::NoChange | ProtocolClass::NoMatch => {}
        }
    }
    Ok(report)
}

/// True iff at least one probe seed comes back byte-different.
pub fn probe_effectiveness(
    artifact: &MutatorArtifact,
    probe_seeds: &[SeedProgram],
    apply_timeout: Duration,
) -> Result<bool, RuntimeError> {
    for seed in probe_seeds {
        if apply(artifact, &seed.text, Some(0), apply_timeout)?.changed {
            return Ok(true);
        }
    }
    Ok(false)
}
