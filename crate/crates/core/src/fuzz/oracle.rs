//! Crash, hang and differential oracles over compiler invocations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use regex::RegexSet;
use serde::{Deserialize, Serialize};

use crate::corpus::ProgramText;
use crate::process::{self, CommandLine, SpawnError};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("compiler `{compiler}` not runnable: {message}")]
    CompilerMissing { compiler: String, message: String },
    #[error("compiler `{compiler}`: invalid crash pattern: {message}")]
    BadPattern { compiler: String, message: String },
    #[error("executable {0} does not exist (classification bug)")]
    MissingExecutable(PathBuf),
    #[error("run command failed for {exe}: {message}")]
    Run { exe: PathBuf, message: String },
    #[error("work directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Preset diagnostic patterns for well-known compiler families.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompilerFamily {
    Rustc,
    Gccrs,
    Gcc,
    Clang,
    #[default]
    Generic,
}

impl CompilerFamily {
    pub fn crash_patterns(self) -> &'static [&'static str] {
        match self {
            CompilerFamily::Rustc => &[
                r"internal compiler error",
                r"the compiler unexpectedly panicked",
                r"thread 'rustc' panicked",
                r"query stack during panic",
            ],
            CompilerFamily::Gccrs | CompilerFamily::Gcc => &[
                r"internal compiler error",
                r"Please submit a full bug report",
                r"confused by earlier errors, bailing out",
            ],
            CompilerFamily::Clang => &[
                r"PLEASE submit a bug report",
                r"Assertion `.*' failed",
                r"Stack dump:",
                r"LLVM ERROR:",
                r"clang frontend command failed",
            ],
            CompilerFamily::Generic => &[
                r"internal compiler error",
                r"(?i)\bpanicked at\b",
                r"Assertion .* failed",
                r"PLEASE submit a",
                r"Stack dump:",
            ],
        }
    }

    pub fn helper_patterns(self) -> &'static [&'static str] {
        match self {
            CompilerFamily::Rustc => &[
                r"^(std|core|alloc)::",
                r"^<(std|core|alloc)::",
                r"^__rust",
                r"^rust_begin_unwind$",
                r"^rustc_errors::",
                r"^rustc_middle::util::bug::",
                r"^rustc_interface::",
                r"^rustc_driver",
                r"^rustc_query_system::",
            ],
            CompilerFamily::Gccrs | CompilerFamily::Gcc => &[
                r"^internal_error",
                r"^fancy_abort",
                r"^crash_signal",
                r"^diagnostic_",
                r"^report_diagnostic",
                r"^emit_diagnostic",
                r"^(error|warning|sorry)(_at)?$",
            ],
            CompilerFamily::Clang => &[
                r"^llvm::sys::",
                r"^llvm::report_fatal_error",
                r"^llvm::llvm_unreachable_internal",
                r"^llvm::PrettyStackTrace",
                r"^llvm::CrashRecoveryContext",
                r"SignalHandler",
                r"^(abort|raise|__assert_fail|__libc_start_main|_start)$",
            ],
            CompilerFamily::Generic => &[
                r"^(abort|raise|__assert_fail|__libc_start_main|_start)$",
                r"(?i)panic",
            ],
        }
    }
}

fn default_timeout() -> f64 {
    10.0
}

fn default_ext() -> String {
    "src".into()
}

/// One compiler under test.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompilerTarget {
    pub name: String,
    /// `{src}` and `{out}` are substituted.
    pub compile_cmd: Vec<String>,
    /// `{exe}` is substituted; absent means run the produced binary directly.
    #[serde(default)]
    pub run_cmd: Option<Vec<String>>,
    #[serde(default = "default_timeout")]
    pub compile_timeout_secs: f64,
    #[serde(default = "default_timeout")]
    pub run_timeout_secs: f64,
    #[serde(default)]
    pub family: CompilerFamily,
    /// Overrides the family's crash markers when non-empty.
    #[serde(default)]
    pub crash_patterns: Vec<String>,
    /// Overrides the family's helper-frame denylist when non-empty.
    #[serde(default)]
    pub helper_frame_patterns: Vec<String>,
    /// Overrides the default stack-frame parser rules when non-empty.
    #[serde(default)]
    pub frame_patterns: Vec<String>,
    #[serde(default = "default_ext")]
    pub source_ext: String,
    #[serde(skip)]
    crash_set: OnceLock<Result<RegexSet, String>>,
}

impl CompilerTarget {
    pub fn new(name: impl Into<String>, compile_cmd: Vec<String>) -> Self {
        Self {
            name: name.into(),
            compile_cmd,
            run_cmd: None,
            compile_timeout_secs: default_timeout(),
            run_timeout_secs: default_timeout(),
            family: CompilerFamily::Generic,
            crash_patterns: Vec::new(),
            helper_frame_patterns: Vec::new(),
            frame_patterns: Vec::new(),
            source_ext: default_ext(),
            crash_set: OnceLock::new(),
        }
    }

    pub fn effective_crash_patterns(&self) -> Vec<String> {
        if self.crash_patterns.is_empty() {
            self.family.crash_patterns().iter().map(|s| s.to_string()).collect()
        } else {
            self.crash_patterns.clone()
        }
    }

    pub fn effective_helper_patterns(&self) -> Vec<String> {
        if self.helper_frame_patterns.is_empty() {
            self.family.helper_patterns().iter().map(|s| s.to_string()).collect()
        } else {
            self.helper_frame_patterns.clone()
        }
    }

    fn crash_set(&self) -> Result<&RegexSet, OracleError> {
        self.crash_set
            .get_or_init(|| {
                RegexSet::new(self.effective_crash_patterns()).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|message| OracleError::BadPattern {
                compiler: self.name.clone(),
                message: message.clone(),
            })
    }

    pub fn compile_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.compile_timeout_secs)
    }

    pub fn run_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.run_timeout_secs)
    }

    /// The compile command line for `src` producing `out`.
    pub fn compile_command(&self, src: &Path, out: &Path) -> Vec<String> {
        process::substitute(
            &self.compile_cmd,
            &[("src", &src.to_string_lossy()), ("out", &out.to_string_lossy())],
        )
    }

    pub fn run_command(&self, exe: &Path) -> Vec<String> {
        match &self.run_cmd {
            Some(t) => process::substitute(t, &[("exe", &exe.to_string_lossy())]),
            None => vec![exe.to_string_lossy().into_owned()],
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.compile_cmd.is_empty() {
            return Err(OracleError::CompilerMissing {
                compiler: self.name.clone(),
                message: "empty compile command".into(),
            });
        }
        if !(self.compile_timeout_secs > 0.0 && self.run_timeout_secs > 0.0) {
            return Err(OracleError::CompilerMissing {
                compiler: self.name.clone(),
                message: "timeouts must be positive".into(),
            });
        }
        self.crash_set().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompileOutcome {
    Crash { stderr: String, signal: Option<i32> },
    Hang { stderr: String },
    Ok { exe: PathBuf },
    Reject { stderr: String },
}

impl CompileOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            CompileOutcome::Crash { .. } => "crash",
            CompileOutcome::Hang { .. } => "hang",
            CompileOutcome::Ok { .. } => "ok",
            CompileOutcome::Reject { .. } => "reject",
        }
    }
}

/// Compiles `program` inside `work_dir` and classifies the result.
///
/// hang: compile timed out. crash: killed by a signal or stderr matches a
/// crash marker. ok: exit 0 and the output binary exists. reject: anything
/// else (ordinary diagnostics).
pub fn compile_and_classify(
    compiler: &CompilerTarget,
    program: &ProgramText,
    work_dir: &Path,
) -> Result<CompileOutcome, OracleError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| OracleError::Io { path, source }
    };
    fs::create_dir_all(work_dir).map_err(io(work_dir))?;
    let src = work_dir.join(format!("prog.{}", compiler.source_ext));
    let out = work_dir.join("prog.out");
    fs::write(&src, &program.text).map_err(io(&src))?;
    if out.exists() {
        fs::remove_file(&out).map_err(io(&out))?;
    }
    let argv = compiler.compile_command(&src, &out);
    let cmd = CommandLine::new(&argv)
        .map_err(|e| OracleError::CompilerMissing {
            compiler: compiler.name.clone(),
            message: e.to_string(),
        })?
        .cwd(work_dir);
    let result = process::run(&cmd, None, compiler.compile_timeout()).map_err(|e| match e {
        SpawnError::NotFound { program } => OracleError::CompilerMissing {
            compiler: compiler.name.clone(),
            message: format!("{program} not found"),
        },
        other => OracleError::CompilerMissing {
            compiler: compiler.name.clone(),
            message: other.to_string(),
        },
    })?;
    let stderr = result.stderr_text();
    if result.timed_out {
        return Ok(CompileOutcome::Hang { stderr });
    }
    if result.signal.is_some() || compiler.crash_set()?.is_match(&stderr) {
        return Ok(CompileOutcome::Crash {
            stderr,
            signal: result.signal,
        });
    }
    if result.code == Some(0) && out.is_file() {
        return Ok(CompileOutcome::Ok { exe: out });
    }
    Ok(CompileOutcome::Reject { stderr })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub timed_out: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatusClass {
    Zero,
    Nonzero,
    Timeout,
}

impl ExitStatusClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitStatusClass::Zero => "zero",
            ExitStatusClass::Nonzero => "nonzero",
            ExitStatusClass::Timeout => "timeout",
        }
    }
}

impl ExecResult {
    pub fn status_class(&self) -> ExitStatusClass {
        if self.timed_out {
            ExitStatusClass::Timeout
        } else if self.exit_code == Some(0) {
            ExitStatusClass::Zero
        } else {
            ExitStatusClass::Nonzero
        }
    }

    /// Comparison key for the differential oracle.
    pub fn comparison_key(&self) -> (ExitStatusClass, Vec<u8>) {
        let mut out = self.stdout.clone();
        while out.last().is_some_and(|b| b.is_ascii_whitespace()) {
            out.pop();
        }
        (self.status_class(), out)
    }

    pub fn summary(&self) -> ExecSummary {
        ExecSummary {
            status: self.status_class(),
            exit_code: self.exit_code,
            signal: self.signal,
            stdout: String::from_utf8_lossy(&self.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&self.stderr).into_owned(),
        }
    }
}

/// Serializable view of an [`ExecResult`] stored with inconsistency findings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecSummary {
    pub status: ExitStatusClass,
    #[serde(default)]
    pub exit_code: Option<i32>,
    #[serde(default)]
    pub signal: Option<i32>,
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
}

/// Runs a binary produced by an `ok` compile.
pub fn execute(compiler: &CompilerTarget, exe: &Path) -> Result<ExecResult, OracleError> {
    if !exe.is_file() {
        return Err(OracleError::MissingExecutable(exe.to_path_buf()));
    }
    let argv = compiler.run_command(exe);
    let mut cmd = CommandLine::new(&argv).map_err(|e| OracleError::Run {
        exe: exe.to_path_buf(),
        message: e.to_string(),
    })?;
    if let Some(dir) = exe.parent() {
        cmd = cmd.cwd(dir);
    }
    let out = process::run(&cmd, None, compiler.run_timeout()).map_err(|e| OracleError::Run {
        exe: exe.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(ExecResult {
        exit_code: if out.timed_out { None } else { out.code },
        signal: if out.timed_out { None } else { out.signal },
        stdout: out.stdout,
        stderr: out.stderr,
        timed_out: out.timed_out,
    })
}

/// True iff at least two compilers disagree on (exit class, trimmed stdout).
pub fn check_inconsistency(results: &BTreeMap<String, ExecResult>) -> bool {
    if results.len() < 2 {
        return false;
    }
    let keys: BTreeSet<_> = results.values().map(ExecResult::comparison_key).collect();
    keys.len() > 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(code: i32, out: &str) -> ExecResult {
        ExecResult {
            exit_code: Some(code),
            signal: None,
            stdout: out.as_bytes().to_vec(),
            stderr: Vec::new(),
            timed_out: false,
        }
    }

    fn map(items: &[(&str, ExecResult)]) -> BTreeMap<String, ExecResult> {
        items.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn identical_results_consistent() {
        assert!(!check_inconsistency(&map(&[("a", res(0, "1")), ("b", res(0, "1"))])));
    }

    #[test]
    fn differing_stdout_inconsistent() {
        assert!(check_inconsistency(&map(&[("a", res(0, "1")), ("b", res(0, "2"))])));
    }

    #[test]
    fn trailing_whitespace_ignored() {
        assert!(!check_inconsistency(&map(&[("a", res(0, "x\n")), ("b", res(0, "x"))])));
    }

    #[test]
    fn exit_class_matters_but_not_exact_code() {
        assert!(check_inconsistency(&map(&[("a", res(0, "")), ("b", res(1, ""))])));
        assert!(!check_inconsistency(&map(&[("a", res(2, "")), ("b", res(1, ""))])));
        let mut hung = res(0, "");
        hung.timed_out = true;
        assert!(check_inconsistency(&map(&[("a", res(0, "")), ("b", hung)])));
    }

    #[test]
    fn fewer_than_two_is_vacuous() {
        assert!(!check_inconsistency(&map(&[("a", res(0, "1"))])));
        assert!(!check_inconsistency(&BTreeMap::new()));
    }

    fn sh_compiler(script: &str) -> CompilerTarget {
        let mut c = CompilerTarget::new(
            "toy",
            vec!["sh".into(), "-c".into(), script.into(), "cc".into(), "{src}".into(), "{out}".into()],
        );
        c.compile_timeout_secs = 1.0;
        c
    }

    #[test]
    fn classify_ok_crash_reject_hang() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProgramText::new("x");
        let ok = sh_compiler("printf '#!/bin/sh\\necho 42\\n' > \"$2\"; chmod +x \"$2\"");
        let exe = match compile_and_classify(&ok, &p, dir.path()).unwrap() {
            CompileOutcome::Ok { exe } => exe,
            other => panic!("{other:?}"),
        };
        let r = execute(&ok, &exe).unwrap();
        assert_eq!((r.exit_code, r.stdout.as_slice(), r.timed_out), (Some(0), &b"42\n"[..], false));

        let ice = sh_compiler("echo 'error: internal compiler error: boom' >&2; exit 1");
        assert!(matches!(compile_and_classify(&ice, &p, dir.path()).unwrap(), CompileOutcome::Crash { .. }));

        let sig = sh_compiler("kill -SEGV $$");
        assert!(matches!(
            compile_and_classify(&sig, &p, dir.path()).unwrap(),
            CompileOutcome::Crash { signal: Some(_), .. }
        ));

        let rej = sh_compiler("echo 'error: expected ;' >&2; exit 1");
        assert!(matches!(compile_and_classify(&rej, &p, dir.path()).unwrap(), CompileOutcome::Reject { .. }));

        let no_bin = sh_compiler("exit 0");
        assert!(matches!(compile_and_classify(&no_bin, &p, dir.path()).unwrap(), CompileOutcome::Reject { .. }));

        let hang = sh_compiler("sleep 30");
        assert!(matches!(compile_and_classify(&hang, &p, dir.path()).unwrap(), CompileOutcome::Hang { .. }));
    }

    #[test]
    fn execute_timeout_and_nonzero() {
        let dir = tempfile::tempdir().unwrap();
        let loop_c = {
            let mut c = sh_compiler("printf '#!/bin/sh\\nwhile :; do :; done\\n' > \"$2\"; chmod +x \"$2\"");
            c.run_timeout_secs = 1.0;
            c
        };
        let p = ProgramText::new("x");
        let CompileOutcome::Ok { exe } = compile_and_classify(&loop_c, &p, dir.path()).unwrap() else {
            panic!("expected ok")
        };
        assert!(execute(&loop_c, &exe).unwrap().timed_out);

        let fail = sh_compiler("printf '#!/bin/sh\\nexit 3\\n' > \"$2\"; chmod +x \"$2\"");
        let CompileOutcome::Ok { exe } = compile_and_classify(&fail, &p, dir.path()).unwrap() else {
            panic!("expected ok")
        };
        let r = execute(&fail, &exe).unwrap();
        assert_eq!(r.exit_code, Some(3));
        assert!(!r.timed_out);
    }

    #[test]
    fn missing_compiler_and_exe() {
        let dir = tempfile::tempdir().unwrap();
        let c = CompilerTarget::new("ghost", vec!["/no/such/cc".into(), "{src}".into()]);
        assert!(matches!(
            compile_and_classify(&c, &ProgramText::new("x"), dir.path()),
            Err(OracleError::CompilerMissing { .. })
        ));
        assert!(matches!(
            execute(&c, &dir.path().join("nope")),
            Err(OracleError::MissingExecutable(_))
        ));
    }
}
