//! Crash triage: stack-trace parsing, top-two-frame signatures, bucketing,
//! and report bundles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use regex::{Regex, RegexSet};
use serde::{Deserialize, Serialize};

use crate::fuzz::{CompilerFamily, CompilerTarget, Finding, FindingKind};
use crate::process::{self, shell_quote};

/// Padding for signatures with fewer than two surviving frames.
pub const SENTINEL: &str = "<none>";
/// Bytes of normalized stderr hashed when no frame parses.
pub const STDERR_HEAD_BYTES: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum TriageError {
    #[error("compiler `{compiler}`: bad frame pattern: {message}")]
    BadPattern { compiler: String, message: String },
    #[error("frame pattern `{0}` lacks a `func` capture group")]
    MissingFuncGroup(String),
    #[error("cannot render an empty bucket")]
    EmptyBucket,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackFrame {
    pub function_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

const RUST_FRAME: &str = r"^\s*\d+:\s+(?:0x[0-9a-fA-F]+ - )?(?P<func>\S+)\s*$";
const GCC_FRAME: &str = r"^0x[0-9a-fA-F]+ (?P<func>[^\s(]+)";
const SANITIZER_FRAME: &str =
    r"^\s*#\d+ 0x[0-9a-fA-F]+ (?:in )?(?P<func>[^\s(]+)(?:\([^)]*\))*(?: \(?(?P<loc>[^\s()]+:\d+(?::\d+)?)\)?)?";
const LOCATION_LINE: &str = r"^\s+(?:at\s+)?(?P<loc>[^\s]+:(?:\d+|\?+)(?::\d+)?)\s*$";

fn default_frame_patterns(family: CompilerFamily) -> Vec<&'static str> {
    match family {
        CompilerFamily::Rustc => vec![RUST_FRAME],
        CompilerFamily::Gcc | CompilerFamily::Gccrs => vec![GCC_FRAME],
        CompilerFamily::Clang => vec![SANITIZER_FRAME],
        CompilerFamily::Generic => vec![SANITIZER_FRAME, GCC_FRAME, RUST_FRAME],
    }
}

/// Frame regexes for one compiler. Each must capture `func`; `loc` is
/// optional. A line carrying only a `file:line` location attaches to the
/// preceding frame.
#[derive(Debug, Clone)]
pub struct ParserRules {
    frames: Vec<Regex>,
    location: Regex,
}

impl ParserRules {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, TriageError> {
        let mut frames = Vec::new();
        for p in patterns {
            let re = Regex::new(p.as_ref()).map_err(|e| TriageError::BadPattern {
                compiler: String::new(),
                message: e.to_string(),
            })?;
            if !re.capture_names().any(|n| n == Some("func")) {
                return Err(TriageError::MissingFuncGroup(p.as_ref().to_string()));
            }
            frames.push(re);
        }
        Ok(Self {
            frames,
            location: Regex::new(LOCATION_LINE).expect("static regex"),
        })
    }

    pub fn for_family(family: CompilerFamily) -> Self {
        Self::new(&default_frame_patterns(family)).expect("static regexes")
    }

    pub fn for_compiler(compiler: &CompilerTarget) -> Result<Self, TriageError> {
        if compiler.frame_patterns.is_empty() {
            Ok(Self::for_family(compiler.family))
        } else {
            Self::new(&compiler.frame_patterns).map_err(|e| match e {
                TriageError::BadPattern { message, .. } => TriageError::BadPattern {
                    compiler: compiler.name.clone(),
                    message,
                },
                other => other,
            })
        }
    }
}

/// Drops a Rust symbol hash suffix like `::h0123456789abcdef`.
fn clean_name(name: &str) -> String {
    let trimmed = name.trim_end_matches([',', ':']);
    match trimmed.rfind("::h") {
        Some(i)
            if trimmed.len() - i == 19
                && trimmed[i + 3..].bytes().all(|b| b.is_ascii_hexdigit()) =>
        {
            trimmed[..i].to_string()
        }
        _ => trimmed.to_string(),
    }
}

/// Frames in top-down order; unmatched lines are ignored.
pub fn parse_trace(stderr: &str, rules: &ParserRules) -> Vec<StackFrame> {
    let mut frames: Vec<StackFrame> = Vec::new();
    let mut last_was_frame = false;
    for line in stderr.lines() {
        let hit = rules.frames.iter().find_map(|re| re.captures(line));
        if let Some(caps) = hit {
            let name = clean_name(&caps["func"]);
            if !name.is_empty() {
                frames.push(StackFrame {
                    function_name: name,
                    location: caps.name("loc").map(|m| m.as_str().to_string()),
                });
                last_was_frame = true;
                continue;
            }
        }
        if last_was_frame {
            if let Some(caps) = rules.location.captures(line) {
                let frame = frames.last_mut().expect("frame seen");
                if frame.location.is_none() {
                    frame.location = Some(caps["loc"].to_string());
                }
                continue;
            }
        }
        last_was_frame = false;
    }
    frames
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureBasis {
    /// Top two non-helper frames.
    Frames,
    /// No frames: hash of the normalized stderr head.
    StderrHead,
    /// Hangs: compiler plus last mutator of the chain.
    HangTail,
    /// Inconsistencies: per-compiler exit classes plus last mutator.
    Divergence,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CrashSignature {
    pub kind: FindingKind,
    pub basis: SignatureBasis,
    pub frame_pair: (String, String),
}

impl CrashSignature {
    /// Short stable digest used for bundle directory names.
    pub fn digest(&self) -> String {
        let material = format!(
            "{}\u{0}{:?}\u{0}{}\u{0}{}",
            self.kind.as_str(),
            self.basis,
            self.frame_pair.0,
            self.frame_pair.1
        );
        crate::sha256_hex(material)[..12].to_string()
    }
}

impl std::fmt::Display for CrashSignature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: ({}, {})", self.kind.as_str(), self.frame_pair.0, self.frame_pair.1)
    }
}

pub fn helper_set<S: AsRef<str>>(patterns: &[S]) -> Result<RegexSet, regex::Error> {
    RegexSet::new(patterns.iter().map(|p| p.as_ref()))
}

/// First two frame names not matching a helper pattern, padded with
/// [`SENTINEL`]; `None` when nothing survives.
pub fn frame_pair(frames: &[StackFrame], helpers: &RegexSet) -> Option<(String, String)> {
    let mut kept = frames
        .iter()
        .map(|f| f.function_name.as_str())
        .filter(|name| !helpers.is_match(name));
    let first = kept.next()?.to_string();
    let second = kept.next().unwrap_or(SENTINEL).to_string();
    Some((first, second))
}

/// Hash of the first [`STDERR_HEAD_BYTES`] of stderr after replacing paths
/// and hex addresses.
pub fn stderr_head_hash(stderr: &str) -> String {
    static PATH: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    static ADDR: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let path = PATH.get_or_init(|| Regex::new(r"(?:[A-Za-z]:)?(?:\.{0,2}/[^\s:/'`\x22]+)+/?").expect("static regex"));
    let addr = ADDR.get_or_init(|| Regex::new(r"0x[0-9a-fA-F]+").expect("static regex"));
    let normalized = addr.replace_all(&path.replace_all(stderr, "<path>"), "<addr>").into_owned();
    let mut end = normalized.len().min(STDERR_HEAD_BYTES);
    while !normalized.is_char_boundary(end) {
        end -= 1;
    }
    crate::sha256_hex(&normalized.as_bytes()[..end])[..16].to_string()
}

/// Signature of a crash from its frames, falling back to the stderr head.
pub fn signature(frames: &[StackFrame], helpers: &RegexSet, stderr: &str) -> CrashSignature {
    match frame_pair(frames, helpers) {
        Some(pair) => CrashSignature {
            kind: FindingKind::Crash,
            basis: SignatureBasis::Frames,
            frame_pair: pair,
        },
        None => CrashSignature {
            kind: FindingKind::Crash,
            basis: SignatureBasis::StderrHead,
            frame_pair: (format!("stderr:{}", stderr_head_hash(stderr)), SENTINEL.to_string()),
        },
    }
}

struct CompilerRules {
    parser: ParserRules,
    helpers: RegexSet,
}

/// Parser and helper rules for every compiler of a campaign.
pub struct TriageRules {
    per_compiler: BTreeMap<String, CompilerRules>,
    fallback: CompilerRules,
}

impl TriageRules {
    pub fn new(compilers: &[CompilerTarget]) -> Result<Self, TriageError> {
        let mut per_compiler = BTreeMap::new();
        for c in compilers {
            let helpers = helper_set(&c.effective_helper_patterns()).map_err(|e| TriageError::BadPattern {
                compiler: c.name.clone(),
                message: e.to_string(),
            })?;
            per_compiler.insert(
                c.name.clone(),
                CompilerRules {
                    parser: ParserRules::for_compiler(c)?,
                    helpers,
                },
            );
        }
        let generic = CompilerFamily::Generic;
        Ok(Self {
            per_compiler,
            fallback: CompilerRules {
                parser: ParserRules::for_family(generic),
                helpers: helper_set(generic.helper_patterns()).expect("static regexes"),
            },
        })
    }

    fn rules_for(&self, compiler: Option<&str>) -> &CompilerRules {
        compiler
            .and_then(|c| self.per_compiler.get(c))
            .unwrap_or(&self.fallback)
    }

    pub fn helpers_for(&self, compiler: Option<&str>) -> &RegexSet {
        &self.rules_for(compiler).helpers
    }

    pub fn frames_of(&self, finding: &Finding) -> Vec<StackFrame> {
        parse_trace(&finding.stderr, &self.rules_for(finding.compiler.as_deref()).parser)
    }

    pub fn signature_of(&self, finding: &Finding) -> CrashSignature {
        let tail = finding
            .mutator_chain
            .last()
            .cloned()
            .unwrap_or_else(|| SENTINEL.to_string());
        match finding.kind {
            FindingKind::Crash => {
                let rules = self.rules_for(finding.compiler.as_deref());
                signature(&parse_trace(&finding.stderr, &rules.parser), &rules.helpers, &finding.stderr)
            }
            FindingKind::Hang => CrashSignature {
                kind: FindingKind::Hang,
                basis: SignatureBasis::HangTail,
                frame_pair: (finding.compiler.clone().unwrap_or_else(|| SENTINEL.into()), tail),
            },
            FindingKind::Inconsistency => {
                let classes: Vec<String> = finding
                    .results
                    .iter()
                    .map(|(c, r)| format!("{c}:{}", r.status.as_str()))
                    .collect();
                CrashSignature {
                    kind: FindingKind::Inconsistency,
                    basis: SignatureBasis::Divergence,
                    frame_pair: (classes.join(","), tail),
                }
            }
        }
    }
}

/// Groups findings by signature; each bucket is ordered by timestamp.
pub fn bucket(findings: &[Finding], rules: &TriageRules) -> BTreeMap<CrashSignature, Vec<Finding>> {
    let mut buckets: BTreeMap<CrashSignature, Vec<Finding>> = BTreeMap::new();
    for f in findings {
        buckets.entry(rules.signature_of(f)).or_default().push(f.clone());
    }
    for list in buckets.values_mut() {
        list.sort_by(|a, b| {
            (a.timestamp_ms, a.seq, &a.finding_id).cmp(&(b.timestamp_ms, b.seq, &b.finding_id))
        });
    }
    buckets
}

pub const SUMMARY_FILE: &str = "summary.md";
pub const REPRO_FILE: &str = "repro.sh";

fn repro_script(program_file: &str, compilers: &[&CompilerTarget]) -> String {
    let mut s = String::from("#!/bin/sh\n# Run from this directory.\n");
    for c in compilers {
        let src = Path::new(program_file);
        let out = PathBuf::from(format!("./{}.out", c.name));
        let compile = c.compile_command(src, &out);
        let _ = writeln!(s, "{}", compile.iter().map(|a| shell_quote(a)).collect::<Vec<_>>().join(" "));
        if compilers.len() > 1 {
            let run = c.run_command(&out);
            let _ = writeln!(s, "{}", run.iter().map(|a| shell_quote(a)).collect::<Vec<_>>().join(" "));
        }
    }
    s
}

/// Writes `bucket-<digest>/` with `summary.md`, the smallest triggering
/// program and `repro.sh`. Output depends only on the inputs.
pub fn render_report(
    signature: &CrashSignature,
    findings: &[Finding],
    compilers: &[CompilerTarget],
    output_dir: &Path,
) -> Result<PathBuf, TriageError> {
    let first = findings.first().ok_or(TriageError::EmptyBucket)?;
    let smallest = findings
        .iter()
        .min_by(|a, b| {
            (a.program.text.len(), &a.finding_id).cmp(&(b.program.text.len(), &b.finding_id))
        })
        .expect("non-empty");
    let dir = output_dir.join(format!("bucket-{}", signature.digest()));
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TriageError::Io { path, source }
    };
    fs::create_dir_all(&dir).map_err(io(&dir))?;

    let involved: Vec<&CompilerTarget> = match &first.compiler {
        Some(name) => compilers.iter().filter(|c| &c.name == name).collect(),
        None => compilers
            .iter()
            .filter(|c| first.results.contains_key(&c.name))
            .collect(),
    };
    let ext = involved.first().map_or("src", |c| c.source_ext.as_str());
    let program_file = format!("program.{ext}");
    fs::write(dir.join(&program_file), &smallest.program.text).map_err(io(&dir.join(&program_file)))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "# {} bucket {}\n", signature.kind.as_str(), signature.digest());
    let _ = writeln!(summary, "- signature: `{}` / `{}`", signature.frame_pair.0, signature.frame_pair.1);
    let _ = writeln!(summary, "- basis: {:?}", signature.basis);
    let _ = writeln!(summary, "- kind: {}", signature.kind.as_str());
    let compiler_label = match &first.compiler {
        Some(c) => c.clone(),
        None => first.results.keys().cloned().collect::<Vec<_>>().join(", "),
    };
    let _ = writeln!(summary, "- compiler: {compiler_label}");
    let _ = writeln!(summary, "- count: {}", findings.len());
    let _ = writeln!(summary, "- first seen: {} (seed {})", first.finding_id, first.seed_id);
    let _ = writeln!(summary, "- first-seen mutator chain: {}", first.mutator_chain.join(" -> "));
    let _ = writeln!(summary, "- smallest program: {program_file} ({} bytes, from {})", smallest.program.text.len(), smallest.finding_id);
    let _ = writeln!(summary, "\n## Findings\n");
    for f in findings {
        let _ = writeln!(summary, "- {} seed={} chain={}", f.finding_id, f.seed_id, f.mutator_chain.join(","));
    }
    if !first.results.is_empty() {
        let _ = writeln!(summary, "\n## Divergent results\n");
        for (c, r) in &first.results {
            let _ = writeln!(summary, "- {c}: {:?} exit={:?} stdout={:?}", r.status, r.exit_code, r.stdout.trim_end());
        }
    }
    let excerpt: String = smallest.stderr.lines().take(40).collect::<Vec<_>>().join("\n");
    if !excerpt.is_empty() {
        let _ = writeln!(summary, "\n## Diagnostics (first 40 lines)\n\n```\n{excerpt}\n```");
    }
    fs::write(dir.join(SUMMARY_FILE), summary).map_err(io(&dir.join(SUMMARY_FILE)))?;

    let repro = if involved.is_empty() {
        format!("#!/bin/sh\n# compiler configuration not available; program is {program_file}\n")
    } else {
        repro_script(&program_file, &involved)
    };
    let repro_path = dir.join(REPRO_FILE);
    fs::write(&repro_path, repro).map_err(io(&repro_path))?;
    process::make_executable(&repro_path).map_err(io(&repro_path))?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(names: &[&str]) -> Vec<StackFrame> {
        names
            .iter()
            .map(|n| StackFrame {
                function_name: n.to_string(),
                location: None,
            })
            .collect()
    }

    #[test]
    fn no_frames_in_plain_text() {
        let rules = ParserRules::for_family(CompilerFamily::Generic);
        assert!(parse_trace("error: expected `;`\nnote: something\n", &rules).is_empty());
    }

    #[test]
    fn five_numbered_frames_with_noise() {
        let trace = "\
thread 'rustc' panicked at compiler/rustc_middle/src/ty/mod.rs:10:5:
stack backtrace:
   0: std::panicking::begin_panic
   1: rustc_middle::util::bug::bug_fmt
      at /rustc/abc/compiler/rustc_middle/src/util/bug.rs:35:5
note: interleaved noise
   2: rustc_hir_typeck::check_expr::h0123456789abcdef
   3: rustc_hir_typeck::typeck
random line
   4: rustc_interface::passes::analysis
";
        let got = parse_trace(trace, &ParserRules::for_family(CompilerFamily::Rustc));
        let names: Vec<_> = got.iter().map(|f| f.function_name.as_str()).collect();
        assert_eq!(
            names,
            [
                "std::panicking::begin_panic",
                "rustc_middle::util::bug::bug_fmt",
                "rustc_hir_typeck::check_expr",
                "rustc_hir_typeck::typeck",
                "rustc_interface::passes::analysis"
            ]
        );
        assert_eq!(got[1].location.as_deref(), Some("/rustc/abc/compiler/rustc_middle/src/util/bug.rs:35:5"));
    }

    #[test]
    fn gcc_and_sanitizer_frames() {
        let gcc = "\
internal compiler error: in foo, at bar.cc:1
0x1a2b3c internal_error(char const*, ...)
\t???:0
0x4d5e6f gimplify_expr(tree_node**, gimple**)
\t../../gcc/gimplify.cc:123
";
        let got = parse_trace(gcc, &ParserRules::for_family(CompilerFamily::Gcc));
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].function_name, "gimplify_expr");
        assert_eq!(got[1].location.as_deref(), Some("../../gcc/gimplify.cc:123"));

        let asan = " #0 0x55d5 in clang::Sema::Check(int) /src/Sema.cpp:10:3\n #1 0x55d6 llvm::sys::RunSignalHandlers() (/usr/bin/clang+0x1)\n";
        let got = parse_trace(asan, &ParserRules::for_family(CompilerFamily::Clang));
        assert_eq!(got[0].function_name, "clang::Sema::Check");
        assert_eq!(got[0].location.as_deref(), Some("/src/Sema.cpp:10:3"));
        assert_eq!(got[1].function_name, "llvm::sys::RunSignalHandlers");
    }

    #[test]
    fn signature_rules() {
        let helpers = helper_set(&["^helper_"]).unwrap();
        let s = signature(&frames(&["helper_x", "f", "g", "h"]), &helpers, "");
        assert_eq!(s.frame_pair, ("f".into(), "g".into()));
        let s = signature(&frames(&["f"]), &helpers, "");
        assert_eq!(s.frame_pair, ("f".into(), SENTINEL.into()));
        let a = signature(&[], &helpers, "boom at /tmp/x/y.rs:3 0xdeadbeef");
        let b = signature(&[], &helpers, "boom at /home/z.rs:3 0x1234");
        assert_eq!(a, b);
        assert_eq!(a.basis, SignatureBasis::StderrHead);
        assert_ne!(a, signature(&[], &helpers, "other"));
    }

    #[test]
    fn rejects_pattern_without_func_group() {
        assert!(matches!(ParserRules::new(&["^x$"]), Err(TriageError::MissingFuncGroup(_))));
    }
}
