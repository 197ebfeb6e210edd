//! Turns bug reports into validated mutators: invention of a mutation
//! specification, synthesis of an implementation, then build/validate with
//! bounded refinement.

pub mod prompt;
pub mod spec;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

pub use prompt::{bindings, PromptTemplate, RenderedPrompt, TemplateError, SECTIONS};
pub use spec::{parse_spec, strip_fence, MutatorSpec, SpecFields, SpecParseError};

use crate::corpus::{BugReport, ProgramText};
use crate::fuzz::CompilerTarget;
use crate::llm::{Agent, Gateway, LlmError, LlmRequest, Message, SamplingParams};
use crate::runtime::{self, ArtifactStatus, BuildOutcome, MutatorArtifact, RuntimeError, Toolchain, ValidationReport};
use crate::seeds::SeedProgram;
use crate::store::{self, Keyed, StoreError};

pub const DEFAULT_MAX_REFINEMENTS: u32 = 10;
pub const DEFAULT_ERROR_BUDGET: usize = 16 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureLabel {
    MissingChanges,
    IncorrectMutation,
    IncorrectMatching,
    DeprecatedApi,
    IncorrectParameters,
    SyntaxParseError,
    OperandTypeMismatch,
    UndeclaredName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFamily {
    /// The mutator runs but does the wrong thing.
    Semantic,
    /// The mutator source never became a working executable.
    Invalidity,
}

impl FailureLabel {
    pub const ALL: [FailureLabel; 8] = [
        FailureLabel::MissingChanges,
        FailureLabel::IncorrectMutation,
        FailureLabel::IncorrectMatching,
        FailureLabel::DeprecatedApi,
        FailureLabel::IncorrectParameters,
        FailureLabel::SyntaxParseError,
        FailureLabel::OperandTypeMismatch,
        FailureLabel::UndeclaredName,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureLabel::MissingChanges => "missing_changes",
            FailureLabel::IncorrectMutation => "incorrect_mutation",
            FailureLabel::IncorrectMatching => "incorrect_matching",
            FailureLabel::DeprecatedApi => "deprecated_api",
            FailureLabel::IncorrectParameters => "incorrect_parameters",
            FailureLabel::SyntaxParseError => "syntax_parse_error",
            FailureLabel::OperandTypeMismatch => "operand_type_mismatch",
            FailureLabel::UndeclaredName => "undeclared_name",
        }
    }

    pub fn family(self) -> LabelFamily {
        match self {
            FailureLabel::MissingChanges | FailureLabel::IncorrectMutation | FailureLabel::IncorrectMatching => {
                LabelFamily::Semantic
            }
            _ => LabelFamily::Invalidity,
        }
    }
}

impl std::fmt::Display for FailureLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FailureLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FailureLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown failure label `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutatorSource {
    pub spec_id: String,
    pub language: String,
    pub code: String,
    pub template_id: String,
    /// 0 for the synthesized source, +1 per successful refinement.
    pub generation: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementRecord {
    /// 1-based refinement index.
    pub attempt: u32,
    pub compile_errors: String,
    /// Empty when the agent returned nothing usable.
    pub revised_code: String,
}

#[derive(Debug, thiserror::Error)]
pub enum FactoryError {
    #[error("template for the {expected} agent required, got {got}")]
    WrongAgent { expected: &'static str, got: &'static str },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("invention response unparseable ({missing}) after re-ask")]
    InventionParse { missing: SpecParseError, raw: String },
    #[error("synthesis returned an empty response")]
    EmptySynthesis,
    #[error("refinement returned an empty response")]
    EmptyRefinement,
    #[error("refinement needs non-empty error text")]
    NoErrors,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("language asset {path}: {message}")]
    Asset { path: PathBuf, message: String },
    #[error("bad failure rule `{pattern}`: {message}")]
    BadRule { pattern: String, message: String },
}

/// Everything language-specific that synthesis and refinement need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageProfile {
    /// Short tag, e.g. `rust`.
    pub language: String,
    /// Name used in prompts, e.g. `Rust`.
    pub display_name: String,
    /// Text every accepted mutator source must contain.
    pub entry_marker: String,
    pub template_id: String,
    pub lang_template: String,
    pub examples: Vec<String>,
}

impl LanguageProfile {
    /// Reads the skeleton file and every regular file of `examples_dir`
    /// (sorted by name; a missing directory means no examples).
    pub fn load(
        language: &str,
        display_name: &str,
        entry_marker: &str,
        template_path: &Path,
        examples_dir: Option<&Path>,
    ) -> Result<Self, FactoryError> {
        let asset_err = |path: &Path, e: std::io::Error| FactoryError::Asset {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let lang_template = std::fs::read_to_string(template_path).map_err(|e| asset_err(template_path, e))?;
        let stem = template_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let template_id = format!("{stem}-{}", &crate::sha256_hex(&lang_template)[..8]);
        let mut examples = Vec::new();
        if let Some(dir) = examples_dir.filter(|d| d.is_dir()) {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| asset_err(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            paths.sort();
            for p in paths {
                examples.push(std::fs::read_to_string(&p).map_err(|e| asset_err(&p, e))?);
            }
        }
        Ok(Self {
            language: language.to_string(),
            display_name: display_name.to_string(),
            entry_marker: entry_marker.to_string(),
            template_id,
            lang_template,
            examples,
        })
    }

    fn examples_text(&self) -> String {
        if self.examples.is_empty() {
            return "(none provided)".into();
        }
        self.examples
            .iter()
            .enumerate()
            .map(|(i, e)| format!("// ---- example {} ----\n{}", i + 1, e.trim_end()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTemplates {
    pub invention: PromptTemplate,
    pub synthesis: PromptTemplate,
    pub refinement: PromptTemplate,
}

impl AgentTemplates {
    /// Loads `invention.txt`, `synthesis.txt` and `refinement.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, TemplateError> {
        Ok(Self {
            invention: PromptTemplate::load(Agent::Invention, &dir.join("invention.txt"))?,
            synthesis: PromptTemplate::load(Agent::Synthesis, &dir.join("synthesis.txt"))?,
            refinement: PromptTemplate::load(Agent::Refinement, &dir.join("refinement.txt"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeConfig {
    pub max_refinements: u32,
    pub model_id: String,
    pub invention_params: SamplingParams,
    pub synthesis_params: SamplingParams,
    pub refinement_params: SamplingParams,
    /// Bytes of error text, counted from the end, given to refinement.
    pub error_budget: usize,
    pub apply_timeout: Duration,
    /// Scratch space for validation builds of mutated seeds.
    pub work_dir: PathBuf,
    /// Distinguishes repeated forges of the same report.
    pub variant: u32,
}

impl ForgeConfig {
    pub fn new(model_id: impl Into<String>, work_dir: impl Into<PathBuf>) -> Self {
        Self {
            max_refinements: DEFAULT_MAX_REFINEMENTS,
            model_id: model_id.into(),
            invention_params: SamplingParams::new(0.7, 4096),
            synthesis_params: SamplingParams::new(0.2, 4096),
            refinement_params: SamplingParams::new(0.2, 4096),
            error_budget: DEFAULT_ERROR_BUDGET,
            apply_timeout: runtime::DEFAULT_APPLY_TIMEOUT,
            work_dir: work_dir.into(),
            variant: 0,
        }
    }
}

/// Keeps the last `budget` bytes of `text` (on a char boundary), prefixed by
/// a note saying how much was dropped.
pub fn truncate_tail(text: &str, budget: usize) -> String {
    if text.len() <= budget {
        return text.to_string();
    }
    let mut start = text.len() - budget;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    format!("[... {start} earlier bytes omitted ...]\n{}", &text[start..])
}

fn sanitize_id(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .take(48)
        .collect();
    if cleaned.is_empty() {
        "report".into()
    } else {
        cleaned
    }
}

pub fn mutator_id_for(report_id: &str, language: &str, variant: u32) -> String {
    let h = crate::sha256_hex(format!("{report_id}\0{language}\0{variant}"));
    format!("m-{}-{}", sanitize_id(report_id), &h[..6])
}

/// Pulls mutator code out of a response: a leading fence is stripped; prose
/// around fenced blocks is dropped, preferring the block holding `marker`.
pub fn extract_code(response: &str, marker: &str) -> String {
    let trimmed = response.trim_start();
    if trimmed.starts_with("```") {
        return strip_fence(response).to_string();
    }
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in response.split_inclusive('\n') {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(b) => blocks.push(b),
                None => current = Some(String::new()),
            }
        } else if let Some(b) = current.as_mut() {
            b.push_str(line);
        }
    }
    if blocks.is_empty() {
        return response.to_string();
    }
    blocks
        .iter()
        .find(|b| !marker.is_empty() && b.contains(marker))
        .unwrap_or(&blocks[0])
        .clone()
}

/// Who is calling, for ledger attribution and prompt bindings.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub gateway: &'a Gateway,
    pub model_id: &'a str,
    pub mutator_id: &'a str,
    pub profile: &'a LanguageProfile,
}

fn check_agent(t: &PromptTemplate, expected: Agent) -> Result<(), FactoryError> {
    if t.agent == expected {
        Ok(())
    } else {
        Err(FactoryError::WrongAgent {
            expected: expected.as_str(),
            got: t.agent.as_str(),
        })
    }
}

fn ask(ctx: &AgentContext<'_>, agent: Agent, messages: Vec<Message>, params: SamplingParams) -> Result<String, LlmError> {
    let request = LlmRequest {
        model_id: ctx.model_id.to_string(),
        messages,
        params,
    };
    Ok(ctx.gateway.complete(agent, ctx.mutator_id, &request)?.text)
}

fn invention_bindings(report: &BugReport, display_name: &str) -> BTreeMap<String, String> {
    let tag = if report.labels.is_empty() {
        "(none)".to_string()
    } else {
        report.labels.join(", ")
    };
    let code = if report.snippets.is_empty() {
        "(none provided)".to_string()
    } else {
        report
            .snippets
            .iter()
            .map(|s| s.text.trim_end())
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    bindings([
        ("Language", display_name.to_string()),
        ("Tag", tag),
        ("Bug Descriptions", format!("{}\n\n{}", report.title, report.body.trim_end())),
        ("Bug-Triggering Code", code),
    ])
}

fn format_reminder(missing: &SpecParseError) -> String {
    format!(
        "I could not read your answer: {missing}. Answer again as plain text using these labels, \
         each at the start of its own line and followed by a colon: Name, Target, Description, \
         Constraints, Before, After. Put the example programs on the lines after Before: and After:."
    )
}

/// Asks the invention agent for one specification; on a malformed answer,
/// re-asks once in the same conversation.
pub fn invent(
    ctx: &AgentContext<'_>,
    report: &BugReport,
    template: &PromptTemplate,
    params: SamplingParams,
    variant: u32,
) -> Result<MutatorSpec, FactoryError> {
    check_agent(template, Agent::Invention)?;
    let rendered = template.render(&invention_bindings(report, &ctx.profile.display_name))?;
    let mut messages = rendered.messages();
    let first = ask(ctx, Agent::Invention, messages.clone(), params)?;
    let (fields, raw) = match parse_spec(&first) {
        Ok(f) => (f, first),
        Err(missing) => {
            messages.push(Message::assistant(&first));
            messages.push(Message::user(format_reminder(&missing)));
            let second = ask(ctx, Agent::Invention, messages, params)?;
            match parse_spec(&second) {
                Ok(f) => (f, second),
                Err(missing) => return Err(FactoryError::InventionParse { missing, raw: second }),
            }
        }
    };
    let h = crate::sha256_hex(format!(
        "{}\0{}\0{}\0{}",
        report.report_id, ctx.profile.language, variant, raw
    ));
    let hint = Some(ctx.profile.language.as_str());
    Ok(MutatorSpec {
        spec_id: format!("spec-{}", &h[..12]),
        source_report_id: report.report_id.clone(),
        name: fields.name,
        target_construct: fields.target_construct,
        description: fields.description,
        constraints: fields.constraints,
        before_example: ProgramText::with_hint(fields.before_example, hint),
        after_example: ProgramText::with_hint(fields.after_example, hint),
    })
}

/// Generation-0 implementation of `spec`.
pub fn synthesize(
    ctx: &AgentContext<'_>,
    spec: &MutatorSpec,
    template: &PromptTemplate,
    params: SamplingParams,
) -> Result<MutatorSource, FactoryError> {
    check_agent(template, Agent::Synthesis)?;
    let p = ctx.profile;
    let rendered = template.render(&bindings([
        ("Language", p.display_name.clone()),
        ("Mutator Specification", spec.render_text()),
        ("Mutator Template", p.lang_template.clone()),
        ("Mutator Examples", p.examples_text()),
    ]))?;
    let text = ask(ctx, Agent::Synthesis, rendered.messages(), params)?;
    let code = extract_code(&text, &p.entry_marker);
    if code.trim().is_empty() {
        return Err(FactoryError::EmptySynthesis);
    }
    Ok(MutatorSource {
        spec_id: spec.spec_id.clone(),
        language: p.language.clone(),
        code,
        template_id: p.template_id.clone(),
        generation: 0,
    })
}

/// Next generation of `source` given the errors it produced. `errors` is
/// cut to `error_budget` bytes from the tail before rendering.
pub fn refine(
    ctx: &AgentContext<'_>,
    source: &MutatorSource,
    errors: &str,
    template: &PromptTemplate,
    spec: &MutatorSpec,
    params: SamplingParams,
    error_budget: usize,
) -> Result<MutatorSource, FactoryError> {
    check_agent(template, Agent::Refinement)?;
    if errors.trim().is_empty() {
        return Err(FactoryError::NoErrors);
    }
    let p = ctx.profile;
    let rendered = template.render(&bindings([
        ("Language", p.display_name.clone()),
        ("Mutator Specification", spec.render_text()),
        ("Mutator Template", p.lang_template.clone()),
        ("Previous Code", source.code.clone()),
        ("Compile Errors", truncate_tail(errors, error_budget)),
    ]))?;
    let text = ask(ctx, Agent::Refinement, rendered.messages(), params)?;
    let code = extract_code(&text, &p.entry_marker);
    if code.trim().is_empty() {
        return Err(FactoryError::EmptyRefinement);
    }
    Ok(MutatorSource {
        code,
        generation: source.generation + 1,
        ..source.clone()
    })
}

/// Ordered diagnostic patterns mapped to invalidity labels.
#[derive(Debug, Clone)]
pub struct FailureRules {
    rules: Vec<(Regex, FailureLabel)>,
}

const DEFAULT_RULES: &[(&str, FailureLabel)] = &[
    (r"deprecated", FailureLabel::DeprecatedApi),
    (
        r"undeclared|cannot find (value|type|function|macro|trait|struct|crate|module)|not declared|unresolved (import|name)|use of undeclared|was not declared|unknown type name|no member named",
        FailureLabel::UndeclaredName,
    ),
    (
        r"mismatched types|invalid operands?|cannot convert|no viable conversion|incompatible types?|expected `[^`]*`, found `[^`]*`|cannot (add|subtract|multiply|divide|compare)",
        FailureLabel::OperandTypeMismatch,
    ),
    (
        r"expected one of|expected .{1,40}, found|syntax error|parse error|unexpected token|unclosed delimiter|unterminated|expected expression|expected ';'",
        FailureLabel::SyntaxParseError,
    ),
    (
        r"wrong number of (type )?arguments|no matching (member )?function|too (many|few) arguments|takes \d+ (generic )?arguments?|missing (argument|field)|no method named|this (function|method) takes",
        FailureLabel::IncorrectParameters,
    ),
];

impl Default for FailureRules {
    fn default() -> Self {
        Self::from_pairs(DEFAULT_RULES.iter().map(|(p, l)| (p.to_string(), *l))).expect("built-in rules compile")
    }
}

impl FailureRules {
    /// Case-insensitive rules, first match wins.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, FailureLabel)>) -> Result<Self, FactoryError> {
        let mut rules = Vec::new();
        for (pattern, label) in pairs {
            let re = RegexBuilder::new(&pattern)
                .case_insensitive(true)
                .build()
                .map_err(|e| FactoryError::BadRule {
                    pattern: pattern.clone(),
                    message: e.to_string(),
                })?;
            rules.push((re, label));
        }
        Ok(Self { rules })
    }

    /// Extra rules are consulted before the built-in table.
    pub fn with_overrides(extra: impl IntoIterator<Item = (String, FailureLabel)>) -> Result<Self, FactoryError> {
        let mut out = Self::from_pairs(extra)?;
        out.rules.extend(Self::default().rules);
        Ok(out)
    }

    pub fn match_text(&self, text: &str) -> Option<FailureLabel> {
        self.rules.iter().find(|(re, _)| re.is_match(text)).map(|(_, l)| *l)
    }
}

/// What the final failed attempt produced.
#[derive(Debug, Clone, Copy)]
pub enum FailureEvidence<'a> {
    BuildErrors(&'a str),
    Validation(&'a ValidationReport),
    Ineffective,
}

pub fn classify_failure(history: &[RefinementRecord], evidence: FailureEvidence<'_>, rules: &FailureRules) -> FailureLabel {
    match evidence {
        FailureEvidence::Ineffective => FailureLabel::IncorrectMatching,
        FailureEvidence::Validation(_) => FailureLabel::IncorrectMutation,
        FailureEvidence::BuildErrors(text) => {
            let text = if text.trim().is_empty() {
                history.last().map(|r| r.compile_errors.as_str()).unwrap_or("")
            } else {
                text
            };
            rules.match_text(text).unwrap_or(FailureLabel::IncorrectParameters)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    InventionParse,
    EmptySynthesis,
    NoProgress,
    AttemptsExhausted,
    Ineffective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub mutator_id: String,
    pub report_id: String,
    pub spec_id: Option<String>,
    pub reason: DiscardReason,
    pub status: ArtifactStatus,
    pub label: FailureLabel,
    pub history: Vec<RefinementRecord>,
    pub last_diagnostics: String,
    pub source: Option<MutatorSource>,
    pub raw_response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ForgeOutcome {
    Valid(MutatorArtifact),
    Discard(Discard),
}

impl Keyed for ForgeOutcome {
    fn key(&self) -> &str {
        match self {
            ForgeOutcome::Valid(a) => &a.mutator_id,
            ForgeOutcome::Discard(d) => &d.mutator_id,
        }
    }
}

impl ForgeOutcome {
    pub fn mutator_id(&self) -> &str {
        self.key()
    }

    pub fn history(&self) -> &[RefinementRecord] {
        match self {
            ForgeOutcome::Valid(a) => &a.history,
            ForgeOutcome::Discard(d) => &d.history,
        }
    }

    pub fn as_valid(&self) -> Option<&MutatorArtifact> {
        match self {
            ForgeOutcome::Valid(a) => Some(a),
            ForgeOutcome::Discard(_) => None,
        }
    }

    pub fn as_discard(&self) -> Option<&Discard> {
        match self {
            ForgeOutcome::Valid(_) => None,
            ForgeOutcome::Discard(d) => Some(d),
        }
    }
}

/// One forge run: the mutator description (if invention succeeded) and the outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgeRecord {
    pub spec: Option<MutatorSpec>,
    pub outcome: ForgeOutcome,
}

/// The fixed environment a forge runs in.
pub struct Forge<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a AgentTemplates,
    pub profile: &'a LanguageProfile,
    pub toolchain: &'a Toolchain,
    pub probe_seeds: &'a [SeedProgram],
    pub reference: &'a CompilerTarget,
    pub rules: &'a FailureRules,
    pub config: &'a ForgeConfig,
}

enum Attempt {
    Failed { errors: String, validation: Option<ValidationReport> },
    Valid { binary: PathBuf },
    Ineffective,
}

impl Forge<'_> {
    pub fn forge(&self, report: &BugReport) -> Result<ForgeRecord, FactoryError> {
        if self.probe_seeds.is_empty() {
            return Err(RuntimeError::NoProbeSeeds.into());
        }
        let cfg = self.config;
        let mutator_id = mutator_id_for(&report.report_id, &self.profile.language, cfg.variant);
        let ctx = AgentContext {
            gateway: self.gateway,
            model_id: &cfg.model_id,
            mutator_id: &mutator_id,
            profile: self.profile,
        };
        let discard = |reason, status, label, spec_id: Option<String>| Discard {
            mutator_id: mutator_id.clone(),
            report_id: report.report_id.clone(),
            spec_id,
            reason,
            status,
            label,
            history: Vec::new(),
            last_diagnostics: String::new(),
            source: None,
            raw_response: None,
        };

        let spec = match invent(&ctx, report, &self.templates.invention, cfg.invention_params, cfg.variant) {
            Ok(s) => s,
            Err(FactoryError::InventionParse { missing, raw }) => {
                let mut d = discard(
                    DiscardReason::InventionParse,
                    ArtifactStatus::BuildFailed,
                    FailureLabel::SyntaxParseError,
                    None,
                );
                d.last_diagnostics = missing.to_string();
                d.raw_response = Some(raw);
                return Ok(ForgeRecord {
                    spec: None,
                    outcome: ForgeOutcome::Discard(d),
                });
            }
            Err(e) => return Err(e),
        };
        let mut source = match synthesize(&ctx, &spec, &self.templates.synthesis, cfg.synthesis_params) {
            Ok(s) => s,
            Err(FactoryError::EmptySynthesis) => {
                let d = discard(
                    DiscardReason::EmptySynthesis,
                    ArtifactStatus::BuildFailed,
                    FailureLabel::SyntaxParseError,
                    Some(spec.spec_id.clone()),
                );
                return Ok(ForgeRecord {
                    spec: Some(spec),
                    outcome: ForgeOutcome::Discard(d),
                });
            }
            Err(e) => return Err(e),
        };

        let scratch = cfg.work_dir.join(&mutator_id);
        let mut history: Vec<RefinementRecord> = Vec::new();
        // Errors of the current source; kept when refinement returns nothing.
        let mut carried: Option<(String, Option<ValidationReport>)> = None;
        let outcome = loop {
            let attempt = history.len() as u32 + 1;
            let (errors, validation) = match carried.take() {
                Some(c) => c,
                None => match self.attempt(&source, &mutator_id, &scratch.join(format!("a{attempt}")))? {
                    Attempt::Valid { binary } => {
                        break ForgeOutcome::Valid(MutatorArtifact {
                            mutator_id: mutator_id.clone(),
                            spec_id: spec.spec_id.clone(),
                            report_id: report.report_id.clone(),
                            source,
                            binary_ref: Some(binary),
                            status: ArtifactStatus::Valid,
                            attempts: attempt,
                            history,
                            label: None,
                        });
                    }
                    Attempt::Ineffective => {
                        let mut d = discard(
                            DiscardReason::Ineffective,
                            ArtifactStatus::Ineffective,
                            classify_failure(&history, FailureEvidence::Ineffective, self.rules),
                            Some(spec.spec_id.clone()),
                        );
                        d.last_diagnostics = "no probe seed was changed".into();
                        d.history = history;
                        d.source = Some(source);
                        break ForgeOutcome::Discard(d);
                    }
                    Attempt::Failed { errors, validation } => (errors, validation),
                },
            };
            let failed = |reason, history: Vec<RefinementRecord>, source: MutatorSource| {
                let (status, evidence) = match &validation {
                    Some(v) => (ArtifactStatus::ValidationFailed, FailureEvidence::Validation(v)),
                    None => (ArtifactStatus::BuildFailed, FailureEvidence::BuildErrors(&errors)),
                };
                let mut d = discard(
                    reason,
                    status,
                    classify_failure(&history, evidence, self.rules),
                    Some(spec.spec_id.clone()),
                );
                d.last_diagnostics = truncate_tail(&errors, cfg.error_budget);
                d.history = history;
                d.source = Some(source);
                ForgeOutcome::Discard(d)
            };
            if history.len() as u32 >= cfg.max_refinements {
                break failed(DiscardReason::AttemptsExhausted, history, source);
            }
            let fed = truncate_tail(&errors, cfg.error_budget);
            match refine(
                &ctx,
                &source,
                &errors,
                &self.templates.refinement,
                &spec,
                cfg.refinement_params,
                cfg.error_budget,
            ) {
                Ok(next) => {
                    history.push(RefinementRecord {
                        attempt,
                        compile_errors: fed,
                        revised_code: next.code.clone(),
                    });
                    if next.code == source.code {
                        break failed(DiscardReason::NoProgress, history, next);
                    }
                    source = next;
                }
                Err(FactoryError::EmptyRefinement) => {
                    history.push(RefinementRecord {
                        attempt,
                        compile_errors: fed,
                        revised_code: String::new(),
                    });
                    carried = Some((errors, validation));
                }
                Err(e) => return Err(e),
            }
        };
        let _ = std::fs::remove_dir_all(&scratch);
        Ok(ForgeRecord {
            spec: Some(spec),
            outcome,
        })
    }

    fn attempt(&self, source: &MutatorSource, mutator_id: &str, scratch: &Path) -> Result<Attempt, FactoryError> {
        let marker = &self.profile.entry_marker;
        if !marker.is_empty() && !source.code.contains(marker.as_str()) {
            return Ok(Attempt::Failed {
                errors: format!(
                    "error: missing entry point: the source must contain `{marker}` as laid out in the {} mutator template\n",
                    self.profile.display_name
                ),
                validation: None,
            });
        }
        let binary = match runtime::build(source, self.toolchain)? {
            BuildOutcome::CompileErrors(errors) => {
                let errors = if errors.trim().is_empty() {
                    "error: build failed without diagnostics\n".to_string()
                } else {
                    errors
                };
                return Ok(Attempt::Failed { errors, validation: None });
            }
            BuildOutcome::Built { binary, .. } => binary,
        };
        let mut artifact = MutatorArtifact::from_binary(mutator_id, binary.clone());
        artifact.status = ArtifactStatus::Pending;
        let report = runtime::validate(&artifact, self.probe_seeds, self.reference, scratch, self.config.apply_timeout)?;
        let _ = std::fs::remove_dir_all(scratch);
        if !report.passed() {
            return Ok(Attempt::Failed {
                errors: report.diagnostics(),
                validation: Some(report),
            });
        }
        if report.any_changed() {
            Ok(Attempt::Valid { binary })
        } else {
            Ok(Attempt::Ineffective)
        }
    }

    /// Forges every report, `workers` at a time. Results are in report order.
    pub fn forge_all(&self, reports: &[BugReport], workers: usize) -> Vec<Result<ForgeRecord, FactoryError>> {
        let workers = workers.clamp(1, reports.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<ForgeRecord, FactoryError>>>> =
            Mutex::new((0..reports.len()).map(|_| None).collect());
        let work = || loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            let Some(report) = reports.get(i) else { break };
            let r = self.forge(report);
            slots.lock().expect("forge results")[i] = Some(r);
        };
        if workers == 1 {
            work();
        } else {
            std::thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(work);
                }
            });
        }
        slots
            .into_inner()
            .expect("forge results")
            .into_iter()
            .map(|r| r.expect("every report visited"))
            .collect()
    }
}

pub fn store_specs(path: &Path, specs: &[MutatorSpec]) -> Result<(), StoreError> {
    store::write_records(path, specs)
}

pub fn load_specs(path: &Path) -> Result<Vec<MutatorSpec>, StoreError> {
    store::read_records(path)
}

pub fn store_outcomes(path: &Path, outcomes: &[ForgeOutcome]) -> Result<(), StoreError> {
    store::write_records(path, outcomes)
}

pub fn load_outcomes(path: &Path) -> Result<Vec<ForgeOutcome>, StoreError> {
    store::read_records(path)
}

/// Valid artifacts out of an outcome store.
pub fn valid_artifacts(outcomes: &[ForgeOutcome]) -> Vec<MutatorArtifact> {
    outcomes.iter().filter_map(|o| o.as_valid().cloned()).collect()
}
