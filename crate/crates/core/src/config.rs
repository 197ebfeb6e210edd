//! Declarative run configuration loaded from one TOML file.
//!
//! Relative paths are resolved against the directory holding the file.
//! `key.path=value` overrides are applied to the parsed document before it is
//! checked, so they obey the same schema.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::corpus::ReportFilter;
use crate::factory::{FailureLabel, FailureRules, ForgeConfig};
use crate::fuzz::{CampaignConfig, CompilerTarget, CompositionMode, DepthSchedule};
use crate::llm::{Rates, SamplingParams};
use crate::runtime::Toolchain;
use crate::seeds::LangFilter;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config file {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("override `{text}`: {message}")]
    Override { text: String, message: String },
    #[error("{what} not found: {path}")]
    MissingPath { what: String, path: PathBuf },
    #[error("{0}")]
    Missing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Live,
    Replay,
    Scripted,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "replay" => Ok(Self::Replay),
            "scripted" => Ok(Self::Scripted),
            other => Err(format!("unknown backend `{other}` (live, replay, scripted)")),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub output: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub collected_seeds: Option<PathBuf>,
    pub enhanced_seeds: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub probe_seeds: Option<PathBuf>,
    pub specs: Option<PathBuf>,
    pub mutators: Option<PathBuf>,
    pub usage: Option<PathBuf>,
    pub findings: Option<PathBuf>,
    pub triage: Option<PathBuf>,
    pub work: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub lang_template: Option<PathBuf>,
    pub examples: Option<PathBuf>,
    #[serde(default)]
    pub testsuites: Vec<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineConfig {
    #[serde(default = "default_api_base")]
    pub api_base: String,
    #[serde(default)]
    pub repos: Vec<String>,
    /// Name of the environment variable holding the tracker token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_mine_limit")]
    pub limit: usize,
    #[serde(default)]
    pub since: Option<String>,
    #[serde(default)]
    pub filter: ReportFilter,
}

fn default_api_base() -> String {
    "https://api.github.com".into()
}

fn default_mine_limit() -> usize {
    500
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            api_base: default_api_base(),
            repos: Vec::new(),
            token_env: None,
            limit: default_mine_limit(),
            since: None,
            filter: ReportFilter::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Replay transcript, or scripted response list.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    /// Append every exchange to this transcript.
    #[serde(default)]
    pub record: Option<PathBuf>,
    #[serde(default = "default_http_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_rates")]
    pub rates: Rates,
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1/chat/completions".into()
}

fn default_model() -> String {
    "gpt-4o".into()
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_http_timeout() -> f64 {
    300.0
}

fn default_rates() -> Rates {
    Rates {
        input_per_million: 2.50,
        output_per_million: 10.00,
    }
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::default(),
            endpoint: default_endpoint(),
            model_id: default_model(),
            api_key_env: default_key_env(),
            transcript: None,
            record: None,
            timeout_secs: default_http_timeout(),
            rates: default_rates(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub pattern: String,
    pub label: FailureLabel,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeSettings {
    #[serde(default = "default_refinements")]
    pub max_refinements: u32,
    #[serde(default = "default_error_budget")]
    pub error_budget: usize,
    #[serde(default = "default_apply_secs")]
    pub apply_timeout_secs: f64,
    #[serde(default = "one")]
    pub workers: usize,
    /// Defaults by language; required for other languages.
    #[serde(default)]
    pub entry_marker: Option<String>,
    /// Compiler used to check mutated probe seeds; defaults to the first.
    #[serde(default)]
    pub reference_compiler: Option<String>,
    #[serde(default)]
    pub failure_rules: Vec<RuleConfig>,
    #[serde(default = "default_invention_temp")]
    pub invention_temperature: f64,
    #[serde(default = "default_precise_temp")]
    pub synthesis_temperature: f64,
    #[serde(default = "default_precise_temp")]
    pub refinement_temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
}

fn default_refinements() -> u32 {
    crate::factory::DEFAULT_MAX_REFINEMENTS
}
fn default_error_budget() -> usize {
    crate::factory::DEFAULT_ERROR_BUDGET
}
fn default_apply_secs() -> f64 {
    crate::runtime::DEFAULT_APPLY_TIMEOUT.as_secs_f64()
}
fn one() -> usize {
    1
}
fn default_invention_temp() -> f64 {
    0.7
}
fn default_precise_temp() -> f64 {
    0.2
}
fn default_max_tokens() -> u32 {
    4096
}

impl Default for ForgeSettings {
    fn default() -> Self {
        toml::from_str("").expect("all forge settings have defaults")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolchainConfig {
    pub command: Vec<String>,
    #[serde(default)]
    pub skeleton_dir: Option<PathBuf>,
    #[serde(default)]
    pub source_file: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<f64>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSettings {
    #[serde(default)]
    pub target_count: Option<usize>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub filter_compiler: Option<String>,
    #[serde(default)]
    pub extensions: Option<Vec<String>>,
    #[serde(default)]
    pub fence_hints: Option<Vec<String>>,
    #[serde(default = "one")]
    pub workers: usize,
}

impl Default for SeedSettings {
    fn default() -> Self {
        toml::from_str("").expect("all seed settings have defaults")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSettings {
    #[serde(default = "default_budget")]
    pub budget_secs: f64,
    #[serde(default)]
    pub mode: CompositionMode,
    #[serde(default)]
    pub depth: DepthSchedule,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub max_rounds: Option<u64>,
    #[serde(default = "default_apply_secs")]
    pub apply_timeout_secs: f64,
    /// Prebuilt mutator executables used alongside forged ones.
    #[serde(default)]
    pub external_mutators: Vec<PathBuf>,
}

fn default_budget() -> f64 {
    3600.0
}

impl Default for CampaignSettings {
    fn default() -> Self {
        toml::from_str("").expect("all campaign settings have defaults")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Target-language tag, e.g. `rust` or `cpp`.
    pub language: String,
    #[serde(default)]
    pub display_name: Option<String>,
    /// Seed tokenizer: `rust`, `cpp` or `generic`; defaults from language.
    #[serde(default)]
    pub tokenizer: Option<String>,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub mine: MineConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub forge: ForgeSettings,
    #[serde(default)]
    pub toolchain: Option<ToolchainConfig>,
    #[serde(default)]
    pub compilers: Vec<CompilerTarget>,
    #[serde(default)]
    pub seeds: SeedSettings,
    #[serde(default)]
    pub campaign: CampaignSettings,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value), ConfigError> {
    let err = |message: &str| ConfigError::Override {
        text: text.to_string(),
        message: message.to_string(),
    };
    let (key, raw) = text.split_once('=').ok_or_else(|| err("expected key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(err("empty key segment"));
    }
    let raw = raw.trim();
    // TOML literal if it parses as one, bare string otherwise.
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn apply_override(doc: &mut toml::Table, path: &[String], value: toml::Value, text: &str) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = doc;
    for seg in parents {
        let entry = table
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::Override {
            text: text.to_string(),
            message: format!("`{seg}` is not a table"),
        })?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl Config {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str_with(&text, &base, overrides).map_err(|e| match e {
            ConfigError::Invalid { message, .. } => ConfigError::Invalid {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_str_with(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            path: PathBuf::from("<inline>"),
            message,
        };
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut doc, &path, value, o)?;
        }
        let mut cfg: Config = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        // Tools run with their own working directories, so relative paths
        // must be anchored before anything is resolved against the base.
        let base = if base_dir.as_os_str().is_empty() { Path::new(".") } else { base_dir };
        cfg.base_dir = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
        for c in &cfg.compilers {
            c.validate().map_err(|e| invalid(e.to_string()))?;
        }
        let mut names: Vec<&str> = cfg.compilers.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("duplicate compiler name `{}`", w[0])));
        }
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn path_or(&self, p: &Option<PathBuf>, default_name: &str) -> PathBuf {
        match p {
            Some(p) => self.resolve(p),
            None => self.output_dir().join(default_name),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(self.paths.output.as_deref().unwrap_or(Path::new("out")))
    }

    pub fn reports_path(&self) -> PathBuf {
        self.path_or(&self.paths.reports, "reports.jsonl")
    }
    pub fn collected_seeds_path(&self) -> PathBuf {
        self.path_or(&self.paths.collected_seeds, "seeds.collected.jsonl")
    }
    pub fn enhanced_seeds_path(&self) -> PathBuf {
        self.path_or(&self.paths.enhanced_seeds, "seeds.enhanced.jsonl")
    }
    pub fn seeds_path(&self) -> PathBuf {
        self.path_or(&self.paths.seeds, "seeds.jsonl")
    }
    /// Explicit probe-seed store, if configured.
    pub fn probe_seeds_path(&self) -> Option<PathBuf> {
        self.paths.probe_seeds.as_ref().map(|p| self.resolve(p))
    }
    pub fn specs_path(&self) -> PathBuf {
        self.path_or(&self.paths.specs, "specs.jsonl")
    }
    pub fn mutators_path(&self) -> PathBuf {
        self.path_or(&self.paths.mutators, "mutators.jsonl")
    }
    pub fn usage_path(&self) -> PathBuf {
        self.path_or(&self.paths.usage, "usage.jsonl")
    }
    pub fn findings_dir(&self) -> PathBuf {
        self.path_or(&self.paths.findings, "findings")
    }
    pub fn triage_dir(&self) -> PathBuf {
        self.path_or(&self.paths.triage, "triage")
    }
    pub fn work_dir(&self) -> PathBuf {
        self.path_or(&self.paths.work, "work")
    }

    pub fn templates_dir(&self) -> Result<PathBuf, ConfigError> {
        self.paths
            .templates
            .as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| ConfigError::Missing("paths.templates is not set".into()))
    }

    pub fn lang_template_path(&self) -> Result<PathBuf, ConfigError> {
        self.paths
            .lang_template
            .as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| ConfigError::Missing("paths.lang_template is not set".into()))
    }

    pub fn examples_dir(&self) -> Option<PathBuf> {
        self.paths.examples.as_ref().map(|p| self.resolve(p))
    }

    pub fn testsuite_dirs(&self) -> Vec<PathBuf> {
        self.paths.testsuites.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn display_name(&self) -> String {
        if let Some(n) = &self.display_name {
            return n.clone();
        }
        match self.language.as_str() {
            "rust" => "Rust".into(),
            "cpp" | "c++" => "C++".into(),
            "c" => "C".into(),
            other => other.to_string(),
        }
    }

    pub fn tokenizer_name(&self) -> &str {
        self.tokenizer.as_deref().unwrap_or(&self.language)
    }

    pub fn entry_marker(&self) -> Result<String, ConfigError> {
        if let Some(m) = &self.forge.entry_marker {
            return Ok(m.clone());
        }
        match self.language.as_str() {
            "rust" => Ok("impl Mutator for".into()),
            "cpp" | "c++" => Ok("::Callback::run".into()),
            other => Err(ConfigError::Missing(format!(
                "forge.entry_marker must be set for language `{other}`"
            ))),
        }
    }

    pub fn lang_filter(&self) -> LangFilter {
        let mut f = LangFilter::for_language(&self.language);
        if let Some(ext) = &self.seeds.extensions {
            f.extensions = ext.clone();
        }
        if let Some(h) = &self.seeds.fence_hints {
            f.fence_hints = h.clone();
        }
        f
    }

    /// Compilers with every path-like command word resolved against the
    /// config directory when it names an existing relative file.
    pub fn compiler_targets(&self) -> Vec<CompilerTarget> {
        self.compilers
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.compile_cmd = self.resolve_argv(&c.compile_cmd);
                c.run_cmd = c.run_cmd.as_ref().map(|r| self.resolve_argv(r));
                c
            })
            .collect()
    }

    fn resolve_argv(&self, argv: &[String]) -> Vec<String> {
        argv.iter()
            .map(|a| {
                let looks_relative = (a.starts_with("./") || a.starts_with("../")) && !a.contains('{');
                if looks_relative {
                    self.resolve(Path::new(a)).to_string_lossy().into_owned()
                } else {
                    a.clone()
                }
            })
            .collect()
    }

    pub fn compiler(&self, name: Option<&str>) -> Result<CompilerTarget, ConfigError> {
        let all = self.compiler_targets();
        match name {
            Some(n) => all
                .into_iter()
                .find(|c| c.name == n)
                .ok_or_else(|| ConfigError::Missing(format!("no compiler named `{n}` in config"))),
            None => all
                .into_iter()
                .next()
                .ok_or_else(|| ConfigError::Missing("no [[compilers]] configured".into())),
        }
    }

    pub fn toolchain(&self) -> Result<Toolchain, ConfigError> {
        let t = self
            .toolchain
            .as_ref()
            .ok_or_else(|| ConfigError::Missing("no [toolchain] configured".into()))?;
        Ok(Toolchain {
            language: self.language.clone(),
            command: self.resolve_argv(&t.command),
            skeleton_dir: t.skeleton_dir.as_ref().map(|p| self.resolve(p)),
            source_file: t.source_file.clone().unwrap_or_else(|| "mutator.src".into()),
            timeout_secs: t
                .timeout_secs
                .unwrap_or(crate::runtime::DEFAULT_BUILD_TIMEOUT.as_secs_f64()),
            cache_dir: t
                .cache_dir
                .as_ref()
                .map(|p| self.resolve(p))
                .unwrap_or_else(|| self.output_dir().join("build-cache")),
        })
    }

    pub fn failure_rules(&self) -> Result<FailureRules, ConfigError> {
        FailureRules::with_overrides(self.forge.failure_rules.iter().map(|r| (r.pattern.clone(), r.label)))
            .map_err(|e| ConfigError::Invalid {
                path: PathBuf::from("forge.failure_rules"),
                message: e.to_string(),
            })
    }

    pub fn forge_config(&self) -> ForgeConfig {
        let f = &self.forge;
        let mut c = ForgeConfig::new(self.llm.model_id.clone(), self.work_dir().join("forge"));
        c.max_refinements = f.max_refinements;
        c.error_budget = f.error_budget;
        c.apply_timeout = Duration::from_secs_f64(f.apply_timeout_secs);
        c.invention_params = SamplingParams::new(f.invention_temperature, f.max_output_tokens);
        c.synthesis_params = SamplingParams::new(f.synthesis_temperature, f.max_output_tokens);
        c.refinement_params = SamplingParams::new(f.refinement_temperature, f.max_output_tokens);
        c
    }

    pub fn campaign_config(&self) -> CampaignConfig {
        let s = &self.campaign;
        let mut c = CampaignConfig::new(Duration::from_secs_f64(s.budget_secs.max(0.0)), self.work_dir().join("fuzz"));
        c.composition_mode = s.mode;
        c.depth_schedule = s.depth;
        c.rng_seed = s.rng_seed;
        c.workers = s.workers;
        c.max_rounds = s.max_rounds;
        c.apply_timeout = Duration::from_secs_f64(s.apply_timeout_secs);
        c
    }

    pub fn external_mutators(&self) -> Vec<PathBuf> {
        self.campaign.external_mutators.iter().map(|p| self.resolve(p)).collect()
    }

    /// Fails unless `path` exists, naming what it is.
    pub fn require(what: &str, path: &Path) -> Result<(), ConfigError> {
        if path.exists() {
            Ok(())
        } else {
            Err(ConfigError::MissingPath {
                what: what.to_string(),
                path: path.to_path_buf(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
language = "rust"

[paths]
output = "o"

[[compilers]]
name = "rustc"
compile_cmd = ["rustc", "{src}", "-o", "{out}"]

[campaign]
depth = { capped = 3 }
mode = "independent"
"#;

    #[test]
    fn defaults_and_resolution() {
        let c = Config::from_str_with(MINIMAL, Path::new("/etc/mf"), &[]).unwrap();
        assert_eq!(c.seeds_path(), PathBuf::from("/etc/mf/o/seeds.jsonl"));
        assert_eq!(c.forge.max_refinements, 10);
        assert_eq!(c.entry_marker().unwrap(), "impl Mutator for");
        assert_eq!(c.campaign.depth, DepthSchedule::Capped(3));
        assert_eq!(c.campaign.mode, CompositionMode::Independent);
        assert_eq!(c.llm.rates.input_per_million, 2.5);
        assert_eq!(c.display_name(), "Rust");
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = Config::from_str_with(&format!("{MINIMAL}\n[forge]\nmax_attempt = 3\n"), Path::new("."), &[]).unwrap_err();
        assert!(err.to_string().contains("max_attempt"), "{err}");
    }

    #[test]
    fn overrides_apply_before_checking() {
        let o = ["campaign.rng_seed=42".to_string(), "llm.backend=replay".to_string(), "forge.entry_marker=# go".to_string()];
        let c = Config::from_str_with(MINIMAL, Path::new("."), &o).unwrap();
        assert_eq!(c.campaign.rng_seed, 42);
        assert_eq!(c.llm.backend, BackendKind::Replay);
        assert_eq!(c.forge.entry_marker.as_deref(), Some("# go"));
        assert!(Config::from_str_with(MINIMAL, Path::new("."), &["campaign.nope=1".into()]).is_err());
        assert!(Config::from_str_with(MINIMAL, Path::new("."), &["novalue".into()]).is_err());
    }

    #[test]
    fn duplicate_compilers_rejected() {
        let text = format!("{MINIMAL}\n[[compilers]]\nname = \"rustc\"\ncompile_cmd = [\"x\"]\n");
        let err = Config::from_str_with(&text, Path::new("."), &[]).unwrap_err();
        assert!(err.to_string().contains("duplicate compiler"), "{err}");
    }
}
