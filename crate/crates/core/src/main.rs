use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use mutforge::config::{BackendKind, Config, ConfigError};
use mutforge::corpus::{self, TrackerClient};
use mutforge::factory::{self, AgentTemplates, DiscardReason, Forge, ForgeOutcome, LanguageProfile};
use mutforge::fuzz::{self, CompositionMode, FindingStore, FindingKind};
use mutforge::http::UreqTransport;
use mutforge::llm::{self, Gateway, LiveBackend, LlmBackend, ScriptedBackend, UsageLedger, UsageRecord};
use mutforge::runtime::{ArtifactStatus, MutatorArtifact};
use mutforge::seeds::{self, LexicalTokenizer, SeedOrigin, SeedProgram};
use mutforge::store;
use mutforge::triage::{self, TriageRules};

#[derive(Parser)]
#[command(name = "mutforge", version, about = "Synthesize compiler-fuzzing mutators with LLM agents and fuzz with them")]
struct Cli {
    /// Configuration file.
    #[arg(short, long, default_value = "mutforge.toml", global = true)]
    config: PathBuf,
    /// Override a config value, e.g. `campaign.rng_seed=7`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch bug reports from the configured trackers.
    Mine {
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        since: Option<String>,
    },
    /// Seed corpus stages.
    #[command(subcommand)]
    Seed(SeedCommand),
    /// Invent, synthesize and refine mutators from stored reports.
    Forge(ForgeArgs),
    /// Run a fuzzing campaign with the valid mutators.
    Fuzz(FuzzArgs),
    /// Bucket findings by signature and write report bundles.
    Triage {
        #[arg(long)]
        findings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the stores.
    Stats {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum SeedCommand {
    /// Collect seeds from report snippets and test-suite directories.
    Build,
    /// Grow the collected seeds by identifier replacement.
    Enhance {
        #[arg(long)]
        target_count: Option<usize>,
        #[arg(long)]
        rng_seed: Option<u64>,
    },
    /// Keep the seeds a compiler accepts.
    Filter {
        #[arg(long)]
        compiler: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct ForgeArgs {
    /// Refinement cap per mutator.
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Replay transcript or scripted response file.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Record every exchange into this transcript.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Index of the first report to forge.
    #[arg(long, default_value_t = 0)]
    from: usize,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct FuzzArgs {
    /// Time budget in seconds.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    mode: Option<CompositionMode>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_rounds: Option<u64>,
}

/// Distinguishes configuration problems (exit 2) from operational ones.
enum Failure {
    Config(String),
    Op(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Op(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = Config::load(&cli.config, &cli.overrides)
        .map_err(Failure::from)
        .and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Op(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command, cfg: &Config) -> Outcome {
    match command {
        Command::Mine { limit, since } => mine(cfg, limit, since),
        Command::Seed(SeedCommand::Build) => seed_build(cfg),
        Command::Seed(SeedCommand::Enhance { target_count, rng_seed }) => seed_enhance(cfg, target_count, rng_seed),
        Command::Seed(SeedCommand::Filter { compiler, workers }) => seed_filter(cfg, compiler, workers),
        Command::Forge(args) => forge(cfg, args),
        Command::Fuzz(args) => fuzz_cmd(cfg, args),
        Command::Triage { findings, out } => triage_cmd(cfg, findings, out),
        Command::Stats { json } => stats(cfg, json),
    }
}

fn mine(cfg: &Config, limit: Option<usize>, since: Option<String>) -> Outcome {
    if cfg.mine.repos.is_empty() {
        return Err(Failure::Config("mine.repos is empty".into()));
    }
    let transport = UreqTransport::new(Duration::from_secs(60));
    let mut client = TrackerClient::new(&transport, cfg.mine.api_base.clone());
    client.token = cfg.mine.token_env.as_ref().and_then(|v| std::env::var(v).ok());
    let limit = limit.unwrap_or(cfg.mine.limit);
    let since = since.or_else(|| cfg.mine.since.clone());
    let mut all = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for repo in &cfg.mine.repos {
        let reports = client
            .fetch_reports(repo, &cfg.mine.filter, limit, since.as_deref())
            .with_context(|| format!("mine: repository {repo}"))?;
        for r in reports {
            if seen.insert(r.report_id.clone()) {
                all.push(r);
            }
        }
    }
    let path = cfg.reports_path();
    ensure_parent(&path)?;
    corpus::store_corpus(&path, &all).with_context(|| format!("mine: writing {}", path.display()))?;
    println!("mine: {} reports -> {}", all.len(), path.display());
    Ok(())
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn seed_build(cfg: &Config) -> Outcome {
    let reports_path = cfg.reports_path();
    let dirs = cfg.testsuite_dirs();
    for d in &dirs {
        Config::require("test-suite directory", d)?;
    }
    if dirs.is_empty() {
        Config::require("report corpus", &reports_path)?;
    }
    let reports = if reports_path.exists() {
        corpus::load_corpus(&reports_path).with_context(|| format!("seed build: {}", reports_path.display()))?
    } else {
        Vec::new()
    };
    let seeds = seeds::collect(&reports, &dirs, &cfg.lang_filter());
    let out = cfg.collected_seeds_path();
    ensure_parent(&out)?;
    seeds::store_seeds(&out, &seeds).with_context(|| format!("seed build: writing {}", out.display()))?;
    let from_reports = seeds.iter().filter(|s| s.origin == SeedOrigin::Report).count();
    println!(
        "seed build: {} seeds ({} from reports, {} from test suites) -> {}",
        seeds.len(),
        from_reports,
        seeds.len() - from_reports,
        out.display()
    );
    Ok(())
}

fn seed_enhance(cfg: &Config, target: Option<usize>, rng_seed: Option<u64>) -> Outcome {
    let input = cfg.collected_seeds_path();
    Config::require("collected seed store", &input)?;
    let seeds = seeds::load_seeds(&input).with_context(|| format!("seed enhance: {}", input.display()))?;
    let target = target.or(cfg.seeds.target_count).unwrap_or(seeds.len());
    let tokenizer = LexicalTokenizer::for_language(cfg.tokenizer_name());
    let out = seeds::enhance(&seeds, target, &tokenizer, rng_seed.unwrap_or(cfg.seeds.rng_seed))
        .map_err(|e| anyhow!("seed enhance: {e}"))?;
    let path = cfg.enhanced_seeds_path();
    ensure_parent(&path)?;
    seeds::store_seeds(&path, &out).with_context(|| format!("seed enhance: writing {}", path.display()))?;
    println!("seed enhance: {} -> {} seeds -> {}", seeds.len(), out.len(), path.display());
    Ok(())
}

fn seed_filter(cfg: &Config, compiler: Option<String>, workers: Option<usize>) -> Outcome {
    let input = [cfg.enhanced_seeds_path(), cfg.collected_seeds_path()]
        .into_iter()
        .find(|p| p.exists())
        .ok_or_else(|| Failure::Config(format!("seed filter: neither {} nor {} exists", cfg.enhanced_seeds_path().display(), cfg.collected_seeds_path().display())))?;
    let name = compiler.or_else(|| cfg.seeds.filter_compiler.clone());
    let target = cfg.compiler(name.as_deref())?;
    let seeds = seeds::load_seeds(&input).with_context(|| format!("seed filter: {}", input.display()))?;
    let kept = seeds::compile_filter(&seeds, &target, &cfg.work_dir().join("seed-filter"), workers.unwrap_or(cfg.seeds.workers))
        .map_err(|e| anyhow!("seed filter: compiler {}: {e}", target.name))?;
    let out = cfg.seeds_path();
    ensure_parent(&out)?;
    seeds::store_seeds(&out, &kept).with_context(|| format!("seed filter: writing {}", out.display()))?;
    println!("seed filter: kept {} of {} seeds ({}) -> {}", kept.len(), seeds.len(), target.name, out.display());
    Ok(())
}

fn probe_seeds(cfg: &Config) -> Result<Vec<SeedProgram>, Failure> {
    if let Some(p) = cfg.probe_seeds_path() {
        Config::require("probe seed store", &p)?;
        return Ok(seeds::load_seeds(&p).with_context(|| format!("forge: probe seeds {}", p.display()))?);
    }
    let p = cfg.collected_seeds_path();
    Config::require("collected seed store (probe seeds)", &p)?;
    let probes: Vec<SeedProgram> = seeds::load_seeds(&p)
        .with_context(|| format!("forge: probe seeds {}", p.display()))?
        .into_iter()
        .filter(|s| s.origin == SeedOrigin::Report)
        .collect();
    Ok(probes)
}

fn backend(cfg: &Config, kind: BackendKind, transcript: Option<PathBuf>, record: Option<PathBuf>) -> Result<Arc<dyn LlmBackend>, Failure> {
    let transcript = transcript.or_else(|| cfg.llm.transcript.as_ref().map(|p| cfg.resolve(p)));
    let need_transcript = |what: &str| -> Result<PathBuf, Failure> {
        let p = transcript
            .clone()
            .ok_or_else(|| Failure::Config(format!("the {what} backend needs --transcript or llm.transcript")))?;
        Config::require("transcript", &p)?;
        Ok(p)
    };
    let inner: Arc<dyn LlmBackend> = match kind {
        BackendKind::Live => {
            let key = std::env::var(&cfg.llm.api_key_env).ok();
            let transport = Arc::new(UreqTransport::new(Duration::from_secs_f64(cfg.llm.timeout_secs)));
            Arc::new(LiveBackend::new(transport, cfg.llm.endpoint.clone(), key))
        }
        BackendKind::Replay => {
            let p = need_transcript("replay")?;
            Arc::new(llm::open_replay(&p).map_err(|e| anyhow!("forge: {e}"))?)
        }
        BackendKind::Scripted => {
            let p = need_transcript("scripted")?;
            Arc::new(ScriptedBackend::from_file(&p).map_err(|e| anyhow!("forge: {e}"))?)
        }
    };
    let record = record.or_else(|| cfg.llm.record.as_ref().map(|p| cfg.resolve(p)));
    Ok(match record {
        Some(p) => Arc::new(llm::record_transcript(inner, &p).map_err(|e| anyhow!("forge: {e}"))?),
        None => inner,
    })
}

fn forge(cfg: &Config, args: ForgeArgs) -> Outcome {
    let reports_path = cfg.reports_path();
    Config::require("report corpus", &reports_path)?;
    let templates_dir = cfg.templates_dir()?;
    Config::require("template directory", &templates_dir)?;
    let lang_template = cfg.lang_template_path()?;
    Config::require("language template", &lang_template)?;
    let examples = cfg.examples_dir();
    if let Some(e) = &examples {
        Config::require("mutator example directory", e)?;
    }
    let toolchain = cfg.toolchain()?;
    let reference = cfg.compiler(cfg.forge.reference_compiler.as_deref())?;
    let rules = cfg.failure_rules()?;
    let marker = cfg.entry_marker()?;
    let probes = probe_seeds(cfg)?;
    if probes.is_empty() {
        return Err(Failure::Config("forge: no probe seeds available".into()));
    }
    let templates = AgentTemplates::load(&templates_dir).map_err(|e| Failure::Config(e.to_string()))?;
    let profile = LanguageProfile::load(&cfg.language, &cfg.display_name(), &marker, &lang_template, examples.as_deref())
        .map_err(|e| Failure::Config(e.to_string()))?;

    let all_reports = corpus::load_corpus(&reports_path).with_context(|| format!("forge: {}", reports_path.display()))?;
    let end = args.limit.map_or(all_reports.len(), |l| (args.from + l).min(all_reports.len()));
    let reports = all_reports.get(args.from.min(all_reports.len())..end).unwrap_or(&[]);

    let kind = args.backend.unwrap_or(cfg.llm.backend);
    let backend = backend(cfg, kind, args.transcript, args.record)?;
    let ledger = Arc::new(UsageLedger::new(cfg.llm.rates));
    let gateway = Gateway::new(backend, ledger.clone());
    let mut forge_cfg = cfg.forge_config();
    if let Some(n) = args.max_attempts {
        forge_cfg.max_refinements = n;
    }
    let forge = Forge {
        gateway: &gateway,
        templates: &templates,
        profile: &profile,
        toolchain: &toolchain,
        probe_seeds: &probes,
        reference: &reference,
        rules: &rules,
        config: &forge_cfg,
    };
    let results = forge.forge_all(reports, args.workers.unwrap_or(cfg.forge.workers));

    let mut specs = Vec::new();
    let mut outcomes = Vec::new();
    let mut errors = Vec::new();
    for (report, r) in reports.iter().zip(results) {
        match r {
            Ok(rec) => {
                specs.extend(rec.spec);
                outcomes.push(rec.outcome);
            }
            Err(e) => errors.push(format!("forge: report {}: {e}", report.report_id)),
        }
    }
    for (path, what) in [(cfg.specs_path(), "specs"), (cfg.mutators_path(), "mutators"), (cfg.usage_path(), "usage")] {
        ensure_parent(&path)?;
        let written = match what {
            "specs" => factory::store_specs(&path, &specs),
            "mutators" => factory::store_outcomes(&path, &outcomes),
            _ => store::write_records(&path, &ledger.snapshot().usage_records()),
        };
        written.with_context(|| format!("forge: writing {}", path.display()))?;
    }

    let valid = outcomes.iter().filter(|o| o.as_valid().is_some()).count();
    println!("forge: {} reports, {} valid, {} discarded, {} errors", reports.len(), valid, outcomes.len() - valid, errors.len());
    for o in &outcomes {
        match o {
            ForgeOutcome::Valid(a) => println!("  {} valid (attempts {})", a.mutator_id, a.attempts),
            ForgeOutcome::Discard(d) => println!(
                "  {} discarded: {} [{}] after {} refinements",
                d.mutator_id,
                reason_str(d.reason),
                d.label,
                d.history.len()
            ),
        }
    }
    let total = ledger.total();
    println!(
        "tokens: {} in / {} out, cost {:.4}",
        total.input_tokens,
        total.output_tokens,
        ledger.cost()
    );
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::Op(anyhow!(errors.join("\n"))))
    }
}

fn reason_str(r: DiscardReason) -> &'static str {
    match r {
        DiscardReason::InventionParse => "invention unparseable",
        DiscardReason::EmptySynthesis => "empty synthesis",
        DiscardReason::NoProgress => "no progress",
        DiscardReason::AttemptsExhausted => "refinements exhausted",
        DiscardReason::Ineffective => "ineffective",
    }
}

fn load_mutators(cfg: &Config) -> Result<Vec<MutatorArtifact>, Failure> {
    let mut mutators = Vec::new();
    let store_path = cfg.mutators_path();
    if store_path.exists() {
        let outcomes = factory::load_outcomes(&store_path).with_context(|| format!("fuzz: {}", store_path.display()))?;
        mutators.extend(factory::valid_artifacts(&outcomes));
    }
    for exe in cfg.external_mutators() {
        Config::require("external mutator", &exe)?;
        let id = exe
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| exe.display().to_string());
        mutators.push(MutatorArtifact::from_binary(id, exe));
    }
    Ok(mutators)
}

fn fuzz_cmd(cfg: &Config, args: FuzzArgs) -> Outcome {
    let seeds_path = cfg.seeds_path();
    Config::require("seed store", &seeds_path)?;
    let mutators = load_mutators(cfg)?;
    if mutators.is_empty() {
        return Err(Failure::Config("fuzz: no valid mutators (forge first or list campaign.external_mutators)".into()));
    }
    let compilers = cfg.compiler_targets();
    if compilers.is_empty() {
        return Err(Failure::Config("fuzz: no [[compilers]] configured".into()));
    }
    let seeds = seeds::load_seeds(&seeds_path).with_context(|| format!("fuzz: {}", seeds_path.display()))?;
    let mut cc = cfg.campaign_config();
    if let Some(b) = args.budget {
        cc.time_budget = Duration::from_secs_f64(b.max(0.0));
    }
    if let Some(m) = args.mode {
        cc.composition_mode = m;
    }
    if let Some(s) = args.rng_seed {
        cc.rng_seed = s;
    }
    if let Some(w) = args.workers {
        cc.workers = w;
    }
    if args.max_rounds.is_some() {
        cc.max_rounds = args.max_rounds;
    }
    let dir = cfg.findings_dir();
    let mut sink = FindingStore::open(&dir, &compilers[0].source_ext).with_context(|| format!("fuzz: findings store {}", dir.display()))?;
    let summary = fuzz::run_campaign(&seeds, &mutators, &compilers, &cc, &mut sink).map_err(|e| anyhow!("fuzz: {e}"))?;
    let summary_path = dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .with_context(|| format!("fuzz: writing {}", summary_path.display()))?;
    println!(
        "fuzz: {} rounds, {} units, {} programs compiled, {} unchanged, {} mutator errors in {:.1}s",
        summary.rounds, summary.units_dispatched, summary.programs_generated, summary.unchanged_skipped, summary.mutator_errors, summary.elapsed_secs
    );
    println!(
        "findings: {} crash, {} hang, {} inconsistency -> {}",
        summary.findings_of(FindingKind::Crash),
        summary.findings_of(FindingKind::Hang),
        summary.findings_of(FindingKind::Inconsistency),
        dir.display()
    );
    Ok(())
}

fn triage_cmd(cfg: &Config, findings: Option<PathBuf>, out: Option<PathBuf>) -> Outcome {
    let src = findings.unwrap_or_else(|| cfg.findings_dir());
    Config::require("findings store", &src)?;
    let compilers = cfg.compiler_targets();
    let rules = TriageRules::new(&compilers).map_err(|e| Failure::Config(e.to_string()))?;
    let all = fuzz::load_findings(&src).with_context(|| format!("triage: {}", src.display()))?;
    let buckets = triage::bucket(&all, &rules);
    let out = out.unwrap_or_else(|| cfg.triage_dir());
    std::fs::create_dir_all(&out).with_context(|| format!("triage: creating {}", out.display()))?;
    let mut index = String::from("# Buckets\n\n| signature | kind | findings | bundle |\n|---|---|---|---|\n");
    for (sig, members) in &buckets {
        let dir = triage::render_report(sig, members, &compilers, &out)
            .map_err(|e| anyhow!("triage: bucket {}: {e}", sig.digest()))?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        index.push_str(&format!("| {sig} | {} | {} | {name} |\n", sig.kind.as_str(), members.len()));
    }
    std::fs::write(out.join("index.md"), index).with_context(|| format!("triage: writing index in {}", out.display()))?;
    println!("triage: {} findings in {} buckets -> {}", all.len(), buckets.len(), out.display());
    Ok(())
}

#[derive(serde::Serialize, Default)]
struct Stats {
    mutators: BTreeMap<String, u64>,
    failure_labels: BTreeMap<String, u64>,
    input_tokens: u64,
    output_tokens: u64,
    cost: f64,
    findings: BTreeMap<String, u64>,
    unique_crashes: u64,
    buckets: u64,
}

fn status_str(s: ArtifactStatus) -> &'static str {
    match s {
        ArtifactStatus::Pending => "pending",
        ArtifactStatus::Valid => "valid",
        ArtifactStatus::Ineffective => "ineffective",
        ArtifactStatus::BuildFailed => "build_failed",
        ArtifactStatus::ValidationFailed => "validation_failed",
    }
}

fn stats(cfg: &Config, json: bool) -> Outcome {
    let mut st = Stats::default();
    let mutators = cfg.mutators_path();
    if mutators.exists() {
        for o in factory::load_outcomes(&mutators).with_context(|| format!("stats: {}", mutators.display()))? {
            match o {
                ForgeOutcome::Valid(a) => *st.mutators.entry(status_str(a.status).into()).or_default() += 1,
                ForgeOutcome::Discard(d) => {
                    *st.mutators.entry(status_str(d.status).into()).or_default() += 1;
                    *st.failure_labels.entry(d.label.to_string()).or_default() += 1;
                }
            }
        }
    }
    let usage = cfg.usage_path();
    if usage.exists() {
        let records: Vec<UsageRecord> = store::read_records(&usage).with_context(|| format!("stats: {}", usage.display()))?;
        for r in records {
            st.input_tokens += r.usage.input_tokens;
            st.output_tokens += r.usage.output_tokens;
        }
        st.cost = llm::cost(llm::Usage::new(st.input_tokens, st.output_tokens), cfg.llm.rates);
    }
    let findings_dir = cfg.findings_dir();
    if findings_dir.join(fuzz::FINDINGS_FILE).exists() {
        let all = fuzz::load_findings(&findings_dir).with_context(|| format!("stats: {}", findings_dir.display()))?;
        for f in &all {
            *st.findings.entry(f.kind.as_str().into()).or_default() += 1;
        }
        let rules = TriageRules::new(&cfg.compiler_targets()).map_err(|e| Failure::Config(e.to_string()))?;
        let buckets = triage::bucket(&all, &rules);
        st.buckets = buckets.len() as u64;
        st.unique_crashes = buckets.keys().filter(|s| s.kind == FindingKind::Crash).count() as u64;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&st).expect("stats serialize"));
        return Ok(());
    }
    println!("mutators:");
    for (k, v) in &st.mutators {
        println!("  {k}: {v}");
    }
    println!("failure labels:");
    for (k, v) in &st.failure_labels {
        println!("  {k}: {v}");
    }
    println!("tokens: {} in / {} out, cost {:.4}", st.input_tokens, st.output_tokens, st.cost);
    println!("findings:");
    for (k, v) in &st.findings {
        println!("  {k}: {v}");
    }
    println!("unique crashes: {} ({} buckets total)", st.unique_crashes, st.buckets);
    Ok(())
}
