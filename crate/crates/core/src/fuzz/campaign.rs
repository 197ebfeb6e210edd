//! The campaign loop: pick mutators, mutate seeds, compile everywhere, run
//! survivors, record crash/hang/inconsistency findings until time runs out.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::findings::{Finding, FindingKind, FindingSink};
use super::oracle::{
    check_inconsistency, compile_and_classify, execute, CompileOutcome, CompilerTarget,
    OracleError,
};
use crate::corpus::ProgramText;
use crate::runtime::{self, ArtifactStatus, MutatorArtifact, ProtocolClass};
use crate::seeds::SeedProgram;
use crate::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    /// Apply a random sequence of mutators, each feeding the next.
    #[default]
    Composed,
    /// Apply each selected mutator to the seed on its own.
    Independent,
}

impl std::str::FromStr for CompositionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "composed" => Ok(Self::Composed),
            "independent" => Ok(Self::Independent),
            other => Err(format!("unknown composition mode `{other}`")),
        }
    }
}

/// How many mutators round `r` (1-based) selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSchedule {
    /// Round r uses r mutators.
    #[default]
    Linear,
    Fixed(usize),
    /// Round r uses min(r, n) mutators.
    Capped(usize),
}

impl DepthSchedule {
    pub fn depth(self, round: u64) -> usize {
        let r = usize::try_from(round).unwrap_or(usize::MAX).max(1);
        match self {
            DepthSchedule::Linear => r,
            DepthSchedule::Fixed(n) => n,
            DepthSchedule::Capped(n) => r.min(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub time_budget: Duration,
    pub depth_schedule: DepthSchedule,
    pub composition_mode: CompositionMode,
    pub rng_seed: u64,
    pub workers: usize,
    /// Stop after this many full passes over the seeds even if time remains.
    pub max_rounds: Option<u64>,
    /// Keep the dispatched (seed, chain) sequence in the summary.
    pub record_selections: bool,
    pub apply_timeout: Duration,
    pub work_dir: PathBuf,
}

impl CampaignConfig {
    pub fn new(time_budget: Duration, work_dir: impl Into<PathBuf>) -> Self {
        Self {
            time_budget,
            depth_schedule: DepthSchedule::Linear,
            composition_mode: CompositionMode::Composed,
            rng_seed: 0,
            workers: 1,
            max_rounds: None,
            record_selections: false,
            apply_timeout: runtime::DEFAULT_APPLY_TIMEOUT,
            work_dir: work_dir.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("campaign needs at least one {0}")]
    Empty(&'static str),
    #[error("time budget must be positive")]
    BadBudget,
    #[error("depth schedule yields zero mutators")]
    BadSchedule,
    #[error("duplicate compiler name `{0}`")]
    DuplicateCompiler(String),
    #[error("mutator `{0}` is not a valid built artifact")]
    UnusableMutator(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("findings store: {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub seed_id: String,
    pub mutator_chain: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub rounds: u64,
    pub units_dispatched: u64,
    /// Mutated programs that were compiled.
    pub programs_generated: u64,
    /// Units whose mutators left the seed byte-identical.
    pub unchanged_skipped: u64,
    pub mutator_errors: u64,
    /// compiler -> outcome label -> count
    pub compile_outcomes: BTreeMap<String, BTreeMap<String, u64>>,
    pub findings: BTreeMap<FindingKind, u64>,
    pub elapsed_secs: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selections: Vec<Selection>,
}

impl CampaignSummary {
    pub fn findings_of(&self, kind: FindingKind) -> u64 {
        self.findings.get(&kind).copied().unwrap_or(0)
    }

    pub fn total_findings(&self) -> u64 {
        self.findings.values().sum()
    }
}

struct Unit {
    seed: usize,
    chain: Vec<usize>,
    mut_seed: u64,
}

#[derive(Default)]
struct UnitReport {
    evaluated: bool,
    mutator_errors: u64,
    outcomes: Vec<(String, &'static str)>,
    findings: Vec<Finding>,
}

struct Shared<'a> {
    seeds: &'a [SeedProgram],
    mutators: &'a [MutatorArtifact],
    compilers: &'a [CompilerTarget],
    config: &'a CampaignConfig,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn check_inputs(
    seeds: &[SeedProgram],
    mutators: &[MutatorArtifact],
    compilers: &[CompilerTarget],
    config: &CampaignConfig,
) -> Result<(), CampaignError> {
    if seeds.is_empty() {
        return Err(CampaignError::Empty("seed"));
    }
    if mutators.is_empty() {
        return Err(CampaignError::Empty("mutator"));
    }
    if compilers.is_empty() {
        return Err(CampaignError::Empty("compiler"));
    }
    if config.time_budget.is_zero() {
        return Err(CampaignError::BadBudget);
    }
    if config.depth_schedule.depth(1) == 0 {
        return Err(CampaignError::BadSchedule);
    }
    let mut names = HashSet::new();
    for c in compilers {
        c.validate()?;
        if !names.insert(c.name.as_str()) {
            return Err(CampaignError::DuplicateCompiler(c.name.clone()));
        }
    }
    for m in mutators {
        let usable = m.status == ArtifactStatus::Valid
            && m.binary_ref.as_ref().is_some_and(|p| p.is_file());
        if !usable {
            return Err(CampaignError::UnusableMutator(m.mutator_id.clone()));
        }
    }
    Ok(())
}

/// Evaluates one unit: mutate, compile on every compiler, run ok builds,
/// compare. Only configuration problems surface as errors.
fn evaluate(shared: &Shared, unit: &Unit, work_dir: &Path) -> Result<UnitReport, OracleError> {
    let seed = &shared.seeds[unit.seed];
    let mut report = UnitReport::default();
    let mut program: ProgramText = seed.text.clone();
    let mut applied = Vec::new();
    for &mi in &unit.chain {
        let m = &shared.mutators[mi];
        let base = match shared.config.composition_mode {
            CompositionMode::Composed => &program,
            CompositionMode::Independent => &seed.text,
        };
        match runtime::apply(m, base, Some(unit.mut_seed), shared.config.apply_timeout) {
            Ok(outcome) => match outcome.protocol_class() {
                ProtocolClass::Mutated => {
                    program = outcome.output.expect("mutated outcome has output");
                    applied.push(m.mutator_id.clone());
                }
                ProtocolClass::Error => {
                    log::debug!("mutator {} failed on {}: {}", m.mutator_id, seed.seed_id, outcome.stderr);
                    report.mutator_errors += 1;
                }
                ProtocolClass::NoChange | ProtocolClass::NoMatch => {}
            },
            Err(e) => {
                log::warn!("mutator {} on {}: {e}", m.mutator_id, seed.seed_id);
                report.mutator_errors += 1;
            }
        }
    }
    if applied.is_empty() {
        return Ok(report);
    }
    report.evaluated = true;

    let finding = |kind, compiler: Option<&str>, stderr: String| Finding {
        finding_id: String::new(),
        kind,
        program: program.clone(),
        seed_id: seed.seed_id.clone(),
        mutator_chain: applied.clone(),
        compiler: compiler.map(str::to_string),
        results: BTreeMap::new(),
        stderr,
        timestamp_ms: 0,
        seq: 0,
    };
    let mut results = BTreeMap::new();
    for compiler in shared.compilers {
        let dir = work_dir.join(&compiler.name);
        let outcome = compile_and_classify(compiler, &program, &dir)?;
        report.outcomes.push((compiler.name.clone(), outcome.label()));
        match outcome {
            CompileOutcome::Crash { stderr, .. } => {
                report.findings.push(finding(FindingKind::Crash, Some(&compiler.name), stderr))
            }
            CompileOutcome::Hang { stderr } => {
                report.findings.push(finding(FindingKind::Hang, Some(&compiler.name), stderr))
            }
            CompileOutcome::Ok { exe } => match execute(compiler, &exe) {
                Ok(r) => {
                    results.insert(compiler.name.clone(), r);
                }
                Err(e) => log::warn!("running output of {}: {e}", compiler.name),
            },
            CompileOutcome::Reject { .. } => {}
        }
    }
    if check_inconsistency(&results) {
        let mut f = finding(FindingKind::Inconsistency, None, String::new());
        f.results = results.iter().map(|(k, v)| (k.clone(), v.summary())).collect();
        report.findings.push(f);
    }
    Ok(report)
}

/// Draws units in a fixed order from the campaign RNG.
struct Dispatcher<'a> {
    shared: &'a Shared<'a>,
    rng: ChaCha8Rng,
    round: u64,
    seed_pos: usize,
    pending: Vec<Unit>,
    round_selection: Option<(u64, Vec<usize>)>,
}

impl<'a> Dispatcher<'a> {
    fn new(shared: &'a Shared<'a>) -> Self {
        Self {
            shared,
            rng: ChaCha8Rng::seed_from_u64(shared.config.rng_seed),
            round: 0,
            seed_pos: 0,
            pending: Vec::new(),
            round_selection: None,
        }
    }

    fn depth(&self) -> usize {
        self.shared
            .config
            .depth_schedule
            .depth(self.round)
            .clamp(1, self.shared.mutators.len())
    }

    fn draw(&mut self, depth: usize) -> Vec<usize> {
        index::sample(&mut self.rng, self.shared.mutators.len(), depth).into_vec()
    }

    /// Next unit, or `None` once `max_rounds` is exhausted.
    fn next(&mut self) -> Option<Unit> {
        loop {
            if let Some(u) = self.pending.pop() {
                return Some(u);
            }
            if self.round == 0 || self.seed_pos == self.shared.seeds.len() {
                if self.shared.config.max_rounds.is_some_and(|m| self.round >= m) {
                    return None;
                }
                self.round += 1;
                self.seed_pos = 0;
            }
            let seed = self.seed_pos;
            self.seed_pos += 1;
            let depth = self.depth();
            match self.shared.config.composition_mode {
                CompositionMode::Composed => {
                    let chain = self.draw(depth);
                    let mut_seed = self.rng.random();
                    return Some(Unit {
                        seed,
                        chain,
                        mut_seed,
                    });
                }
                CompositionMode::Independent => {
                    // One draw per round, each mutator applied on its own.
                    let stale = self.round_selection.as_ref().is_none_or(|(r, _)| *r != self.round);
                    if stale {
                        let sel = self.draw(depth);
                        self.round_selection = Some((self.round, sel));
                    }
                    let sel = self.round_selection.as_ref().expect("drawn").1.clone();
                    let mut units: Vec<Unit> = sel
                        .into_iter()
                        .map(|m| Unit {
                            seed,
                            chain: vec![m],
                            mut_seed: self.rng.random(),
                        })
                        .collect();
                    units.reverse();
                    self.pending = units;
                }
            }
        }
    }
}

struct Collector<'s> {
    sink: &'s mut dyn FindingSink,
    summary: CampaignSummary,
    seq: u64,
    error: Option<CampaignError>,
}

impl Collector<'_> {
    fn absorb(&mut self, report: UnitReport) {
        self.summary.mutator_errors += report.mutator_errors;
        if !report.evaluated {
            self.summary.unchanged_skipped += 1;
            return;
        }
        self.summary.programs_generated += 1;
        for (compiler, label) in report.outcomes {
            *self
                .summary
                .compile_outcomes
                .entry(compiler)
                .or_default()
                .entry(label.to_string())
                .or_default() += 1;
        }
        for mut f in report.findings {
            f.seq = self.seq;
            f.finding_id = format!("f{:06}", self.seq);
            f.timestamp_ms = now_ms();
            let kind = f.kind;
            if let Err(e) = self.sink.record(f) {
                self.error.get_or_insert(CampaignError::Store(e));
                return;
            }
            self.seq += 1;
            *self.summary.findings.entry(kind).or_default() += 1;
        }
    }
}

/// Runs the fuzzing loop until the time budget (or `max_rounds`) is spent.
///
/// The budget is checked before each unit is drawn, so the campaign overruns
/// by at most one evaluation per worker. Selection happens under a single
/// lock in a fixed order, so the worker count changes only completion order.
pub fn run_campaign(
    seeds: &[SeedProgram],
    mutators: &[MutatorArtifact],
    compilers: &[CompilerTarget],
    config: &CampaignConfig,
    sink: &mut dyn FindingSink,
) -> Result<CampaignSummary, CampaignError> {
    check_inputs(seeds, mutators, compilers, config)?;
    let shared = Shared {
        seeds,
        mutators,
        compilers,
        config,
    };
    let start = Instant::now();
    let seq = sink.next_seq();
    let dispatcher = Mutex::new(Dispatcher::new(&shared));
    let selections = Mutex::new((0u64, Vec::new()));
    let collector = Mutex::new(Collector {
        sink,
        summary: CampaignSummary::default(),
        seq,
        error: None,
    });
    let stop = AtomicBool::new(false);

    let worker = |w: usize| {
        let work_dir = config.work_dir.join(format!("w{w}"));
        loop {
            if stop.load(Ordering::SeqCst) || start.elapsed() >= config.time_budget {
                break;
            }
            let unit = {
                let mut d = dispatcher.lock().expect("dispatcher lock");
                let Some(unit) = d.next() else { break };
                let mut sel = selections.lock().expect("selection lock");
                sel.0 += 1;
                if config.record_selections {
                    sel.1.push(Selection {
                        seed_id: seeds[unit.seed].seed_id.clone(),
                        mutator_chain: unit
                            .chain
                            .iter()
                            .map(|&m| mutators[m].mutator_id.clone())
                            .collect(),
                    });
                }
                unit
            };
            let result = evaluate(&shared, &unit, &work_dir);
            let mut c = collector.lock().expect("collector lock");
            match result {
                Ok(report) => c.absorb(report),
                Err(e) => {
                    c.error.get_or_insert(CampaignError::Oracle(e));
                }
            }
            if c.error.is_some() {
                stop.store(true, Ordering::SeqCst);
            }
        }
    };

    let workers = config.workers.max(1);
    if workers == 1 {
        worker(0);
    } else {
        thread::scope(|s| {
            for w in 0..workers {
                let worker = &worker;
                s.spawn(move || worker(w));
            }
        });
    }

    let collector = collector.into_inner().expect("collector lock");
    if let Some(e) = collector.error {
        return Err(e);
    }
    let mut summary = collector.summary;
    let (dispatched, selections) = selections.into_inner().expect("selection lock");
    summary.units_dispatched = dispatched;
    summary.selections = selections;
    summary.rounds = dispatcher.into_inner().expect("dispatcher lock").round;
    summary.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_schedules() {
        assert_eq!(DepthSchedule::Linear.depth(3), 3);
        assert_eq!(DepthSchedule::Fixed(2).depth(7), 2);
        assert_eq!(DepthSchedule::Capped(2).depth(1), 1);
        assert_eq!(DepthSchedule::Capped(2).depth(5), 2);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("independent".parse::<CompositionMode>().unwrap(), CompositionMode::Independent);
        assert!("both".parse::<CompositionMode>().is_err());
    }
}
