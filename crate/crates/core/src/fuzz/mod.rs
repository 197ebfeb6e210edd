//! Mutation-based fuzzing: oracles, the campaign loop, and finding storage.

pub mod campaign;
pub mod findings;
pub mod oracle;

pub use campaign::{
    run_campaign, CampaignConfig, CampaignError, CampaignSummary, CompositionMode, DepthSchedule,
    Selection,
};
pub use findings::{
    load_findings, Finding, FindingKind, FindingSink, FindingStore, MemorySink, FINDINGS_FILE, PROGRAMS_DIR,
};
pub use oracle::{
    check_inconsistency, compile_and_classify, execute, CompileOutcome, CompilerFamily,
    CompilerTarget, ExecResult, ExecSummary, ExitStatusClass, OracleError,
};
