pub mod config;
pub mod corpus;
pub mod factory;
pub mod fuzz;
pub mod http;
pub mod llm;
pub mod process;
pub mod runtime;
pub mod seeds;
pub mod store;
pub mod triage;

pub use corpus::{BugReport, ProgramText, ReportStatus};
pub use factory::{FailureLabel, ForgeOutcome, MutatorSpec};
pub use fuzz::{CompilerTarget, Finding, FindingKind};
pub use llm::{LlmRequest, LlmResponse, Usage, UsageLedger};
pub use runtime::{MutatorArtifact, MutationOutcome};
pub use seeds::SeedProgram;
pub use triage::{CrashSignature, StackFrame};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `data`.
pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}
