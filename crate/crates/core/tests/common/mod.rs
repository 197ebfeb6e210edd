#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use mutforge::factory::{AgentTemplates, FailureRules, Forge, ForgeConfig, LanguageProfile};
use mutforge::fuzz::CompilerFamily;
use mutforge::llm::{Gateway, LlmResponse, Rates, ScriptedBackend, Usage, UsageLedger};
use mutforge::runtime::Toolchain;
use mutforge::seeds::SeedOrigin;
use mutforge::{CompilerTarget, MutatorArtifact, ProgramText, SeedProgram};

pub const ENTRY: &str = "# mutator-entry";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

pub fn toy(rel: &str) -> PathBuf {
    fixtures().join("toy").join(rel)
}

pub fn compiler(name: &str) -> CompilerTarget {
    let script = toy(&format!("compilers/{name}.sh"));
    let mut c = CompilerTarget::new(
        name,
        vec!["sh".into(), script.to_string_lossy().into_owned(), "{src}".into(), "{out}".into()],
    );
    c.source_ext = "toy".into();
    c.compile_timeout_secs = 5.0;
    c.run_timeout_secs = 5.0;
    if name == "cc-spin" {
        c.compile_timeout_secs = 1.0;
    }
    if name == "cc-boom" {
        c.family = CompilerFamily::Rustc;
    }
    c
}

pub fn trio() -> Vec<CompilerTarget> {
    ["cc-ok", "cc-boom", "cc-spin"].iter().map(|n| compiler(n)).collect()
}

pub fn mutator(name: &str) -> MutatorArtifact {
    MutatorArtifact::from_binary(name, toy(&format!("mutators/{name}.sh")))
}

pub fn toy_seeds() -> Vec<SeedProgram> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(toy("seeds"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let mut s = SeedProgram::from_text(ProgramText::new(std::fs::read_to_string(p).unwrap()), SeedOrigin::Testsuite);
            s.seed_id = p.file_stem().unwrap().to_string_lossy().into_owned();
            s
        })
        .collect()
}

/// Shell mutator sources in the toy language of the end-to-end fixture.
pub fn script(body: &str) -> String {
    format!("#!/bin/sh\n{ENTRY}\ninput=$(cat; printf x)\ninput=${{input%x}}\n{body}")
}

pub fn good_flip() -> String {
    script("case \"$input\" in\n    *+*) printf '%s' \"$input\" | sed 's/+/-/' ;;\n    *) exit 10 ;;\nesac\n")
}

pub fn broken(k: usize) -> String {
    script(&format!("# revision {k}\nprintf '%s' \"$input\" | frob BAD\n"))
}

pub fn fenced(code: &str) -> String {
    format!("```sh\n{code}```\n")
}

pub const SPEC_REPLY: &str = "Name: Flip Additive\nTarget: binary additions\nDescription: swap + for -\nConstraints: binary operators only\nBefore:\nlet x = 1 + 2;\nAfter:\nlet x = 1 - 2;\n";

/// Everything a forge needs, backed by a scripted agent.
pub struct ToyForge {
    pub dir: tempfile::TempDir,
    pub backend: Arc<ScriptedBackend>,
    pub gateway: Gateway,
    pub templates: AgentTemplates,
    pub profile: LanguageProfile,
    pub toolchain: Toolchain,
    pub probe_seeds: Vec<SeedProgram>,
    pub reference: CompilerTarget,
    pub rules: FailureRules,
    pub config: ForgeConfig,
}

impl ToyForge {
    pub fn new(responses: Vec<LlmResponse>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let e2e = fixtures().join("e2e");
        let backend = Arc::new(ScriptedBackend::new(responses));
        let ledger = Arc::new(UsageLedger::new(Rates {
            input_per_million: 2.5,
            output_per_million: 10.0,
        }));
        let gateway = Gateway::new(backend.clone(), ledger);
        let templates = AgentTemplates::load(&e2e.join("templates")).unwrap();
        let profile = LanguageProfile::load(
            "toy",
            "Toy Shell",
            ENTRY,
            &e2e.join("lang_template.sh"),
            Some(&e2e.join("examples")),
        )
        .unwrap();
        let toolchain = Toolchain {
            language: "toy".into(),
            command: vec![
                "sh".into(),
                toy("toolchain.sh").to_string_lossy().into_owned(),
                "{src_dir}".into(),
                "{out_bin}".into(),
            ],
            skeleton_dir: None,
            source_file: "mutator.src".into(),
            timeout_secs: 30.0,
            cache_dir: dir.path().join("cache"),
        };
        let config = ForgeConfig::new("test-model", dir.path().join("work"));
        Self {
            backend,
            gateway,
            templates,
            profile,
            toolchain,
            probe_seeds: toy_seeds(),
            reference: compiler("cc-ok"),
            rules: FailureRules::default(),
            config,
            dir,
        }
    }

    /// Responses: one spec, one synthesis, then the given refinements.
    pub fn scripted(synthesis: &str, refinements: &[String]) -> Self {
        let mut r = vec![
            LlmResponse::new(SPEC_REPLY, Usage::new(1000, 100)),
            LlmResponse::new(fenced(synthesis), Usage::new(2000, 200)),
        ];
        r.extend(refinements.iter().map(|c| LlmResponse::new(fenced(c), Usage::new(1500, 150))));
        Self::new(r)
    }

    pub fn forge(&self) -> Forge<'_> {
        Forge {
            gateway: &self.gateway,
            templates: &self.templates,
            profile: &self.profile,
            toolchain: &self.toolchain,
            probe_seeds: &self.probe_seeds,
            reference: &self.reference,
            rules: &self.rules,
            config: &self.config,
        }
    }
}

pub fn toy_report(id: &str) -> mutforge::BugReport {
    let mut r = mutforge::BugReport::from_parts(
        id,
        "toy/compiler",
        "ICE on additive chains",
        vec!["I-ICE".into()],
        "Folding `1 + 2 + 3` panics.",
        mutforge::ReportStatus::Fixed,
    );
    r.snippets = vec![ProgramText::new("let x = 1 + 2 + 3;\n")];
    r
}
