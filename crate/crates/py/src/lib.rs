//! Python bindings. Record types travel as their JSON store form, so
//! `from_json(x.to_json())` is the identity.

use std::path::PathBuf;
use std::time::Duration;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use mutforge::factory::{self, FailureEvidence, FailureRules};
use mutforge::fuzz::{CompilerFamily, CompilerTarget};
use mutforge::llm::{self, Agent, Rates};
use mutforge::seeds::{self, LexicalTokenizer, SeedOrigin, Tokenizer};
use mutforge::store::Keyed;
use mutforge::triage::TriageRules;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(value_err)
}

fn from_json<T: DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(value_err)
}

/// snake_case name of a serde unit enum value.
fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn parse_tag<T: DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(value_err)
}

macro_rules! record_class {
    ($py:ident, $name:literal, $inner:ty, { $($extra:tt)* }) => {
        #[pyclass(name = $name, module = "mutforge", eq, from_py_object)]
        #[derive(Clone, PartialEq)]
        pub struct $py {
            inner: $inner,
        }

        #[pymethods]
        impl $py {
            #[staticmethod]
            fn from_json(text: &str) -> PyResult<Self> {
                Ok(Self { inner: from_json(text)? })
            }

            fn to_json(&self) -> PyResult<String> {
                to_json(&self.inner)
            }

            /// Store key of the record.
            #[getter]
            fn key(&self) -> String {
                self.inner.key().to_string()
            }

            fn __repr__(&self) -> String {
                format!("{}({:?})", $name, self.inner.key())
            }

            $($extra)*
        }
    };
}

record_class!(PyBugReport, "BugReport", mutforge::BugReport, {
    #[new]
    #[pyo3(signature = (report_id, source_repo, title, body, labels = Vec::new(), status = "fixed"))]
    fn new(report_id: &str, source_repo: &str, title: &str, body: &str, labels: Vec<String>, status: &str) -> PyResult<Self> {
        let status = parse_tag(status)?;
        Ok(Self {
            inner: mutforge::BugReport::from_parts(report_id, source_repo, title, labels, body, status),
        })
    }

    #[getter]
    fn report_id(&self) -> &str {
        &self.inner.report_id
    }

    #[getter]
    fn title(&self) -> &str {
        &self.inner.title
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.clone()
    }

    #[getter]
    fn snippets(&self) -> Vec<String> {
        self.inner.snippets.iter().map(|s| s.text.clone()).collect()
    }

    #[getter]
    fn status(&self) -> String {
        tag(&self.inner.status)
    }
});

record_class!(PySeedProgram, "SeedProgram", mutforge::SeedProgram, {
    #[new]
    #[pyo3(signature = (text, origin = "testsuite", language_hint = None))]
    fn new(text: &str, origin: &str, language_hint: Option<&str>) -> PyResult<Self> {
        let origin: SeedOrigin = parse_tag(origin)?;
        Ok(Self {
            inner: mutforge::SeedProgram::from_text(mutforge::ProgramText::with_hint(text, language_hint), origin),
        })
    }

    #[getter]
    fn seed_id(&self) -> &str {
        &self.inner.seed_id
    }

    #[getter]
    fn text(&self) -> &str {
        &self.inner.text.text
    }

    #[getter]
    fn origin(&self) -> String {
        tag(&self.inner.origin)
    }

    #[getter]
    fn parent_id(&self) -> Option<String> {
        self.inner.parent_id.clone()
    }
});

record_class!(PyMutatorSpec, "MutatorSpec", mutforge::MutatorSpec, {
    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn target_construct(&self) -> &str {
        &self.inner.target_construct
    }

    #[getter]
    fn description(&self) -> &str {
        &self.inner.description
    }

    #[getter]
    fn before_example(&self) -> &str {
        &self.inner.before_example.text
    }

    #[getter]
    fn after_example(&self) -> &str {
        &self.inner.after_example.text
    }

    fn render_text(&self) -> String {
        self.inner.render_text()
    }
});

record_class!(PyMutatorArtifact, "MutatorArtifact", mutforge::MutatorArtifact, {
    /// Wraps an executable that already speaks the mutator protocol.
    #[staticmethod]
    fn from_binary(mutator_id: &str, path: PathBuf) -> Self {
        Self {
            inner: mutforge::MutatorArtifact::from_binary(mutator_id, path),
        }
    }

    #[getter]
    fn mutator_id(&self) -> &str {
        &self.inner.mutator_id
    }

    #[getter]
    fn status(&self) -> String {
        tag(&self.inner.status)
    }

    #[getter]
    fn attempts(&self) -> u32 {
        self.inner.attempts
    }

    #[getter]
    fn code(&self) -> &str {
        &self.inner.source.code
    }

    /// Applies the mutator; returns `(protocol_class, output_or_None)`.
    #[pyo3(signature = (program, rng_seed = None, timeout_secs = 10.0))]
    fn apply(&self, py: Python<'_>, program: &str, rng_seed: Option<u64>, timeout_secs: f64) -> PyResult<(String, Option<String>)> {
        let text = mutforge::ProgramText::new(program);
        let out = py
            .detach(|| mutforge::runtime::apply(&self.inner, &text, rng_seed, Duration::from_secs_f64(timeout_secs)))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok((tag(&out.protocol_class()), out.output.map(|p| p.text)))
    }
});

record_class!(PyFinding, "Finding", mutforge::Finding, {
    #[getter]
    fn finding_id(&self) -> &str {
        &self.inner.finding_id
    }

    #[getter]
    fn kind(&self) -> String {
        tag(&self.inner.kind)
    }

    #[getter]
    fn mutator_chain(&self) -> Vec<String> {
        self.inner.mutator_chain.clone()
    }

    #[getter]
    fn compiler(&self) -> Option<String> {
        self.inner.compiler.clone()
    }

    #[getter]
    fn program(&self) -> &str {
        &self.inner.program.text
    }

    #[getter]
    fn stderr(&self) -> &str {
        &self.inner.stderr
    }
});

/// Thread-safe token accounting with per-million rates.
#[pyclass(name = "UsageLedger", module = "mutforge")]
pub struct PyUsageLedger {
    inner: llm::UsageLedger,
}

#[pymethods]
impl PyUsageLedger {
    #[new]
    #[pyo3(signature = (input_per_million = 2.5, output_per_million = 10.0))]
    fn new(input_per_million: f64, output_per_million: f64) -> Self {
        Self {
            inner: llm::UsageLedger::new(Rates {
                input_per_million,
                output_per_million,
            }),
        }
    }

    fn record(&self, agent: &str, mutator_id: &str, input_tokens: u64, output_tokens: u64) -> PyResult<()> {
        let agent: Agent = parse_tag(agent)?;
        self.inner.record(agent, mutator_id, llm::Usage::new(input_tokens, output_tokens));
        Ok(())
    }

    fn total(&self) -> (u64, u64) {
        let u = self.inner.total();
        (u.input_tokens, u.output_tokens)
    }

    fn mutator_usage(&self, mutator_id: &str) -> (u64, u64) {
        let u = self.inner.mutator_usage(mutator_id);
        (u.input_tokens, u.output_tokens)
    }

    fn cost(&self) -> f64 {
        self.inner.cost()
    }
}

#[pyfunction]
#[pyo3(signature = (input_tokens, output_tokens, input_per_million = 2.5, output_per_million = 10.0))]
fn cost(input_tokens: u64, output_tokens: u64, input_per_million: f64, output_per_million: f64) -> f64 {
    llm::cost(
        llm::Usage::new(input_tokens, output_tokens),
        Rates {
            input_per_million,
            output_per_million,
        },
    )
}

/// Parses a labeled-section specification into a dict of its fields.
#[pyfunction]
fn parse_spec(text: &str) -> PyResult<std::collections::BTreeMap<&'static str, String>> {
    let f = factory::parse_spec(text).map_err(value_err)?;
    Ok([
        ("name", f.name),
        ("target_construct", f.target_construct),
        ("description", f.description),
        ("constraints", f.constraints),
        ("before_example", f.before_example),
        ("after_example", f.after_example),
    ]
    .into_iter()
    .collect())
}

/// Failure label for build diagnostics under the default rule table.
#[pyfunction]
fn classify_build_errors(text: &str) -> String {
    factory::classify_failure(&[], FailureEvidence::BuildErrors(text), &FailureRules::default())
        .as_str()
        .to_string()
}

/// `(start, end, class_or_None)` byte spans covering `text`.
#[pyfunction]
#[pyo3(signature = (text, language = "rust"))]
fn tokenize(text: &str, language: &str) -> Vec<(usize, usize, Option<String>)> {
    LexicalTokenizer::for_language(language)
        .tokenize(text)
        .into_iter()
        .map(|t| (t.start, t.end, t.class.map(|c| tag(&c))))
        .collect()
}

#[pyfunction]
#[pyo3(signature = (seeds, target_count, language = "rust", rng_seed = 0))]
fn enhance(seeds: Vec<PySeedProgram>, target_count: usize, language: &str, rng_seed: u64) -> PyResult<Vec<PySeedProgram>> {
    let input: Vec<_> = seeds.into_iter().map(|s| s.inner).collect();
    let out = seeds::enhance(&input, target_count, &LexicalTokenizer::for_language(language), rng_seed).map_err(value_err)?;
    Ok(out.into_iter().map(|inner| PySeedProgram { inner }).collect())
}

/// `(kind, first_frame, second_frame, finding_ids)`
type BucketRow = (String, String, String, Vec<String>);

/// Groups findings by signature. `family` selects the stack-frame rules
/// applied to every compiler named in the findings.
#[pyfunction]
#[pyo3(signature = (findings, family = "generic"))]
fn bucket_findings(findings: Vec<PyFinding>, family: &str) -> PyResult<Vec<BucketRow>> {
    let family: CompilerFamily = parse_tag(family)?;
    let findings: Vec<_> = findings.into_iter().map(|f| f.inner).collect();
    let mut names: Vec<&str> = findings.iter().filter_map(|f| f.compiler.as_deref()).collect();
    names.sort_unstable();
    names.dedup();
    let compilers: Vec<CompilerTarget> = names
        .iter()
        .map(|n| {
            let mut c = CompilerTarget::new(*n, vec!["true".into()]);
            c.family = family;
            c
        })
        .collect();
    let rules = TriageRules::new(&compilers).map_err(value_err)?;
    Ok(mutforge::triage::bucket(&findings, &rules)
        .into_iter()
        .map(|(sig, members)| {
            (
                tag(&sig.kind),
                sig.frame_pair.0,
                sig.frame_pair.1,
                members.into_iter().map(|f| f.finding_id).collect(),
            )
        })
        .collect())
}

#[pyfunction]
fn load_reports(path: PathBuf) -> PyResult<Vec<PyBugReport>> {
    let v = mutforge::corpus::load_corpus(&path).map_err(io_err)?;
    Ok(v.into_iter().map(|inner| PyBugReport { inner }).collect())
}

#[pyfunction]
fn store_reports(path: PathBuf, reports: Vec<PyBugReport>) -> PyResult<()> {
    let v: Vec<_> = reports.into_iter().map(|r| r.inner).collect();
    mutforge::corpus::store_corpus(&path, &v).map_err(io_err)
}

#[pyfunction]
fn load_seeds(path: PathBuf) -> PyResult<Vec<PySeedProgram>> {
    let v = seeds::load_seeds(&path).map_err(io_err)?;
    Ok(v.into_iter().map(|inner| PySeedProgram { inner }).collect())
}

#[pyfunction]
fn store_seeds(path: PathBuf, seeds: Vec<PySeedProgram>) -> PyResult<()> {
    let v: Vec<_> = seeds.into_iter().map(|s| s.inner).collect();
    seeds::store_seeds(&path, &v).map_err(io_err)
}

#[pyfunction]
fn load_specs(path: PathBuf) -> PyResult<Vec<PyMutatorSpec>> {
    let v = factory::load_specs(&path).map_err(io_err)?;
    Ok(v.into_iter().map(|inner| PyMutatorSpec { inner }).collect())
}

/// Valid artifacts from a forge outcome store.
#[pyfunction]
fn load_mutators(path: PathBuf) -> PyResult<Vec<PyMutatorArtifact>> {
    let outcomes = factory::load_outcomes(&path).map_err(io_err)?;
    Ok(factory::valid_artifacts(&outcomes)
        .into_iter()
        .map(|inner| PyMutatorArtifact { inner })
        .collect())
}

/// Findings from a findings directory or its `findings.jsonl`.
#[pyfunction]
fn load_findings(path: PathBuf) -> PyResult<Vec<PyFinding>> {
    let v = mutforge::fuzz::load_findings(&path).map_err(io_err)?;
    Ok(v.into_iter().map(|inner| PyFinding { inner }).collect())
}

#[pymodule]
#[pyo3(name = "mutforge")]
fn mutforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    init_module(m)
}

/// Registers every class and function on `m`; lets an embedding host build
/// the module without importing the extension file.
pub fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBugReport>()?;
    m.add_class::<PySeedProgram>()?;
    m.add_class::<PyMutatorSpec>()?;
    m.add_class::<PyMutatorArtifact>()?;
    m.add_class::<PyFinding>()?;
    m.add_class::<PyUsageLedger>()?;
    m.add_function(wrap_pyfunction!(cost, m)?)?;
    m.add_function(wrap_pyfunction!(parse_spec, m)?)?;
    m.add_function(wrap_pyfunction!(classify_build_errors, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(enhance, m)?)?;
    m.add_function(wrap_pyfunction!(bucket_findings, m)?)?;
    m.add_function(wrap_pyfunction!(load_reports, m)?)?;
    m.add_function(wrap_pyfunction!(store_reports, m)?)?;
    m.add_function(wrap_pyfunction!(load_seeds, m)?)?;
    m.add_function(wrap_pyfunction!(store_seeds, m)?)?;
    m.add_function(wrap_pyfunction!(load_specs, m)?)?;
    m.add_function(wrap_pyfunction!(load_mutators, m)?)?;
    m.add_function(wrap_pyfunction!(load_findings, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
