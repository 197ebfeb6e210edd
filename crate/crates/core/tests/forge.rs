mod common;

use common::*;
use mutforge::factory::DiscardReason;
use mutforge::llm::{cost, Agent, LlmResponse, Usage};
use mutforge::runtime::{self, ArtifactStatus};
use mutforge::{FailureLabel, ForgeOutcome};

fn refinements(broken_count: usize, fix: bool) -> Vec<String> {
    let mut r: Vec<String> = (1..=broken_count).map(broken).collect();
    if fix {
        r.push(good_flip());
    }
    r
}

#[test]
fn fixed_on_third_build() {
    let env = ToyForge::scripted(&broken(0), &refinements(1, true));
    let rec = env.forge().forge(&toy_report("toy#1")).unwrap();
    let art = rec.outcome.as_valid().expect("valid artifact");
    assert_eq!(art.attempts, 3);
    assert_eq!(art.history.len(), 2);
    assert_eq!(art.source.generation, 2);
    assert_eq!(art.status, ArtifactStatus::Valid);
    assert!(art.history.iter().all(|h| h.compile_errors.contains("cannot find value `BAD`")));
    assert_eq!(rec.spec.unwrap().name, "Flip Additive");
    // The artifact mutates a fresh program.
    let out = runtime::apply(art, &mutforge::ProgramText::new("a + b\n"), Some(1), std::time::Duration::from_secs(5)).unwrap();
    assert_eq!(out.output.unwrap().text, "a - b\n");
}

#[test]
fn every_attempt_index_is_reported() {
    for k in 1..=4usize {
        let (synth, refs) = if k == 1 { (good_flip(), vec![]) } else { (broken(0), refinements(k - 2, true)) };
        let env = ToyForge::scripted(&synth, &refs);
        let rec = env.forge().forge(&toy_report("toy#k")).unwrap();
        let art = rec.outcome.as_valid().unwrap_or_else(|| panic!("k={k}: {:?}", rec.outcome));
        assert_eq!(art.attempts as usize, k);
        assert_eq!(art.history.len(), k - 1);
    }
}

#[test]
fn never_compiling_stops_after_ten_refinements() {
    let env = ToyForge::scripted(&broken(0), &refinements(12, false));
    let rec = env.forge().forge(&toy_report("toy#2")).unwrap();
    let d = rec.outcome.as_discard().expect("discard");
    assert_eq!(d.reason, DiscardReason::AttemptsExhausted);
    assert_eq!(d.history.len(), 10);
    assert_eq!(d.status, ArtifactStatus::BuildFailed);
    assert_eq!(d.label, FailureLabel::UndeclaredName);
    assert_eq!(env.backend.requests().len(), 12);
    assert_eq!(env.backend.remaining(), 2);
    assert!(d.last_diagnostics.contains("BAD"));
}

#[test]
fn custom_cap_is_honoured() {
    let mut env = ToyForge::scripted(&broken(0), &refinements(5, false));
    env.config.max_refinements = 3;
    let rec = env.forge().forge(&toy_report("toy#3")).unwrap();
    assert_eq!(rec.outcome.history().len(), 3);
    assert_eq!(env.backend.remaining(), 2);
}

#[test]
fn identical_revision_is_no_progress() {
    let env = ToyForge::scripted(&broken(0), &[broken(0)]);
    let rec = env.forge().forge(&toy_report("toy#4")).unwrap();
    let d = rec.outcome.as_discard().unwrap();
    assert_eq!(d.reason, DiscardReason::NoProgress);
    assert_eq!(d.history.len(), 1);
}

#[test]
fn unchanged_output_is_ineffective() {
    let env = ToyForge::scripted(&script("printf '%s' \"$input\"\n"), &[]);
    let rec = env.forge().forge(&toy_report("toy#5")).unwrap();
    let d = rec.outcome.as_discard().unwrap();
    assert_eq!(d.reason, DiscardReason::Ineffective);
    assert_eq!(d.status, ArtifactStatus::Ineffective);
    assert_eq!(d.label, FailureLabel::IncorrectMatching);
    assert!(d.history.is_empty());
}

#[test]
fn rejected_mutants_feed_refinement() {
    // Output that the reference compiler cannot accept fails validation and
    // triggers a refinement carrying the validation diagnostics.
    let rejecting = script("printf '%s' \"$input\" | sed 's/+/REJECT/'\n");
    let env = ToyForge::new(vec![
        LlmResponse::new(SPEC_REPLY, Usage::new(1, 1)),
        LlmResponse::new(fenced(&rejecting), Usage::new(1, 1)),
        LlmResponse::new(fenced(&good_flip()), Usage::new(1, 1)),
    ]);
    let mut env = env;
    env.reference = compiler("cc-strict");
    let rec = env.forge().forge(&toy_report("toy#6")).unwrap();
    let art = rec.outcome.as_valid().unwrap_or_else(|| panic!("{:?}", rec.outcome));
    assert_eq!(art.attempts, 2);
    assert!(art.history[0].compile_errors.contains("failed to compile"), "{}", art.history[0].compile_errors);
}

#[test]
fn missing_entry_marker_counts_as_failed_build() {
    let env = ToyForge::scripted("#!/bin/sh\ncat\n", &[good_flip()]);
    let rec = env.forge().forge(&toy_report("toy#7")).unwrap();
    let art = rec.outcome.as_valid().unwrap();
    assert_eq!(art.attempts, 2);
    assert!(art.history[0].compile_errors.contains("entry point"));
}

#[test]
fn unparseable_invention_discards() {
    let env = ToyForge::new(vec![
        LlmResponse::new("no sections here", Usage::new(5, 5)),
        LlmResponse::new("still nothing", Usage::new(5, 5)),
    ]);
    let rec = env.forge().forge(&toy_report("toy#8")).unwrap();
    assert!(rec.spec.is_none());
    let d = rec.outcome.as_discard().unwrap();
    assert_eq!(d.reason, DiscardReason::InventionParse);
    assert_eq!(d.label, FailureLabel::SyntaxParseError);
    assert_eq!(d.raw_response.as_deref(), Some("still nothing"));
}

#[test]
fn ledger_attributes_every_call() {
    let env = ToyForge::scripted(&broken(0), &refinements(1, true));
    let rec = env.forge().forge(&toy_report("toy#9")).unwrap();
    let snap = env.gateway.ledger.snapshot();
    assert_eq!(snap.calls, 4);
    assert_eq!(snap.per_agent[&Agent::Invention], Usage::new(1000, 100));
    assert_eq!(snap.per_agent[&Agent::Synthesis], Usage::new(2000, 200));
    assert_eq!(snap.per_agent[&Agent::Refinement], Usage::new(3000, 300));
    let mine = env.gateway.ledger.mutator_usage(rec.outcome.mutator_id());
    assert_eq!(mine, Usage::new(6000, 600));
    let expected = cost(mine, env.gateway.ledger.rates());
    assert!((env.gateway.ledger.cost() - expected).abs() < 1e-12);
    assert!((expected - 0.021).abs() < 1e-9);
}

#[test]
fn forge_all_keeps_order() {
    let mut responses = Vec::new();
    for _ in 0..3 {
        responses.push(LlmResponse::new(SPEC_REPLY, Usage::new(1, 1)));
        responses.push(LlmResponse::new(fenced(&good_flip()), Usage::new(1, 1)));
    }
    let env = ToyForge::new(responses);
    let reports: Vec<_> = (0..3).map(|i| toy_report(&format!("toy#{i}"))).collect();
    let out = env.forge().forge_all(&reports, 1);
    let ids: Vec<String> = out.iter().map(|r| r.as_ref().unwrap().outcome.mutator_id().to_string()).collect();
    let expected: Vec<String> = reports
        .iter()
        .map(|r| mutforge::factory::mutator_id_for(&r.report_id, "toy", 0))
        .collect();
    assert_eq!(ids, expected);
    assert!(out.iter().all(|r| matches!(r.as_ref().unwrap().outcome, ForgeOutcome::Valid(_))));
}
