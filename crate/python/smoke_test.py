"""Smoke test for the Python bindings.

Build first with `cargo build -p mutforge-py`; the script copies the shared
library next to a temporary package path under the module name `mutforge`.
Pass an explicit library path as the first argument to override the lookup.
"""

import importlib
import json
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TOY = os.path.join(ROOT, "fixtures", "toy")


def find_library():
    if len(sys.argv) > 1:
        return sys.argv[1]
    for profile in ("release", "debug"):
        for name in ("libmutforge_py.so", "libmutforge_py.dylib"):
            path = os.path.join(ROOT, "target", profile, name)
            if os.path.exists(path):
                return path
    sys.exit("mutforge_py library not found; run `cargo build -p mutforge-py`")


def load(tmp):
    shutil.copy(find_library(), os.path.join(tmp, "mutforge.so"))
    sys.path.insert(0, tmp)
    return importlib.import_module("mutforge")


def main():
    tmp = tempfile.mkdtemp()
    mf = load(tmp)

    assert abs(mf.cost(14969, 3694) - 0.0743625) < 1e-9
    ledger = mf.UsageLedger()
    ledger.record("synthesis", "m1", 1000, 100)
    ledger.record("refinement", "m1", 500, 50)
    assert ledger.total() == (1500, 150)
    assert ledger.mutator_usage("m1") == (1500, 150)

    spec = mf.parse_spec("Name: Flip\nTarget: additions\nDescription: + to -\nBefore:\na + b\nAfter:\na - b\n")
    assert spec["after_example"] == "a - b"
    try:
        mf.parse_spec("Name: only a name\n")
    except ValueError as e:
        assert "Target" in str(e)
    else:
        raise AssertionError("incomplete spec accepted")

    assert mf.classify_build_errors("error[E0425]: cannot find value `x` in this scope") == "undeclared_name"

    text = "fn f(a, b) { a + b }"
    spans = mf.tokenize(text)
    assert "".join(text[s:e] for s, e, _ in spans) == text
    assert ("value_like" in {c for _, _, c in spans})

    seed = mf.SeedProgram(text)
    more = mf.enhance([seed], 3, rng_seed=5)
    assert len(more) == 3 and more[0] == seed
    assert all(s.origin == "enhanced" for s in more[1:])
    assert mf.enhance([seed], 3, rng_seed=5) == more

    report = mf.BugReport("toy#1", "toy/compiler", "ICE", "Crash on:\n```rust\nfn main() {}\n```\n", ["I-ICE"])
    assert report.snippets == ["fn main() {}"]
    assert mf.BugReport.from_json(report.to_json()) == report
    path = os.path.join(tmp, "reports.jsonl")
    mf.store_reports(path, [report])
    assert mf.load_reports(path) == [report]
    seeds_path = os.path.join(tmp, "seeds.jsonl")
    mf.store_seeds(seeds_path, more)
    assert mf.load_seeds(seeds_path) == more

    flip = mf.MutatorArtifact.from_binary("flip", os.path.join(TOY, "mutators", "plus_to_minus.sh"))
    assert flip.apply("a + b\n", rng_seed=1) == ("mutated", "a - b\n")
    assert flip.apply("a * b\n")[0] == "no_match"
    assert mf.MutatorArtifact.from_binary("v", os.path.join(TOY, "mutators", "violating.sh")).apply("x")[0] == "error"

    trace = "thread 'rustc' panicked at x.rs:1:1:\n   0: std::panicking::begin_panic\n   1: my::pass::run\n   2: my::driver::main\n"
    findings = [
        mf.Finding.from_json(json.dumps({
            "finding_id": f"f{i}", "kind": "crash", "program": {"text": "p"}, "seed_id": "s",
            "mutator_chain": ["flip"], "compiler": "cc", "stderr": trace, "timestamp_ms": i,
        }))
        for i in range(3)
    ]
    buckets = mf.bucket_findings(findings, family="rustc")
    assert buckets == [("crash", "my::pass::run", "my::driver::main", ["f0", "f1", "f2"])], buckets

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
