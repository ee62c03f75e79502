"""End-to-end smoke checks for the python module against the C++ core."""

import json
import pathlib
import sys
import tempfile

import metacal


def approx(a, b, tol=1e-12):
    return abs(a - b) <= tol


def check_metrics():
    reports = [
        metacal.ConfidenceReport("a", 0.95, True),
        metacal.ConfidenceReport("b", 0.95, False),
        metacal.ConfidenceReport("c", 0.55, True),
        metacal.ConfidenceReport("d", 0.05, False),
    ]
    assert metacal.ece(reports) == 0.35
    assert metacal.auc(reports) == 0.625
    assert metacal.accuracy(reports) == 0.5

    rows = metacal.reliability_diagram(reports)
    assert len(rows) == 11
    assert sum(r["count"] for r in rows) == 4
    assert rows[10]["accuracy"] is None  # empty singleton bin

    outcomes = [
        metacal.ComparisonOutcome("a", "b", "Q1", 0.9, 0.3, True, False),
        metacal.ComparisonOutcome("c", "d", "Q2", 0.2, 0.8, False, True),
    ]
    assert metacal.auc_c(outcomes) == 1.0
    assert metacal.auc_a(outcomes) == 1.0

    doc = metacal.metrics_report(reports, outcomes)
    assert doc["n"] == 4 and doc["auc_c"] == 1.0 and len(doc["bins"]) == 11
    assert metacal.metrics_report(reports)["auc_c"] is None

    try:
        metacal.auc([metacal.ConfidenceReport("a", 0.9, True)])
    except metacal.MetricUndefinedError:
        pass
    else:
        raise AssertionError("single-class auc should be undefined")
    print("ok metrics")


def check_text_helpers():
    assert metacal.normalize_answer(" (B) ", "multiple_choice") == "B"
    assert metacal.normalize_answer("$1,234.", "numeric") == "1234"
    assert metacal.normalize_answer("  The  Moon. ", "short_answer") == "the moon"

    sentence = metacal.format_single_target("42", 0.35)
    assert sentence == "The answer is 42 and my confidence score is 0.35"
    answer, confidence = metacal.parse_single_target(sentence)
    assert answer == "42" and approx(confidence, 0.35)
    print("ok text helpers")


def check_bootstrap():
    before = [metacal.ConfidenceReport(f"q{i}", 0.9, i % 2 == 0) for i in range(60)]
    identical = metacal.paired_bootstrap(before, before, metric="ece", resamples=300, seed=5)
    assert identical["ci"] == [0.0, 0.0] and identical["significant"] is False

    after = [
        metacal.ConfidenceReport(f"q{i}", 0.95 if i % 2 == 0 else 0.05, i % 2 == 0)
        for i in range(60)
    ]
    improved = metacal.paired_bootstrap(before, after, metric="auc", resamples=300, seed=5)
    assert improved["delta"] > 0.4 and improved["significant"] is True
    assert improved == metacal.paired_bootstrap(before, after, metric="auc", resamples=300, seed=5)
    print("ok bootstrap")


def check_pipeline():
    with tempfile.TemporaryDirectory(prefix="metacal-py-") as raw:
        root = pathlib.Path(raw)
        with open(root / "bank.jsonl", "w") as f:
            for i in range(80):
                f.write(json.dumps({
                    "id": f"q-{i:04d}", "domain": "synthetic", "format": "numeric",
                    "question": f"What is {i} + {i}?", "gold": str(2 * i),
                }) + "\n")
        config = {
            "corpus": "bank.jsonl", "backend": "simulated",
            "n_samples": 10, "temperature": 1.0, "max_gap": 0.2,
            "n_train": 50, "n_test": 30, "n_pairs": 40, "n_eval_pairs": 25,
            "parallelism": 2, "out_dir": "run",
            "seeds": {"split": 1, "backend": 2, "balance": 3, "targets": 4,
                      "pairs": 5, "multitask": 6, "eval": 7, "bootstrap": 8},
            "bootstrap": {"resamples": 200, "alpha": 0.05},
            "simulated": {"p_choices": [0.1, 0.5, 0.9], "distractor_count": 3},
        }
        config_path = root / "config.json"
        config_path.write_text(json.dumps(config))

        manifest = None
        for stage in metacal.stage_names():
            manifest = metacal.run_stage(str(config_path), stage)
        assert set(manifest["stages"]) == set(metacal.stage_names())

        after = json.loads((root / "run" / "metrics_after.json").read_text())
        assert after["auc_c"] == 1.0 and "ece" in after and "auc" in after
        assert (root / "run" / "report.txt").exists()

        try:
            metacal.run_stage(str(config_path), "eval", out_dir=str(root / "fresh"))
        except metacal.DependencyError:
            pass
        else:
            raise AssertionError("eval without upstream artifacts should fail")
        try:
            metacal.run_stage(str(config_path), "grade")
        except metacal.ConfigError:
            pass
        else:
            raise AssertionError("unknown stage should be a config error")
    print("ok pipeline")


def main():
    assert metacal.__version__
    check_metrics()
    check_text_helpers()
    check_bootstrap()
    check_pipeline()
    print("python smoke: all checks passed")


if __name__ == "__main__":
    sys.exit(main())
