import json

import pytest

from modelsteal.cli import EXIT_CODES, main
from modelsteal.errors import BudgetExhausted, ConfigError, ResumeError
from modelsteal.runner import (
    StageError,
    compare_runs,
    config_hash,
    load_config,
    load_metrics,
    run_pipeline,
)

TINY = {
    "seed": 0,
    "victim": {
        "n_train": 120,
        "n_test": 60,
        "noise": 0.8,
        "schedule": {"epochs": 2, "lr": 0.05, "batch_size": 32, "augment": False},
    },
    "proxy": {"n_samples": 150, "noise": 0.8},
    "budget": 40,
    "anchor": {"schedule": {"epochs": 2, "lr": 0.05, "batch_size": 16, "augment": False}},
    "student": {"plan": {"b_l": 16, "b_u": 16, "epochs": 2}},
}


def tiny_config(**extra):
    return load_config(overrides={**TINY, **extra})


class TestConfig:
    def test_defaults_load(self):
        cfg = load_config()
        assert cfg["budget"] == 1000
        assert cfg["student"]["loss"]["alpha"] == 0.4

    def test_yaml_merge(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text("budget: 77\nstudent:\n  loss:\n    rho: 0.5\n")
        cfg = load_config(p)
        assert cfg["budget"] == 77
        assert cfg["student"]["loss"]["rho"] == 0.5
        assert cfg["student"]["loss"]["alpha"] == 0.4  # untouched siblings survive

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text("budget: 77\n")
        assert load_config(p, {"budget": 5})["budget"] == 5

    def test_non_mapping_rejected(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text("- just\n- a list\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_negative_budget_rejected(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"budget": -1})

    def test_hash_stable_under_key_order(self):
        a = {"x": 1, "y": {"a": 2, "b": 3}}
        b = {"y": {"b": 3, "a": 2}, "x": 1}
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash({"x": 2, "y": {"a": 2, "b": 3}})


class TestPipeline:
    def test_end_to_end_artifacts(self, tmp_path):
        out = run_pipeline(tiny_config(), tmp_path / "run")
        for name in (
            "manifest.json", "victim.pt", "query_log.jsonl", "selection.json",
            "labeled_set.json", "split.json", "anchor.pt", "anchor_trace.jsonl",
            "student.pt", "student_trace.jsonl", "metrics.json", "report.txt",
        ):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert all(manifest["stages"].get(s) for s in ("victim", "steal", "distill", "eval"))
        doc = json.loads((out / "metrics.json").read_text())
        assert doc["budget_used"] == 40
        assert set(doc) >= {"student", "anchor", "victim_baseline", "budget_used"}
        assert doc["victim_baseline"]["agreement"] is None

    def test_query_log_respects_budget(self, tmp_path):
        out = run_pipeline(tiny_config(), tmp_path / "run", upto="steal")
        lines = (out / "query_log.jsonl").read_text().splitlines()
        assert len(lines) == 40
        remaining = [json.loads(l)["budget_remaining"] for l in lines]
        assert remaining == sorted(remaining, reverse=True)
        assert remaining[-1] == 0

    def test_byte_identical_reruns(self, tmp_path):
        cfg = tiny_config()
        a = run_pipeline(cfg, tmp_path / "a")
        b = run_pipeline(cfg, tmp_path / "b")
        for name in ("query_log.jsonl", "metrics.json", "selection.json", "report.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_upto_stops_early(self, tmp_path):
        out = run_pipeline(tiny_config(), tmp_path / "run", upto="victim")
        assert (out / "victim.pt").exists()
        assert not (out / "anchor.pt").exists()
        assert not (out / "metrics.json").exists()

    def test_resume_skips_completed_stages(self, tmp_path):
        cfg = tiny_config()
        out = run_pipeline(cfg, tmp_path / "run", upto="steal")
        mtime = (out / "victim.pt").stat().st_mtime_ns
        run_pipeline(cfg, out, resume=True)
        assert (out / "victim.pt").stat().st_mtime_ns == mtime  # not retrained
        assert (out / "metrics.json").exists()

    def test_resume_rejects_config_drift(self, tmp_path):
        out = run_pipeline(tiny_config(), tmp_path / "run", upto="victim")
        with pytest.raises(ResumeError):
            run_pipeline(tiny_config(budget=41), out, resume=True)

    def test_zero_budget_fails_in_steal(self, tmp_path):
        with pytest.raises(StageError) as err:
            run_pipeline(tiny_config(budget=0), tmp_path / "run")
        assert err.value.stage == "steal"
        assert isinstance(err.value.cause, BudgetExhausted)

    def test_unknown_stage(self, tmp_path):
        with pytest.raises(ConfigError):
            run_pipeline(tiny_config(), tmp_path / "run", upto="deploy")


class TestCompare:
    def test_roundtrip_and_table(self, tmp_path):
        run = run_pipeline(tiny_config(), tmp_path / "run")
        reports = load_metrics(run)
        assert set(reports) == {"student", "anchor", "victim_baseline"}
        table = compare_runs([run])
        assert "run" in table and "Acc" in table

    def test_incomplete_run_flagged(self, tmp_path):
        (tmp_path / "empty").mkdir()
        table = compare_runs([tmp_path / "empty"])
        assert "incomplete" in table

    def test_empty_input_rejected(self):
        with pytest.raises(ConfigError):
            compare_runs([])


class TestCLI:
    def _write_cfg(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text(json.dumps(TINY))  # YAML is a JSON superset
        return p

    def test_run_success(self, tmp_path, capsys):
        cfg = self._write_cfg(tmp_path)
        rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")])
        assert rc == 0
        assert '"budget_used": 40' in capsys.readouterr().out

    def test_stage_subcommand(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        rc = main(["train-victim", "--config", str(cfg), "--out", str(tmp_path / "run")])
        assert rc == 0
        assert (tmp_path / "run" / "victim.pt").exists()
        assert not (tmp_path / "run" / "anchor.pt").exists()

    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("budget: -3\n")
        rc = main(["run", "--config", str(bad), "--out", str(tmp_path / "run")])
        assert rc == EXIT_CODES["config"]

    def test_steal_failure_exit_code(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(json.dumps({**TINY, "budget": 0}))
        rc = main(["steal", "--config", str(cfg), "--out", str(tmp_path / "run")])
        assert rc == EXIT_CODES["steal"]

    def test_compare_exit_code_on_empty_metrics(self, tmp_path):
        (tmp_path / "a").mkdir()
        rc = main(["compare", str(tmp_path / "a")])
        assert rc == 0  # incomplete runs are reported, not fatal

    def test_seed_override_changes_hash(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        rc = main(["train-victim", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "r5")])
        assert rc == 0
        manifest = json.loads((tmp_path / "r5" / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 5
