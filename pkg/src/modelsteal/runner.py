"""Experiment orchestration: config handling, the victim -> selection ->
anchor -> student -> eval pipeline, run-directory layout, and run
comparison.

Every run directory is self-describing: manifest.json carries the config,
its hash, and the completed stages; query_log.jsonl, selection.json,
split.json, the per-stage traces and checkpoints, and metrics.json are all
reachable from it. With deterministic mode (the default) an identical
config reproduces identical logs and reports byte for byte.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np
import torch

from . import anchor as anchor_mod
from .data import LabeledSet, SplitSpec, save_split_manifest, split_train_val, unlabeled_remainder
from .distill import BatchPlan, LossConfig, train_student
from .errors import BudgetExhausted, ConfigError, ResumeError
from .metrics import MetricsReport, compute_metrics, render_table, report_victim_baseline
from .models import load_checkpoint, save_checkpoint
from .oracle import LogicalClock, QueryBudget, VictimOracle, train_victim
from .selection import run_cycles, save_selection_manifest
from .synthetic import ShiftRecipe, generate_labeled, make_proxy_pool
from .trainloop import OptimSpec, TrainSchedule

logger = logging.getLogger(__name__)

STAGES = ("victim", "steal", "distill", "eval")

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "deterministic": True,
    "victim": {
        "arch": "smallconv",
        "n_train": 3000,
        "n_test": 600,
        "seed": 0,
        "noise": 1.0,
        "image_size": 16,
        "schedule": {"epochs": 30, "lr": 0.02, "batch_size": 64, "augment": True},
    },
    "proxy": {
        "n_samples": 4000,
        "seed": 1,
        "noise": 1.0,
        "shift": {"brightness": 0.35, "contrast": 0.7, "noise_scale": 1.6, "geometry_jitter": 2},
    },
    "budget": 1000,
    "selection": {"strategy": "random", "num_cycles": 1},
    "split": {"val_fraction": 0.1},
    "anchor": {
        "arch": "smallconv",
        "schedule": {"epochs": 50, "lr": 0.01, "batch_size": 32, "augment": True},
    },
    "student": {
        "loss": {
            "alpha": 0.4,
            "beta": 0.5,
            "tau": 1.5,
            "lam": 1.0,
            "rho": 0.95,
            "m": 0.999,
            "la_enabled": True,
            "la_scale": 1.0,
        },
        "plan": {"b_l": 32, "b_u": 32, "epochs": 100},
        "optim": {"lr": 0.01},
        "init": "random",
    },
    "eval": {"positive_class": 2},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """DEFAULT_CONFIG merged with a YAML file and programmatic overrides."""
    import yaml

    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must be a mapping")
        cfg = _deep_merge(cfg, loaded)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    if cfg["budget"] < 0:
        raise ConfigError("budget must be nonnegative")
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _schedule_from(cfg: dict, seed: int) -> TrainSchedule:
    optim = OptimSpec(
        lr=cfg.get("lr", 0.01),
        weight_decay=cfg.get("weight_decay", 5e-4),
        momentum=cfg.get("momentum", 0.9),
    )
    return TrainSchedule(
        epochs=cfg.get("epochs", 50),
        optim=optim,
        batch_size=cfg.get("batch_size", 32),
        augment=cfg.get("augment", True),
        seed=seed,
    )


def set_deterministic(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def resolve_device() -> str:
    device = os.environ.get("MODELSTEAL_DEVICE", "cpu")
    if device != "cpu":
        logger.warning("device %r requested but only cpu is supported; using cpu", device)
    return "cpu"


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _victim_test_set(cfg: dict) -> tuple[np.ndarray, np.ndarray]:
    v = cfg["victim"]
    return generate_labeled(v["n_test"], v["seed"] + 9999, v["image_size"], v["noise"])


def run_pipeline(cfg: dict, out_dir: str | Path, resume: bool = False, upto: str = "eval") -> Path:
    """Execute the attack pipeline into `out_dir` up to stage `upto`
    (victim | steal | distill | eval); returns the run dir.

    With resume=True, stages whose artifacts already exist are skipped,
    provided the stored config hash matches (ResumeError otherwise).
    """
    if upto not in STAGES:
        raise ConfigError(f"unknown stage {upto!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolve_device()
    chash = config_hash(cfg)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest["config_hash"] != chash:
            raise ResumeError(
                f"config hash {chash[:12]} does not match existing run {manifest['config_hash'][:12]}"
            )
        if not resume:
            manifest = {"config": cfg, "config_hash": chash, "seed": cfg["seed"], "stages": {}}
    else:
        manifest = {"config": cfg, "config_hash": chash, "seed": cfg["seed"], "stages": {}}

    def save_manifest():
        manifest["artifacts"] = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))

    if cfg.get("deterministic", True):
        set_deterministic(cfg["seed"])
    seed = cfg["seed"]

    # --- stage: victim -------------------------------------------------
    victim_ckpt = out / "victim.pt"
    try:
        if resume and manifest["stages"].get("victim") and victim_ckpt.exists():
            victim, _ = load_checkpoint(victim_ckpt)
        else:
            v = cfg["victim"]
            images, labels = generate_labeled(v["n_train"], v["seed"], v["image_size"], v["noise"])
            victim, vmeta = train_victim(
                images, labels, v["arch"], _schedule_from(v["schedule"], v["seed"]), seed=v["seed"]
            )
            save_checkpoint(victim, victim_ckpt, {**vmeta, "config_hash": chash, "role": "victim"})
            logger.info("victim trained: holdout accuracy %.3f", vmeta["holdout_accuracy"])
        manifest["stages"]["victim"] = True
        save_manifest()
    except Exception as exc:  # persist partial state, then surface the stage
        save_manifest()
        raise StageError("victim", exc) from exc
    if upto == "victim":
        return out

    # --- stage: steal (selection + query + anchor) ----------------------
    anchor_ckpt = out / "anchor.pt"
    p = cfg["proxy"]
    pool = make_proxy_pool(
        p["n_samples"], p["seed"], cfg["victim"]["image_size"], p["noise"], ShiftRecipe(**p["shift"])
    )
    split_spec = SplitSpec(cfg["split"]["val_fraction"], cfg["split"].get("seed", seed))
    try:
        if resume and manifest["stages"].get("steal") and anchor_ckpt.exists():
            anchor, _ = load_checkpoint(anchor_ckpt)
            dl = json.loads((out / "labeled_set.json").read_text())
            idx = [pool.ids.index(sid) for sid in dl["ids"]]
            labeled = LabeledSet(tuple(dl["ids"]), pool.images[idx], np.asarray(dl["labels"], dtype=np.int64))
        else:
            if cfg["budget"] < 1:
                raise BudgetExhausted("query budget is 0; nothing can be selected")
            oracle = VictimOracle(victim, QueryBudget(cfg["budget"]), clock=LogicalClock())
            sel = cfg["selection"]
            sel_seed = sel.get("seed", seed)
            anchor_sched = _schedule_from(cfg["anchor"]["schedule"], cfg["anchor"]["schedule"].get("seed", seed))

            last_trace: list[dict] = []

            def train_fn(lab: LabeledSet) -> torch.nn.Module:
                tr, va = split_train_val(lab, split_spec)
                model, trace = anchor_mod.train_anchor(
                    tr, va, cfg["anchor"]["arch"], anchor_sched, victim.num_classes
                )
                last_trace[:] = trace
                return model

            result = run_cycles(
                pool, oracle, sel["strategy"], cfg["budget"], sel["num_cycles"], sel_seed, train_fn
            )
            labeled, anchor = result.labeled, result.anchor
            oracle.save_log(out / "query_log.jsonl")
            save_selection_manifest(out / "selection.json", sel["strategy"], sel_seed, result.per_cycle_indices, pool)
            (out / "labeled_set.json").write_text(
                json.dumps({"ids": list(labeled.ids), "labels": labeled.labels.tolist()}, sort_keys=True)
            )
            tr, va = split_train_val(labeled, split_spec)
            save_split_manifest(out / "split.json", pool, split_spec, tr, va)
            (out / "anchor_trace.jsonl").write_text(
                "".join(json.dumps(r) + "\n" for r in last_trace)
            )
            best_f1 = max(r["val_f1"] for r in last_trace)
            save_checkpoint(anchor, anchor_ckpt, {"val_f1": best_f1, "config_hash": chash, "role": "anchor"})
        manifest["stages"]["steal"] = True
        save_manifest()
    except StageError:
        raise
    except Exception as exc:
        save_manifest()
        raise StageError("steal", exc) from exc
    if upto == "steal":
        return out

    # --- stage: distill (student training) ------------------------------
    student_ckpt = out / "student.pt"
    try:
        if resume and manifest["stages"].get("distill") and student_ckpt.exists():
            student, _ = load_checkpoint(student_ckpt)
        else:
            s = cfg["student"]
            train_split, val_split = split_train_val(labeled, split_spec)
            unlabeled = unlabeled_remainder(pool, labeled)
            loss_cfg = LossConfig(**s["loss"])
            plan = BatchPlan(**s["plan"])
            optim = OptimSpec(
                lr=s["optim"].get("lr", 0.01),
                weight_decay=s["optim"].get("weight_decay", 5e-4),
                momentum=s["optim"].get("momentum", 0.9),
            )
            result = train_student(
                train_split, val_split, unlabeled, anchor, loss_cfg, plan, optim,
                seed=s.get("seed", seed), init=s["init"],
                trace_path=out / "student_trace.jsonl",
            )
            student = result.student
            save_checkpoint(student, student_ckpt, {"config_hash": chash, "role": "student"})
        manifest["stages"]["distill"] = True
        save_manifest()
    except StageError:
        raise
    except Exception as exc:
        save_manifest()
        raise StageError("distill", exc) from exc
    if upto == "distill":
        return out

    # --- stage: eval -----------------------------------------------------
    try:
        test_images, test_labels = _victim_test_set(cfg)
        pos = cfg["eval"]["positive_class"]
        with torch.no_grad():
            x = torch.as_tensor(test_images)
            victim_preds = victim(x).argmax(dim=1).numpy()
            student_preds = student(x).argmax(dim=1).numpy()
            anchor_preds = anchor(x).argmax(dim=1).numpy()
        k = victim.num_classes
        reports = {
            "student": compute_metrics(student_preds, victim_preds, test_labels, pos, k),
            "anchor": compute_metrics(anchor_preds, victim_preds, test_labels, pos, k),
            "victim_baseline": report_victim_baseline(victim_preds, test_labels, pos, k),
        }
        metrics_doc = {name: json.loads(r.to_json()) for name, r in reports.items()}
        metrics_doc["budget_used"] = len(labeled)
        (out / "metrics.json").write_text(json.dumps(metrics_doc, indent=2, sort_keys=True) + "\n")
        (out / "report.txt").write_text(render_table(sorted(reports.items())) + "\n")
        manifest["stages"]["eval"] = True
        save_manifest()
    except StageError:
        raise
    except Exception as exc:
        save_manifest()
        raise StageError("eval", exc) from exc

    return out


def load_metrics(run_dir: str | Path) -> dict[str, MetricsReport] | None:
    path = Path(run_dir) / "metrics.json"
    if not path.exists():
        return None
    doc = json.loads(path.read_text())
    return {
        name: MetricsReport(**value)
        for name, value in doc.items()
        if isinstance(value, dict)
    }


def compare_runs(run_dirs: list[str | Path], role: str = "student") -> str:
    """Table of metric rows across runs; incomplete runs are flagged, runs
    with mismatched positive classes refuse to compare."""
    if not run_dirs:
        raise ConfigError("no run directories given")
    rows: list[tuple[str, MetricsReport]] = []
    incomplete: list[str] = []
    for d in run_dirs:
        reports = load_metrics(d)
        if reports is None or role not in reports:
            incomplete.append(Path(d).name)
            continue
        rows.append((Path(d).name, reports[role]))
    if rows:
        classes = {r.positive_class for _, r in rows}
        if len(classes) > 1:
            raise ConfigError(f"runs use different positive classes: {sorted(classes)}")
    table = render_table(rows) if rows else "Method\n"
    for name in incomplete:
        table += f"\n{name}  (incomplete: no metrics report)"
    return table
