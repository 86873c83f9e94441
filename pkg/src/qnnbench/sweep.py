"""Manifest-driven benchmark sweeps over (a_bits, w_bits) and (pe, simd) grids.

Each grid point owns a subdirectory, a derived seed, and a config hash; the
manifest makes reruns idempotent and interrupts resumable. Master CSVs are
rebuilt from on-disk artifacts after every pass and carry no wall-clock
columns, so serial, parallel, and resumed executions produce byte-identical
reports.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import container, datasets, hwsim, model, streamline, trainer
from .numerics import derive_seed

DEFAULT_BITS = tuple((a, w) for a in range(2, 9) for w in range(2, 9))
DEFAULT_FOLDS = tuple((p, s) for p in (2, 8, 16) for s in (2, 8, 16))

ACCURACY_COLUMNS = ("name", "abits", "wbits", "seed", "epoch", "lr", "train_loss", "test_error")

MANIFEST_NAME = "manifest.json"
ACCURACY_CSV = "accuracy.csv"
HARDWARE_CSV = "hardware.csv"


@dataclass
class SweepPlan:
    out_dir: str
    dataset: str = "mnist"
    data_dir: str | None = None
    bit_pairs: tuple = DEFAULT_BITS
    fold_pairs: tuple = DEFAULT_FOLDS
    epochs: int = 100
    seed: int = 0
    limit: int | None = None
    lr: float = 0.01
    batch_size: int = 100
    milestones: tuple = (90, 95)
    gamma: float = 0.1
    clock_mhz: float = hwsim.DEFAULT_CLOCK_MHZ
    board: str = "pynq-z1"
    verify_n: int = 0

    def __post_init__(self):
        self.bit_pairs = tuple(sorted((int(a), int(w)) for a, w in self.bit_pairs))
        self.fold_pairs = tuple(sorted((int(p), int(s)) for p, s in self.fold_pairs))
        for a, w in self.bit_pairs:
            if not (2 <= a <= 8 and 2 <= w <= 8):
                raise ValueError(f"bit pair ({a},{w}) outside the [2,8] grid")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def run_name(self, a: int, w: int) -> str:
        return f"A{a}W{w}"

    def run_dir(self, a: int, w: int) -> str:
        return os.path.join(self.out_dir, self.run_name(a, w))

    def run_seed(self, a: int, w: int) -> int:
        return derive_seed(self.seed, a, w)

    def config_hash(self, a: int, w: int) -> str:
        # epochs intentionally excluded: a longer run resumes a shorter one
        key = "|".join(
            str(v)
            for v in (
                self.dataset,
                self.limit,
                a,
                w,
                container.format_float(self.lr),
                self.batch_size,
                ",".join(map(str, self.milestones)),
                container.format_float(self.gamma),
                self.run_seed(a, w),
            )
        )
        return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]

    def train_config(self, a: int, w: int) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            milestones=self.milestones,
            gamma=self.gamma,
            batch_size=self.batch_size,
            seed=self.run_seed(a, w),
        )


def _load_manifest(out_dir: str) -> dict:
    path = os.path.join(out_dir, MANIFEST_NAME)
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    return {"format": 1, "runs": {}}


def _write_manifest(out_dir: str, manifest: dict) -> None:
    path = os.path.join(out_dir, MANIFEST_NAME)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def _point_payload(plan: SweepPlan, manifest: dict, a: int, w: int) -> dict:
    rec = manifest["runs"].get(plan.run_name(a, w))
    stale = rec is not None and rec.get("config_hash") != plan.config_hash(a, w)
    return {
        "a": a,
        "w": w,
        "dataset": plan.dataset,
        "data_dir": plan.data_dir,
        "limit": plan.limit,
        "epochs": plan.epochs,
        "lr": plan.lr,
        "batch_size": plan.batch_size,
        "milestones": plan.milestones,
        "gamma": plan.gamma,
        "seed": plan.run_seed(a, w),
        "run_dir": plan.run_dir(a, w),
        "config_hash": plan.config_hash(a, w),
        "verify_n": plan.verify_n,
        "fresh": stale,
    }


def run_point(payload: dict) -> dict:
    """Train/streamline one grid point (idempotent; resumes its checkpoint).

    Top-level so ProcessPoolExecutor can pickle it. Returns the manifest
    record for this run.
    """
    a, w = payload["a"], payload["w"]
    run_dir = payload["run_dir"]
    os.makedirs(run_dir, exist_ok=True)
    record = {
        "config_hash": payload["config_hash"],
        "seed": payload["seed"],
        "status": "failed",
        "epochs_done": 0,
        "paths": {
            "model": os.path.join(run_dir, "model.qnn"),
            "checkpoint": os.path.join(run_dir, "checkpoint.qnn"),
            "log": os.path.join(run_dir, "train_log.csv"),
            "integer": os.path.join(run_dir, "integer.qnn"),
        },
        "error": "",
    }
    try:
        cfg = trainer.TrainConfig(
            epochs=payload["epochs"],
            lr=payload["lr"],
            milestones=payload["milestones"],
            gamma=payload["gamma"],
            batch_size=payload["batch_size"],
            seed=payload["seed"],
        )
        data = datasets.load_dataset(payload["dataset"], payload["data_dir"], limit=payload["limit"])
        ckpt = record["paths"]["checkpoint"]
        if payload.get("fresh"):
            # config changed under this point: stale artifacts must not be resumed
            for p in (ckpt, record["paths"]["log"]):
                if os.path.exists(p):
                    os.remove(p)
        resume = None
        if os.path.exists(ckpt):
            _, _, done, _, _, _ = trainer.load_checkpoint(ckpt)
            if done >= cfg.epochs:
                resume = "complete"
            else:
                resume = ckpt
        if resume == "complete":
            net, _, done, _, _, log = trainer.load_checkpoint(ckpt)
        else:
            net = model.build_mlp(a, w, seed=payload["seed"])
            if resume is None and os.path.exists(record["paths"]["log"]):
                os.remove(record["paths"]["log"])
            net, log = trainer.train(
                net, data, cfg, checkpoint_path=ckpt, resume_from=resume, log_path=record["paths"]["log"]
            )
            done = len(log)
        model.save_model(net, record["paths"]["model"])
        inet = streamline.streamline(net)
        streamline.save_integer_network(inet, record["paths"]["integer"])
        if payload["verify_n"]:
            n = min(payload["verify_n"], data.n_test)
            inputs = datasets.normalize(data.test_images[:n]).reshape(n, -1)
            rep = streamline.verify_equivalence(net, inet, inputs)
            if not rep.ok:
                record["error"] = (
                    f"equivalence: {rep.hidden_mismatches} hidden, {rep.argmax_mismatches} argmax mismatches"
                )
                return record
        record["status"] = "done"
        record["epochs_done"] = done
    except Exception as e:  # failure is a per-row outcome, not a sweep abort
        record["error"] = f"{type(e).__name__}: {e}"
    return record


def _needs_run(plan: SweepPlan, manifest: dict, a: int, w: int) -> bool:
    name = plan.run_name(a, w)
    rec = manifest["runs"].get(name)
    if rec is None:
        return True
    if rec.get("status") != "done" or rec.get("config_hash") != plan.config_hash(a, w):
        return True
    if rec.get("epochs_done", 0) < plan.epochs:
        return True
    return not all(os.path.exists(p) for p in rec["paths"].values())


def _accuracy_rows(plan: SweepPlan, manifest: dict) -> list:
    rows = []
    for a, w in plan.bit_pairs:
        rec = manifest["runs"].get(plan.run_name(a, w))
        if rec is None or rec.get("status") != "done":
            continue
        _, _, _, _, _, log = trainer.load_checkpoint(rec["paths"]["checkpoint"])
        for i in range(min(len(log), plan.epochs)):
            rows.append(
                [
                    plan.run_name(a, w),
                    a,
                    w,
                    rec["seed"],
                    log.epoch[i],
                    container.format_float(log.lr[i]),
                    container.format_float(log.train_loss[i]),
                    container.format_float(log.test_error[i]),
                ]
            )
    return rows


def _hardware_rows(plan: SweepPlan, manifest: dict) -> list:
    budget = hwsim.board_preset(plan.board)
    costs = hwsim.logic_costs()
    rows = []
    for a, w in plan.bit_pairs:
        rec = manifest["runs"].get(plan.run_name(a, w))
        if rec is None or rec.get("status") != "done":
            continue
        inet = streamline.load_integer_network(rec["paths"]["integer"])
        for pe, simd in plan.fold_pairs:
            report = hwsim.simulate(inet, pe, simd, budget=budget, clock_mhz=plan.clock_mhz, costs=costs)
            rows.append(report.csv_row())
    return rows


def _write_csv(path: str, columns, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


@dataclass
class SweepResult:
    manifest: dict
    accuracy_csv: str
    hardware_csv: str
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_sweep(plan: SweepPlan, parallel: int = 0) -> SweepResult:
    """Execute every pending grid point, then rebuild the master CSVs."""
    os.makedirs(plan.out_dir, exist_ok=True)
    manifest = _load_manifest(plan.out_dir)
    pending = [(a, w) for a, w in plan.bit_pairs if _needs_run(plan, manifest, a, w)]
    payloads = [_point_payload(plan, manifest, a, w) for a, w in pending]
    if parallel and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            records = list(pool.map(run_point, payloads))
    else:
        records = [run_point(p) for p in payloads]
    for (a, w), record in zip(pending, records):
        manifest["runs"][plan.run_name(a, w)] = record
    _write_manifest(plan.out_dir, manifest)

    accuracy_path = os.path.join(plan.out_dir, ACCURACY_CSV)
    hardware_path = os.path.join(plan.out_dir, HARDWARE_CSV)
    _write_csv(accuracy_path, ACCURACY_COLUMNS, _accuracy_rows(plan, manifest))
    _write_csv(hardware_path, hwsim.CSV_COLUMNS, _hardware_rows(plan, manifest))

    failures = [
        (name, rec.get("error", ""))
        for name, rec in sorted(manifest["runs"].items())
        if rec.get("status") != "done"
    ]
    return SweepResult(manifest=manifest, accuracy_csv=accuracy_path, hardware_csv=hardware_path, failures=failures)


def read_report_csv(path: str) -> list[dict]:
    """Re-parse a CLI-emitted CSV (round-trip schema check lives on this)."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
