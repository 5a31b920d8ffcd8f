"""On-disk experiment records.

A record directory holds::

    config.toml      the config that produced it
    traces.csv       one row per (run, seed, epoch); run is "main" or "reference"
    curves.csv       one row per (seed, eps) on the test split
    summary.csv      one row per seed plus a "mean" row
    record.json      index: hash, status, files, mean summary

Every CSV starts with a ``schema_version`` column. Reals are written with 17
significant digits so they reload bit-exactly; missing values are empty.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..metrics import RobustnessCurve, TransferDiagnostics, expected_robustness
from ..trainloop import EpochTrace
from .config import SCHEMA_VERSION

TRACE_FIELDS = [f.name for f in fields(EpochTrace)]
TRACE_HEADER = ["schema_version", "run", "seed", *TRACE_FIELDS]
CURVE_HEADER = ["schema_version", "seed", "eps", "accuracy"]
SUMMARY_HEADER = [
    "schema_version", "seed", "clean", "adv", "e_adv",
    "final_val_clean", "reference_val_clean", "severity", "delay_epoch", "eps_goal",
]


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    atomic_write(path, buf.getvalue())


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        if r.get("schema_version") != str(SCHEMA_VERSION):
            raise ConfigError(f"{path}: unsupported schema_version {r.get('schema_version')!r}")
    return rows


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class SeedResult:
    seed: int
    trace: list[EpochTrace]
    reference_trace: list[EpochTrace]
    curve: RobustnessCurve | None = None
    diagnostics: TransferDiagnostics | None = None

    @property
    def clean(self) -> float:
        return self.curve.clean

    @property
    def adv(self) -> float:
        return self.curve.adversarial

    @property
    def e_adv(self) -> float:
        return expected_robustness(self.curve) if len(self.curve.eps_grid) > 1 else self.curve.clean


@dataclass
class ExperimentRecord:
    name: str
    config_hash: str
    directory: Path
    eps_goal: float
    num_classes: int
    epochs: int
    threshold: float
    results: list[SeedResult]
    status: str = "complete"
    error: str | None = None
    schedule_label: str = ""
    task_label: str = ""

    @property
    def complete(self) -> bool:
        return self.status == "complete"

    @property
    def chance(self) -> float:
        return 1.0 / self.num_classes

    def summary(self) -> dict:
        """Mean Clean / Adv. / E. adv. over seeds."""
        if not self.complete:
            raise ConfigError(f"record {self.name} is {self.status}")
        return {
            "clean": float(np.mean([r.clean for r in self.results])),
            "adv": float(np.mean([r.adv for r in self.results])),
            "e_adv": float(np.mean([r.e_adv for r in self.results])),
        }

    # -- writing ------------------------------------------------------------

    def write(self, config_text: str) -> None:
        d = self.directory
        d.mkdir(parents=True, exist_ok=True)
        atomic_write(d / "config.toml", config_text)
        rows = []
        for r in self.results:
            for run, trace in (("main", r.trace), ("reference", r.reference_trace)):
                rows += [[SCHEMA_VERSION, run, r.seed, *(getattr(t, f) for f in TRACE_FIELDS)] for t in trace]
        write_csv(d / "traces.csv", TRACE_HEADER, rows)
        files = ["config.toml", "traces.csv"]
        doc = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "config_hash": self.config_hash,
            "status": self.status,
            "error": self.error,
            "eps_goal": self.eps_goal,
            "num_classes": self.num_classes,
            "epochs": self.epochs,
            "delay_threshold": self.threshold,
            "schedule": self.schedule_label,
            "task": self.task_label,
            "seeds": [r.seed for r in self.results],
        }
        if self.complete:
            curve_rows = [
                [SCHEMA_VERSION, r.seed, e, a]
                for r in self.results
                for e, a in zip(r.curve.eps_grid, r.curve.accuracy)
            ]
            write_csv(d / "curves.csv", CURVE_HEADER, curve_rows)
            summary_rows = []
            for r in self.results:
                g = r.diagnostics
                summary_rows.append([
                    SCHEMA_VERSION, r.seed, r.clean, r.adv, r.e_adv, g.final_clean_acc,
                    r.reference_trace[-1].val_clean_acc, g.severity, g.delay_epoch, self.eps_goal,
                ])
            s = self.summary()
            summary_rows.append([SCHEMA_VERSION, "mean", s["clean"], s["adv"], s["e_adv"], None, None, None, None, self.eps_goal])
            write_csv(d / "summary.csv", SUMMARY_HEADER, summary_rows)
            files += ["curves.csv", "summary.csv"]
            doc["summary"] = s
        doc["files"] = files
        # record.json last: its presence with status "complete" marks a finished run
        atomic_write(d / "record.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _trace_row(r: dict) -> EpochTrace:
    return EpochTrace(int(r["epoch"]), *(float(r[f]) for f in TRACE_FIELDS[1:]))


def load_record(path) -> ExperimentRecord:
    """Load a record from its directory (or its ``record.json``)."""
    path = Path(path)
    d = path.parent if path.name == "record.json" else path
    doc = json.loads((d / "record.json").read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{d}: unsupported record schema {doc.get('schema_version')!r}")
    by_seed: dict[int, SeedResult] = {s: SeedResult(s, [], []) for s in doc["seeds"]}
    for r in read_csv(d / "traces.csv"):
        res = by_seed[int(r["seed"])]
        (res.trace if r["run"] == "main" else res.reference_trace).append(_trace_row(r))
    if doc["status"] == "complete":
        grids: dict[int, tuple[list, list]] = {s: ([], []) for s in by_seed}
        for r in read_csv(d / "curves.csv"):
            g = grids[int(r["seed"])]
            g[0].append(float(r["eps"]))
            g[1].append(float(r["accuracy"]))
        for r in read_csv(d / "summary.csv"):
            if r["seed"] == "mean":
                continue
            res = by_seed[int(r["seed"])]
            res.curve = RobustnessCurve(*grids[res.seed])
            delay = int(r["delay_epoch"]) if r["delay_epoch"] else None
            res.diagnostics = TransferDiagnostics(delay, float(r["final_val_clean"]), float(r["severity"]), float(r["eps_goal"]))
    return ExperimentRecord(
        name=doc["name"],
        config_hash=doc["config_hash"],
        directory=d,
        eps_goal=doc["eps_goal"],
        num_classes=doc["num_classes"],
        epochs=doc["epochs"],
        threshold=doc["delay_threshold"],
        results=list(by_seed.values()),
        status=doc["status"],
        error=doc.get("error"),
        schedule_label=doc.get("schedule", ""),
        task_label=doc.get("task", ""),
    )
