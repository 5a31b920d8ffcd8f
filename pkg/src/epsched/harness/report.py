"""Delay vs. final-accuracy report over a set of records."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ContractError
from ..metrics import pearson_correlation
from .config import SCHEMA_VERSION
from .records import ExperimentRecord, write_csv


@dataclass(frozen=True)
class DelayRow:
    name: str
    config_hash: str
    seed: int
    eps: float
    delay_epoch: int
    adapted: bool
    final_clean: float
    severity: float


@dataclass
class DelayReport:
    rows: list[DelayRow]
    correlation: float

    def write(self, path) -> None:
        cols = ["name", "config_hash", "seed", "eps", "delay_epoch", "adapted", "final_clean", "severity"]
        write_csv(path, ["schema_version", *cols], [[SCHEMA_VERSION, *(getattr(r, c) for c in cols)] for r in self.rows])


def delay_severity_report(records: list[ExperimentRecord]) -> DelayReport:
    """One row per (record, seed) and the Pearson correlation of delay with final clean accuracy.

    Records are deduplicated by config hash. A run that never crosses the
    delay threshold is given the run length as its delay (``adapted`` is 0).
    """
    seen: set[str] = set()
    rows: list[DelayRow] = []
    for rec in records:
        if not rec.complete or rec.config_hash in seen:
            continue
        seen.add(rec.config_hash)
        for r in rec.results:
            d = r.diagnostics
            rows.append(DelayRow(
                rec.name, rec.config_hash, r.seed, rec.eps_goal,
                rec.epochs if d.delay_epoch is None else d.delay_epoch,
                d.delay_epoch is not None, d.final_clean_acc, d.severity,
            ))
    if len(seen) < 3:
        raise ContractError(f"need at least 3 distinct complete records, got {len(seen)}")
    return DelayReport(rows, pearson_correlation([r.delay_epoch for r in rows], [r.final_clean for r in rows]))
