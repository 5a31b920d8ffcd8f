"""Running experiments and experiment matrices."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .. import tasks
from ..metrics import accuracy_curve, transfer_diagnostics
from ..models import ModelSpec, load_checkpoint, pretrain_backbone, save_checkpoint
from ..schedule import preset
from ..trainloop import TrainingDiverged, derive_seed, run_rft
from .config import SCHEMA_VERSION, ExperimentConfig, dump_config
from .records import ExperimentRecord, SeedResult, atomic_write, load_record, write_csv

log = logging.getLogger(__name__)

# seed offset for the test-split robustness curve (trainloop uses 11-15)
SEED_CURVE = 16
# a clean-accuracy mean within this many points of 1/K is flagged near-chance
NEAR_CHANCE_MARGIN = 0.05


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _cell_hash(cell: ExperimentConfig) -> str:
    """Config hash, or a hash of the raw fields when the config does not resolve."""
    try:
        return cell.config_hash()
    except Exception:
        return _hash(cell.to_dict())


def backbone_key(cfg: ExperimentConfig) -> str:
    src = cfg.source_task_spec()
    return _hash({
        "source": src.to_dict(),
        "model": {"input_dim": src.input_dim, "hidden_dims": list(cfg.hidden_dims), "num_classes": src.num_classes},
        "optimizer": asdict(cfg.pretrain_optimizer),
        "epochs": cfg.pretrain.epochs,
        "seed": cfg.pretrain.seed,
        "eps": cfg.pretrain.eps,
        "batch_size": cfg.train.batch_size,
    })


def load_backbone(cfg: ExperimentConfig, out_root: Path):
    """Pretrained backbone for ``cfg``, from the cache under ``out_root/backbones`` when present."""
    path = Path(out_root) / "backbones" / f"{backbone_key(cfg)}.json"
    if path.exists():
        return load_checkpoint(path)
    src = cfg.source_task_spec()
    spec = ModelSpec(src.input_dim, cfg.hidden_dims, src.num_classes)
    state = pretrain_backbone(
        spec, tasks.generate(src), cfg.pretrain.epochs, cfg.pretrain_optimizer,
        seed=cfg.pretrain.seed, batch_size=cfg.train.batch_size, eps=cfg.pretrain.eps,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{id(state)}")
    save_checkpoint(state, tmp)
    tmp.replace(path)
    return state


def record_dir(cfg: ExperimentConfig, out_root: Path) -> Path:
    return Path(out_root) / "runs" / f"{cfg.name}-{cfg.config_hash()[:12]}"


def run(cfg: ExperimentConfig, out_root) -> ExperimentRecord:
    """Run every seed of ``cfg`` and persist the record; reuse a finished record with the same hash.

    On divergence the seeds finished so far and the partial trace are written
    with status ``diverged`` before :class:`TrainingDiverged` propagates.
    """
    if cfg.matrix:
        raise ValueError("config has a [matrix] table; use matrix() instead")
    out_root = Path(out_root)
    h = cfg.config_hash()
    d = record_dir(cfg, out_root)
    if (d / "record.json").exists():
        old = load_record(d)
        if old.complete and old.config_hash == h:
            log.info("reusing %s", d)
            return old

    ds = tasks.generate(cfg.task_spec())
    backbone = load_backbone(cfg, out_root)
    schedule = cfg.schedule_spec()
    eps = schedule.eps_goal
    attack = cfg.attack_config()
    train = cfg.train_config()
    rec = ExperimentRecord(
        name=cfg.name, config_hash=h, directory=d, eps_goal=eps, num_classes=ds.num_classes,
        epochs=schedule.total_epochs, threshold=cfg.threshold(), results=[],
        schedule_label=cfg.schedule_label(),
        task_label=cfg.task if isinstance(cfg.task, str) else "inline",
    )
    text = dump_config(cfg)
    for seed in cfg.seeds:
        try:
            state, trace = run_rft(backbone, ds, schedule, attack, cfg.optimizer, seed, train)
            if cfg.reference and eps > 0:
                _, ref = run_rft(backbone, ds, preset("fix", 0.0, cfg.epochs), attack, cfg.optimizer, seed, train)
            else:
                ref = trace
        except TrainingDiverged as exc:
            rec.results.append(SeedResult(seed, exc.trace, []))
            rec.status, rec.error = "diverged", f"seed {seed}: {exc}"
            rec.write(text)
            raise
        curve_attack = replace(attack, steps=cfg.attack.eval_steps, seed=derive_seed(seed, SEED_CURVE))
        curve = accuracy_curve(state, ds.test_x, ds.test_y, eps, cfg.eval_step, curve_attack)
        diag = transfer_diagnostics(trace, ref[-1].val_clean_acc, eps, cfg.threshold())
        rec.results.append(SeedResult(seed, trace, ref, curve, diag))
    rec.write(text)
    return rec


# -- matrix -----------------------------------------------------------------


@dataclass
class MatrixRow:
    schedule: str
    task: str
    eps: str
    status: str
    clean: float | None = None
    adv: float | None = None
    e_adv: float | None = None
    near_chance: bool | None = None
    config_hash: str = ""
    record: str = ""
    error: str = ""


@dataclass
class MatrixResult:
    rows: list[MatrixRow]
    winners: list[dict]
    directory: Path

    def records(self) -> dict[tuple[str, str, str], ExperimentRecord]:
        return {(r.schedule, r.task, r.eps): load_record(r.record) for r in self.rows if r.status == "complete"}


def _run_cell(cell: ExperimentConfig, out_root: str) -> MatrixRow:
    label = (cell.schedule_label(), str(cell.task), str(cell.eps))
    try:
        rec = run(cell, out_root)
    except Exception as exc:  # a failed cell is reported, the matrix continues
        log.warning("cell %s failed: %s", label, exc)
        h = _cell_hash(cell)
        return MatrixRow(*label, status="failed", config_hash=h,
                         record=str(Path(out_root) / "runs" / f"{cell.name}-{h[:12]}"), error=f"{type(exc).__name__}: {exc}")
    s = rec.summary()
    return MatrixRow(
        *label, status="complete", clean=s["clean"], adv=s["adv"], e_adv=s["e_adv"],
        near_chance=s["clean"] <= rec.chance + NEAR_CHANCE_MARGIN,
        config_hash=rec.config_hash, record=str(rec.directory),
    )


def winner_counts(rows: list[MatrixRow]) -> list[dict]:
    """Per metric: how often each schedule has the strictly best mean in a (task, eps) group.

    Ties award no win. ``proportion`` divides by the number of groups where
    every schedule finished.
    """
    schedules = list(dict.fromkeys(r.schedule for r in rows))
    groups: dict[tuple[str, str], list[MatrixRow]] = {}
    for r in rows:
        groups.setdefault((r.task, r.eps), []).append(r)
    usable = [g for g in groups.values() if all(r.status == "complete" for r in g)]
    out = []
    for metric in ("clean", "adv", "e_adv"):
        wins = dict.fromkeys(schedules, 0)
        for g in usable:
            best = max(getattr(r, metric) for r in g)
            top = [r.schedule for r in g if getattr(r, metric) == best]
            if len(top) == 1:
                wins[top[0]] += 1
        for s in schedules:
            out.append({
                "metric": metric, "schedule": s, "wins": wins[s], "groups": len(usable),
                "proportion": wins[s] / len(usable) if usable else 0.0,
            })
    return out


def matrix(cfg: ExperimentConfig, out_root, workers: int = 1) -> MatrixResult:
    """Run every cell of ``cfg.matrix`` and write the comparison tables."""
    cells = cfg.cells()
    out_root = Path(out_root)
    if workers > 1 and len(cells) > 1:
        # pretrain shared backbones once, up front, so workers only read the cache
        for key_cfg in {backbone_key(c): c for c in cells}.values():
            load_backbone(key_cfg, out_root)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, cells, [str(out_root)] * len(cells)))
    else:
        rows = [_run_cell(c, str(out_root)) for c in cells]
    winners = winner_counts(rows)
    d = out_root / "matrix" / f"{cfg.name}-{_hash([_cell_hash(c) for c in cells])[:12]}"
    d.mkdir(parents=True, exist_ok=True)
    cols = ["schedule", "task", "eps", "status", "clean", "adv", "e_adv", "near_chance", "config_hash", "record", "error"]
    write_csv(d / "matrix.csv", ["schema_version", *cols],
              [[SCHEMA_VERSION, *(getattr(r, c) for c in cols)] for r in rows])
    wcols = ["metric", "schedule", "wins", "groups", "proportion"]
    write_csv(d / "winners.csv", ["schema_version", *wcols], [[SCHEMA_VERSION, *(w[c] for c in wcols)] for w in winners])
    doc = {"schema_version": SCHEMA_VERSION, "name": cfg.name, "rows": [asdict(r) for r in rows], "winners": winners}
    atomic_write(d / "matrix.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return MatrixResult(rows, winners, d)
