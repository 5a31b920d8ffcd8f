"""Experiment configuration files.

A config is a TOML document. Top-level keys describe one experiment; sub-tables
hold the model, attack, optimizer, training and pretraining settings. A
``[matrix]`` table turns the file into a grid over schedules x tasks x eps.

    name = "hard-fix"
    task = "hard"              # suite name, or a [task] table of SyntheticTaskSpec fields
    schedule = "scheduler"     # preset name, or a [schedule] table {variant, T1, T2}
    eps = "high"               # named budget or a number in input units
    epochs = 50
    seeds = [0, 1, 2, 3, 4]
    eval_step = 0.01           # robustness-curve grid spacing
    # delay_threshold = 0.5    # default: 4 / num_classes

    [optimizer]
    learning_rate = 0.05

    [matrix]
    schedules = ["fix", "scheduler"]
    tasks = ["easy", "medium", "hard"]
    eps = ["moderate", "high"]
    hinges = [[0, 12], [5, 25]]    # extra two_hinge schedules as (T1, T2) pairs

Every field has a default, so an empty file is a valid config.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli
import tomli_w

from .. import tasks
from ..attacks import EVAL_STEPS, TRAIN_STEPS, AttackConfig
from ..errors import ConfigError
from ..models import ModelSpec
from ..schedule import ScheduleSpec, preset
from ..trainloop import OptimizerConfig, TrainConfig

SCHEMA_VERSION = 1
# fine-tuning peak learning rate picked during task calibration
FINETUNE_LR = 0.05


@dataclass(frozen=True)
class AttackSettings:
    train_steps: int = TRAIN_STEPS
    eval_steps: int = EVAL_STEPS
    random_start: bool = True


@dataclass(frozen=True)
class PretrainSettings:
    epochs: int = 30
    seed: int = 0
    source_classes: int = 10
    source_samples_per_class: int = 100
    source_seed: int = 1000
    # > 0 pretrains adversarially (robust backbone)
    eps: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    task: str | dict = "hard"
    schedule: str | dict = "scheduler"
    eps: str | float = "moderate"
    epochs: int = 50
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    eval_step: float = 0.01
    delay_threshold: float | None = None
    reference: bool = True
    hidden_dims: tuple[int, ...] = (64, 32)
    attack: AttackSettings = AttackSettings()
    optimizer: OptimizerConfig = OptimizerConfig(learning_rate=FINETUNE_LR)
    train: TrainConfig = TrainConfig()
    pretrain: PretrainSettings = PretrainSettings()
    pretrain_optimizer: OptimizerConfig = OptimizerConfig()
    matrix: dict = field(default_factory=dict)

    # -- resolution ---------------------------------------------------------

    def task_spec(self) -> tasks.SyntheticTaskSpec:
        if isinstance(self.task, str):
            return tasks.suite_task(self.task)
        return tasks.SyntheticTaskSpec(**self.task)

    def eps_value(self) -> float:
        return tasks.eps_preset(self.eps)

    def schedule_spec(self) -> ScheduleSpec:
        eps = self.eps_value()
        if isinstance(self.schedule, str):
            return preset(self.schedule, eps, self.epochs)
        s = dict(self.schedule)
        s.pop("label", None)
        if "preset" in s:
            return preset(s.pop("preset"), eps, self.epochs, **s)
        return ScheduleSpec(eps_goal=eps, total_epochs=self.epochs, **s)

    def schedule_label(self) -> str:
        if isinstance(self.schedule, str):
            return self.schedule
        if "label" in self.schedule:
            return str(self.schedule["label"])
        s = self.schedule_spec()
        return f"{s.variant}({s.T1},{s.T2})" if s.variant == "two_hinge" else s.variant

    def model_spec(self, num_classes: int) -> ModelSpec:
        return ModelSpec(self.task_spec().input_dim, self.hidden_dims, num_classes)

    def attack_config(self) -> AttackConfig:
        return AttackConfig(epsilon=0.0, steps=self.attack.train_steps, random_start=self.attack.random_start)

    def train_config(self) -> TrainConfig:
        return replace(self.train, eval_steps=self.attack.eval_steps)

    def threshold(self) -> float:
        if self.delay_threshold is not None:
            return self.delay_threshold
        return min(1.0, 4.0 / self.task_spec().num_classes)

    def source_task_spec(self) -> tasks.SyntheticTaskSpec:
        p = self.pretrain
        return tasks.source_spec(self.task_spec(), p.source_classes, p.source_samples_per_class, p.source_seed)

    def resolved(self) -> dict:
        """Everything that affects numerics, fully expanded."""
        return {
            "schema_version": SCHEMA_VERSION,
            "task": self.task_spec().to_dict(),
            "schedule": self.schedule_spec().to_dict(),
            "eps": self.eps_value(),
            "seeds": list(self.seeds),
            "eval_step": self.eval_step,
            "delay_threshold": self.threshold(),
            "reference": self.reference,
            "hidden_dims": list(self.hidden_dims),
            "attack": asdict(self.attack),
            "optimizer": asdict(self.optimizer),
            "train": asdict(self.train_config()),
            "pretrain": asdict(self.pretrain),
            "pretrain_optimizer": asdict(self.pretrain_optimizer),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- matrix -------------------------------------------------------------

    def cells(self) -> list["ExperimentConfig"]:
        """Expand ``matrix`` into single-experiment configs (schedule-major order)."""
        if not self.matrix:
            return [self]
        m = self.matrix
        schedules: list = list(m.get("schedules", [self.schedule]))
        for t1, t2 in m.get("hinges", []):
            schedules.append({"variant": "two_hinge", "T1": int(t1), "T2": int(t2), "label": f"T1={t1},T2={t2}"})
        out = []
        for sch, task, eps in itertools.product(schedules, m.get("tasks", [self.task]), m.get("eps", [self.eps])):
            cell = replace(self, schedule=sch, task=task, eps=eps, matrix={})
            out.append(replace(cell, name=f"{self.name}-{cell.schedule_label()}-{_label(task)}-{_label(eps)}"))
        if not out:
            raise ConfigError("matrix has no cells")
        return out

    # -- (de)serialization --------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "task": self.task,
            "schedule": self.schedule,
            "eps": self.eps,
            "epochs": self.epochs,
            "seeds": list(self.seeds),
            "eval_step": self.eval_step,
            "reference": self.reference,
            "hidden_dims": list(self.hidden_dims),
            "attack": asdict(self.attack),
            "optimizer": asdict(self.optimizer),
            "train": {"batch_size": self.train.batch_size, "eval_every": self.train.eval_every},
            "pretrain": asdict(self.pretrain),
            "pretrain_optimizer": asdict(self.pretrain_optimizer),
        }
        if self.delay_threshold is not None:
            d["delay_threshold"] = self.delay_threshold
        if self.matrix:
            d["matrix"] = self.matrix
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        subtables = {
            "attack": AttackSettings,
            "optimizer": OptimizerConfig,
            "train": TrainConfig,
            "pretrain": PretrainSettings,
            "pretrain_optimizer": OptimizerConfig,
        }
        for key, typ in subtables.items():
            if key in kw:
                base = getattr(cls(), key)
                try:
                    kw[key] = replace(base, **kw[key])
                except TypeError as exc:
                    raise ConfigError(f"bad [{key}] table: {exc}") from exc
        if "seeds" in kw:
            kw["seeds"] = tuple(int(s) for s in kw["seeds"])
        if "hidden_dims" in kw:
            kw["hidden_dims"] = tuple(int(h) for h in kw["hidden_dims"])
        return cls(**kw)


def _label(v) -> str:
    if isinstance(v, dict):
        return "inline"
    return str(v).replace("/", "_")


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            return ExperimentConfig.from_dict(tomli.load(fh))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
