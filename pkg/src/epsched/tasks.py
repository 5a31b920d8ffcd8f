"""Synthetic Gaussian-mixture classification tasks on [0, 1]^d.

Class centers sit on a lattice inside [0.2, 0.8] along a set of informative
coordinates; the remaining coordinates carry noise only. The lattice and the
informative coordinates come from ``geometry_seed``, which a source task and
its downstream tasks share, so a backbone pretrained on the source reads the
coordinates the downstream task needs.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

RELATIONS = ("shared_features", "rotated_features", "relabeled")
SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
LATTICE_LOW, LATTICE_HIGH = 0.2, 0.8
MIN_CODE_DISTANCE = 3


@dataclass(frozen=True)
class SyntheticTaskSpec:
    input_dim: int = 16
    num_classes: int = 8
    class_separation: float = 0.2
    samples_per_class: int = 100
    noise_scale: float = 0.05
    seed: int = 0
    relation_to_source: str = "shared_features"
    informative_dims: int = 8
    geometry_seed: int = 0
    source_separation: float = 0.3

    def __post_init__(self):
        if self.relation_to_source not in RELATIONS:
            raise ConfigError(f"relation_to_source must be one of {RELATIONS}")
        if self.class_separation <= 0 or self.noise_scale < 0:
            raise ConfigError("class_separation must be positive and noise_scale non-negative")
        if not 0 < self.informative_dims <= self.input_dim:
            raise ConfigError("informative_dims must lie in (0, input_dim]")
        if self.samples_per_class < 5:
            raise ConfigError("need at least 5 samples per class for three splits")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    spec: SyntheticTaskSpec
    num_classes: int
    centers: np.ndarray
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    split_index: dict = field(default_factory=dict)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return getattr(self, f"{name}_x"), getattr(self, f"{name}_y")


def _codes(rng: np.random.Generator, k: int, dims: int, min_distance: int = MIN_CODE_DISTANCE) -> np.ndarray:
    """``k`` distinct binary codes of length ``dims`` with pairwise Hamming distance >= ``min_distance``."""
    dist = min(min_distance, dims)
    for _ in range(200):
        chosen: list[np.ndarray] = []
        for cand in rng.integers(0, 2, size=(64 * k, dims)):
            if all(np.count_nonzero(cand != c) >= dist for c in chosen):
                chosen.append(cand)
                if len(chosen) == k:
                    return np.array(chosen, dtype=np.float64)
    raise ConfigError(f"cannot pack {k} classes with Hamming distance {dist} into {dims} informative dims")


def _anchor(rng: np.random.Generator, dims: int, separation: float) -> np.ndarray:
    """A seeded lattice point (spacing ``separation``) whose hypercube fits in [0.2, 0.8]."""
    span = LATTICE_HIGH - LATTICE_LOW - separation
    if span < -1e-12:
        raise ConfigError(f"class_separation {separation} does not fit inside [0.2, 0.8]")
    n_levels = int(np.floor(max(span, 0.0) / separation + 1e-9)) + 1
    return LATTICE_LOW + separation * rng.integers(0, n_levels, size=dims)


def _geometry(spec: SyntheticTaskSpec) -> tuple[np.random.Generator, np.ndarray]:
    rng = np.random.default_rng([spec.geometry_seed, 0])
    coords = np.sort(rng.permutation(spec.input_dim)[: spec.informative_dims])
    return rng, coords


def _hypercube_centers(rng, k, dims, separation):
    return _anchor(rng, dims, separation) + separation * _codes(rng, k, dims)


def task_centers(spec: SyntheticTaskSpec) -> np.ndarray:
    """Class centers in R^d; non-informative coordinates sit at 0.5.

    Centers are corners of an axis-aligned hypercube of side
    ``class_separation``, so any two classes differ by exactly that amount
    in at least three informative coordinates.
    """
    geo_rng, coords = _geometry(spec)
    m = spec.informative_dims
    task_rng = np.random.default_rng([spec.geometry_seed, 1, spec.seed])
    if spec.relation_to_source == "relabeled":
        source = _hypercube_centers(geo_rng, max(spec.num_classes, 2), m, spec.source_separation)
        inner = source[task_rng.permutation(len(source))[: spec.num_classes]]
    else:
        inner = _hypercube_centers(task_rng, spec.num_classes, m, spec.class_separation)
        if spec.relation_to_source == "rotated_features":
            perm = task_rng.permutation(m)
            flip = task_rng.random(m) < 0.5
            inner = inner[:, perm]
            inner[:, flip] = 1.0 - inner[:, flip]
    centers = np.full((spec.num_classes, spec.input_dim), 0.5)
    centers[:, coords] = inner
    return centers


def generate(spec: SyntheticTaskSpec) -> Dataset:
    """Sample a seeded dataset with class-balanced, disjoint train/val/test splits."""
    centers = task_centers(spec)
    rng = np.random.default_rng([spec.seed, 2, spec.geometry_seed])
    n = spec.samples_per_class
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    parts: dict[str, list] = {"train": [], "val": [], "test": []}
    index: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for k, c in enumerate(centers):
        x = np.clip(c + spec.noise_scale * rng.standard_normal((n, spec.input_dim)), 0.0, 1.0)
        order = rng.permutation(n)
        cuts = {"train": order[:n_train], "val": order[n_train : n_train + n_val], "test": order[n_train + n_val :]}
        for name, sel in cuts.items():
            parts[name].append((x[sel], np.full(len(sel), k, dtype=np.int64)))
            index[name].extend(int(k * n + i) for i in sel)
    arrays = {}
    for name, chunks in parts.items():
        arrays[f"{name}_x"] = np.concatenate([c[0] for c in chunks])
        arrays[f"{name}_y"] = np.concatenate([c[1] for c in chunks])
    return Dataset(spec, spec.num_classes, centers, split_index=index, **arrays)


def source_spec(downstream: SyntheticTaskSpec, num_classes: int = 10, samples_per_class: int = 100, seed: int = 1000) -> SyntheticTaskSpec:
    """The pretraining task that shares geometry with ``downstream``."""
    return SyntheticTaskSpec(
        input_dim=downstream.input_dim,
        num_classes=num_classes,
        class_separation=downstream.source_separation,
        samples_per_class=samples_per_class,
        noise_scale=downstream.noise_scale,
        seed=seed,
        relation_to_source="relabeled",
        informative_dims=downstream.informative_dims,
        geometry_seed=downstream.geometry_seed,
        source_separation=downstream.source_separation,
    )


def export_csv(dataset: Dataset, path, split: str = "train") -> None:
    """One row per sample: the features, then the integer label."""
    x, y = dataset.split(split)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(x.shape[1])] + ["label"])
        for row, label in zip(x, y):
            w.writerow([format(v, ".17g") for v in row] + [int(label)])


def import_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    x = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64)
    y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return x, y


# Separations and noise were picked by seeded runs (see README, "Calibration")
# so that fixed-budget robust fine-tuning at "high" collapses to chance on the
# hard task and barely hurts the easy one.
SUITE_NOISE = 0.03
SUITE_SEPARATIONS = {"easy": 0.2, "medium": 0.11, "hard": 0.09}

# Budgets in input units, shared across the suite. The image-style labels are
# aliases for the named levels.
EPS_PRESETS = {"zero": 0.0, "low": 0.02, "moderate": 0.04, "high": 0.08}
EPS_ALIASES = {"0": "zero", "2/255": "low", "4/255": "moderate", "8/255": "high"}


def difficulty_suite(samples_per_class: int = 100, seed: int = 0) -> dict[str, SyntheticTaskSpec]:
    """Easy / medium / hard downstream specs that share one source task."""
    return {
        name: SyntheticTaskSpec(class_separation=sep, noise_scale=SUITE_NOISE, samples_per_class=samples_per_class, seed=seed)
        for name, sep in SUITE_SEPARATIONS.items()
    }


def suite_task(name: str) -> SyntheticTaskSpec:
    try:
        return difficulty_suite()[name]
    except KeyError:
        raise ConfigError(f"unknown task {name!r}; choose from {sorted(SUITE_SEPARATIONS)}") from None


def eps_preset(value) -> float:
    """Resolve a named budget ("high", "8/255", ...) or pass a number through."""
    if isinstance(value, str):
        key = EPS_ALIASES.get(value, value)
        if key not in EPS_PRESETS:
            raise ConfigError(f"unknown eps preset {value!r}; choose from {sorted(EPS_PRESETS)} or {sorted(EPS_ALIASES)}")
        return EPS_PRESETS[key]
    eps = float(value)
    if not 0 <= eps <= 1:
        raise ConfigError("eps must lie in [0, 1]")
    return eps
