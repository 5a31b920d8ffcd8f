import json
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from epsched import trainloop
from epsched.errors import ConfigError, ContractError
from epsched.harness import (
    ExperimentConfig,
    delay_severity_report,
    dump_config,
    emit_curves,
    load_config,
    load_record,
    matrix,
    run,
    save_config,
)
from epsched.harness.records import read_csv
from epsched.harness.runner import MatrixRow, winner_counts
from epsched.metrics import RobustnessCurve, eps_grid, expected_robustness
from epsched.trainloop import OptimizerConfig, TrainingDiverged

SMALL_TASK = {"num_classes": 4, "samples_per_class": 20, "class_separation": 0.2, "noise_scale": 0.03}


def small(**kw) -> ExperimentConfig:
    base = ExperimentConfig.from_dict({
        "name": "small",
        "task": SMALL_TASK,
        "schedule": "scheduler",
        "eps": 0.04,
        "epochs": 4,
        "seeds": [0, 1],
        "hidden_dims": [16, 8],
        "pretrain": {"epochs": 3, "source_samples_per_class": 20},
    })
    return replace(base, **kw)


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("out")


@pytest.fixture(scope="module")
def record(out_root):
    return run(small(), out_root)


# -- config -------------------------------------------------------------------


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.task_spec().class_separation == 0.09
    assert cfg.schedule_spec().T1 == 12 and cfg.schedule_spec().T2 == 37
    assert cfg.threshold() == 0.5
    assert cfg.attack_config().steps == 7 and cfg.train_config().eval_steps == 10


def test_toml_round_trip(tmp_path):
    cfg = small(schedule={"variant": "two_hinge", "T1": 1, "T2": 3}, delay_threshold=0.3,
                optimizer=OptimizerConfig(learning_rate=0.01))
    path = tmp_path / "c.toml"
    save_config(cfg, path)
    back = load_config(path)
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert dump_config(back) == path.read_text()


def test_empty_file_is_valid(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("")
    assert load_config(path) == ExperimentConfig()


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"nmae": "x"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"optimizer": {"lr": 0.1}})
    path = tmp_path / "bad.toml"
    path.write_text("name = ")
    with pytest.raises(ConfigError):
        load_config(path)


def test_hash_tracks_numerics_only():
    cfg = small()
    assert replace(cfg, name="other").config_hash() == cfg.config_hash()
    assert replace(cfg, eval_step=0.02).config_hash() != cfg.config_hash()
    assert replace(cfg, seeds=(0,)).config_hash() != cfg.config_hash()
    # named and numeric spellings of the same budget hash the same
    assert replace(cfg, eps="moderate").config_hash() == cfg.config_hash()


def test_matrix_cells():
    cfg = small(matrix={"schedules": ["fix", "scheduler"], "tasks": ["easy", "medium", "hard"],
                        "eps": ["high"], "hinges": [[1, 2]]})
    cells = cfg.cells()
    assert len(cells) == 9
    assert {c.schedule_label() for c in cells} == {"fix", "scheduler", "T1=1,T2=2"}
    assert len({c.config_hash() for c in cells}) == 9
    assert all(not c.matrix for c in cells)


# -- run ----------------------------------------------------------------------


def test_record_files_and_schema(record):
    d = record.directory
    assert record.complete and len(record.results) == 2
    for name in ("traces.csv", "curves.csv", "summary.csv"):
        header = (d / name).read_text().splitlines()[0].split(",")
        assert header[0] == "schema_version"
    doc = json.loads((d / "record.json").read_text())
    assert doc["status"] == "complete" and doc["config_hash"] == record.config_hash
    assert load_config(d / "config.toml").config_hash() == record.config_hash


def test_summary_recomputable_from_files(record):
    d = record.directory
    curves: dict[int, tuple[list, list]] = {}
    for r in read_csv(d / "curves.csv"):
        e, a = curves.setdefault(int(r["seed"]), ([], []))
        e.append(float(r["eps"]))
        a.append(float(r["accuracy"]))
    assert all(len(e) == len(eps_grid(0.04, 0.01)) for e, _ in curves.values())
    summary = {r["seed"]: r for r in read_csv(d / "summary.csv")}
    traces = read_csv(d / "traces.csv")
    for seed, (e, a) in curves.items():
        row = summary[str(seed)]
        c = RobustnessCurve(e, a)
        assert float(row["clean"]) == a[0]
        assert float(row["adv"]) == a[-1]
        assert float(row["e_adv"]) == expected_robustness(c)
        main = [t for t in traces if t["run"] == "main" and int(t["seed"]) == seed]
        ref = [t for t in traces if t["run"] == "reference" and int(t["seed"]) == seed]
        assert float(row["final_val_clean"]) == float(main[-1]["val_clean_acc"])
        assert float(row["severity"]) == float(ref[-1]["val_clean_acc"]) - float(main[-1]["val_clean_acc"])
    mean = summary["mean"]
    assert float(mean["clean"]) == np.mean([a[0] for _, a in curves.values()])
    assert float(mean["e_adv"]) == np.mean([expected_robustness(RobustnessCurve(*c)) for c in curves.values()])


def test_load_record_round_trip(record):
    back = load_record(record.directory)
    assert back.summary() == record.summary()
    for a, b in zip(back.results, record.results):
        assert a.trace == b.trace and a.reference_trace == b.reference_trace
        assert a.curve == b.curve and a.diagnostics == b.diagnostics


def test_rerun_reuses_record(record, out_root):
    before = {p.name: p.read_bytes() for p in record.directory.iterdir()}
    again = run(small(), out_root)
    assert again.directory == record.directory
    assert {p.name: p.read_bytes() for p in record.directory.iterdir()} == before


def test_fresh_rerun_is_byte_identical(record, tmp_path):
    other = run(small(), tmp_path)
    for name in ("traces.csv", "curves.csv", "summary.csv", "record.json", "config.toml"):
        assert (other.directory / name).read_bytes() == (record.directory / name).read_bytes()


def test_zero_budget_adv_equals_clean(out_root):
    rec = run(small(eps=0.0, seeds=(0,)), out_root)
    r = rec.results[0]
    assert r.curve.eps_grid == (0.0,)
    assert r.adv == r.clean == r.e_adv
    assert r.reference_trace == r.trace


def test_divergence_persists_partial_record(tmp_path, monkeypatch):
    real = trainloop.loss_and_param_grads
    calls = {"n": 0}

    def flaky(state, x, y):
        calls["n"] += 1
        loss, grads = real(state, x, y)
        if calls["n"] > 3:
            grads[0][0, 0] = np.nan
        return loss, grads

    monkeypatch.setattr(trainloop, "loss_and_param_grads", flaky)
    cfg = small(seeds=(0,))
    with pytest.raises(TrainingDiverged):
        run(cfg, tmp_path)
    rec = load_record(next((tmp_path / "runs").iterdir()))
    assert rec.status == "diverged" and not rec.complete
    assert len(rec.results[0].trace) >= 1
    with pytest.raises(ConfigError):
        rec.summary()
    monkeypatch.setattr(trainloop, "loss_and_param_grads", real)
    assert run(cfg, tmp_path).complete


# -- matrix -------------------------------------------------------------------


def test_matrix_rows_and_winners(out_root):
    cfg = small(name="m", seeds=(0,), epochs=3,
                matrix={"schedules": ["fix", "scheduler"], "tasks": [SMALL_TASK, dict(SMALL_TASK, class_separation=0.1)],
                        "eps": [0.04]})
    res = matrix(cfg, out_root)
    assert len(res.rows) == 4 and all(r.status == "complete" for r in res.rows)
    rows = read_csv(res.directory / "matrix.csv")
    assert len(rows) == 4 and list(rows[0])[0] == "schema_version"
    wins = [w for w in res.winners if w["metric"] == "e_adv"]
    assert sum(w["wins"] for w in wins) <= 2 and all(w["groups"] == 2 for w in wins)


def test_matrix_failed_cell_is_marked(out_root):
    cfg = small(name="f", seeds=(0,), epochs=3, matrix={"schedules": ["fix", "scheduler"], "tasks": [SMALL_TASK, "nope"]})
    res = matrix(cfg, out_root)
    status = {(r.schedule, r.task): r.status for r in res.rows}
    assert status[("fix", "nope")] == "failed" and "ConfigError" in res.rows[1].error
    assert sum(s == "complete" for s in status.values()) == 2


def test_winner_counts_ties_and_proportions():
    def row(s, t, e):
        return MatrixRow(s, t, "high", "complete", clean=0.5, adv=0.1, e_adv=e)

    rows = [row("a", "x", 0.3), row("b", "x", 0.2), row("a", "y", 0.2), row("b", "y", 0.2),
            row("a", "z", 0.1), MatrixRow("b", "z", "high", "failed")]
    w = {x["schedule"]: x for x in winner_counts(rows) if x["metric"] == "e_adv"}
    assert w["a"]["wins"] == 1 and w["b"]["wins"] == 0
    assert w["a"]["groups"] == 2 and w["a"]["proportion"] == 0.5


# -- figures and reports -------------------------------------------------------


def test_emit_csv(record, tmp_path):
    paths = emit_curves(record, "csv", tmp_path)
    curve = read_csv(tmp_path / "curve.csv")
    assert len(curve) == len(eps_grid(record.eps_goal, 0.01))
    assert float(curve[0]["value"]) == np.mean([r.clean for r in record.results])
    epochs = read_csv(tmp_path / "epochs.csv")
    assert len(epochs) == record.epochs * 3
    first = {p: p.read_bytes() for p in paths}
    emit_curves(record, "csv", tmp_path)
    assert {p: p.read_bytes() for p in paths} == first


def test_emit_svg(record, tmp_path):
    (path,) = emit_curves(record, "svg", tmp_path)
    root = ET.fromstring(path.read_text())
    assert root.tag.endswith("svg")
    text = path.read_bytes()
    emit_curves(record, "svg", tmp_path)
    assert path.read_bytes() == text


def test_emit_rejects_bad_input(record, tmp_path):
    with pytest.raises(ConfigError):
        emit_curves(record, "png", tmp_path)
    partial = replace(record, status="diverged")
    with pytest.raises(ConfigError):
        emit_curves(partial, "csv", tmp_path)


def _variant(record, tag, delays, finals):
    results = [
        replace(r, diagnostics=replace(r.diagnostics, delay_epoch=d, final_clean_acc=f))
        for r, d, f in zip(record.results, delays, finals)
    ]
    return replace(record, config_hash=tag * 64, name=tag, results=results)


def test_delay_report(record, tmp_path):
    a = _variant(record, "a", [0, 1], [0.9, 0.8])
    with pytest.raises(ContractError):
        delay_severity_report([a, a, _variant(record, "b", [2, 2], [0.6, 0.7])])
    recs = [a, a, _variant(record, "b", [2, 2], [0.6, 0.7]), _variant(record, "c", [3, None], [0.4, 0.3])]
    rep = delay_severity_report(recs)
    assert len(rep.rows) == 6
    xs = [0, 1, 2, 2, 3, record.epochs]
    ys = [0.9, 0.8, 0.6, 0.7, 0.4, 0.3]
    assert [r.delay_epoch for r in rep.rows] == xs
    assert [r.adapted for r in rep.rows] == [True] * 5 + [False]
    assert rep.correlation == pytest.approx(float(np.corrcoef(xs, ys)[0, 1]), abs=1e-12)
    rep.write(tmp_path / "delay.csv")
    rows = read_csv(tmp_path / "delay.csv")
    assert len(rows) == 6 and list(rows[0])[0] == "schema_version"


def test_delay_report_skips_incomplete(record):
    recs = [_variant(record, t, [0, 1], [0.9, 0.8]) for t in "abc"]
    recs[2] = replace(recs[2], status="diverged")
    with pytest.raises(ContractError):
        delay_severity_report(recs)
