import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqop.nn import FieldScaler
from seqop.operator_net import DeepONetConfig, DeepONetModel, InputScaling, build_model, forward
from seqop.pipeline import (DatasetBundle, DatasetError, ErrorReport, TrainingDiverged, evaluate,
                            export_report, generate_dataset, idw_sample, measure_speedup,
                            read_summary, rel_l2, select_cases, smoothed, split_dataset, train)
from seqop.pipeline.dataset import default_gen_config
from seqop.pipeline.evaluation import line_samples


def synthetic(n=50, seed=0, problem="heat"):
    """Fields that are a linear map of the history: a DeepONet can represent them exactly."""
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, 101))
    x = np.linspace(0.0, 1.0, 30)
    X = np.column_stack([x, np.zeros_like(x)])
    a, c = m[:, :50].mean(axis=1), m[:, 50:].mean(axis=1)
    F = a[:, None] * np.sin(np.pi * x)[None] + c[:, None] * x[None]
    return DatasetBundle(problem, m, X, F, np.full(n, 0.5), seed=seed, config={"kind": "synthetic"})


def small_model(variant="fnn", seed=0, width=40, hd=20):
    branch = (101, width, hd) if variant == "fnn" else (width, hd)
    return build_model(DeepONetConfig(variant, hd, branch, (2, width, hd)), seed)


@pytest.fixture(scope="module")
def heat_data():
    return generate_dataset("heat", 12, seed=5)


# ---- metric ------------------------------------------------------------------

def test_rel_l2_identities(rng):
    t = rng.normal(size=40) + 3.0
    assert rel_l2(t, t) == 0.0
    assert rel_l2(np.zeros_like(t), t) == 1.0
    assert abs(rel_l2(1.1 * t, t) - 0.1) <= 1e-12
    with pytest.raises(ValueError, match="all-zero"):
        rel_l2(t, np.zeros_like(t))
    with pytest.raises(ValueError):
        rel_l2(t[:-1], t)


def test_select_cases_examples():
    assert select_cases([0.3, 0.1, 0.2]) == (1, 2, 0)
    assert select_cases([0.5] * 7) == (0, 0, 0)
    e = np.random.default_rng(1).permutation(100) / 100.0
    _, med, _ = select_cases(e)
    assert e[med] == np.sort(e)[49]
    with pytest.raises(ValueError):
        select_cases([0.1, 0.2])


@given(st.lists(st.sampled_from([0.1, 0.2, 0.3, 0.4]) | st.floats(0, 1), min_size=3, max_size=40))
def test_select_cases_properties(errors):
    e = np.array(errors)
    b, m, w = select_cases(e)
    assert e[b] == e.min() and b == int(np.flatnonzero(e == e.min())[0])
    assert e[w] == e.max() and w == int(np.flatnonzero(e == e.max())[0])
    assert e[m] == np.sort(e)[math.ceil(e.size / 2) - 1]
    assert m == int(np.flatnonzero(e == e[m])[0])


def test_error_report_invariants():
    r = ErrorReport.from_errors([7, 3, 9, 4], [0.2, 0.05, 0.4, 0.1])
    assert r.min <= r.mean <= r.max and len(r.errors) == 4
    assert (r.best, r.median, r.worst) == (3, 4, 9)
    assert ErrorReport.from_dict(r.to_dict()) == r
    with pytest.raises(ValueError):
        ErrorReport.from_dict({**r.to_dict(), "format_version": 99})


# ---- dataset -----------------------------------------------------------------

def _fake(n):
    return DatasetBundle("heat", np.zeros((n, 101)), np.zeros((3, 2)), np.ones((n, 3)), np.ones(n))


def test_split_paper_sizes():
    tr, te = split_dataset(_fake(4000), 100, seed=0)
    assert (len(tr), len(te)) == (3900, 100)


@given(st.integers(2, 300), st.data(), st.integers(0, 2 ** 32 - 1))
def test_split_disjoint_exhaustive_deterministic(n, data, seed):
    k = data.draw(st.integers(1, n - 1))
    b = _fake(n)
    tr, te = split_dataset(b, k, seed)
    tr2, te2 = split_dataset(b, k, seed)
    assert np.array_equal(te.case_ids, te2.case_ids) and np.array_equal(tr.case_ids, tr2.case_ids)
    ids = np.concatenate([tr.case_ids, te.case_ids])
    assert np.array_equal(np.sort(ids), np.arange(n)) and len(te) == k


@pytest.mark.parametrize("k", [0, 10, -1])
def test_split_range(k):
    with pytest.raises(DatasetError):
        split_dataset(_fake(10), k, 0)


def test_bundle_validation():
    with pytest.raises(DatasetError, match="histories"):
        DatasetBundle("heat", np.zeros((2, 100)), np.zeros((3, 2)), np.ones((2, 3)), np.ones(2))
    with pytest.raises(DatasetError, match="fields"):
        DatasetBundle("heat", np.zeros((2, 101)), np.zeros((3, 2)), np.ones((2, 4)), np.ones(2))
    with pytest.raises(DatasetError, match="non-finite"):
        DatasetBundle("heat", np.zeros((2, 101)), np.zeros((3, 2)), np.full((2, 3), np.inf), np.ones(2))
    with pytest.raises(DatasetError, match="problem"):
        DatasetBundle("fluid", np.zeros((2, 101)), np.zeros((3, 2)), np.ones((2, 3)), np.ones(2))


def test_bundle_round_trip_and_layout(tmp_path, heat_data):
    heat_data.save(tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["dtype"] == "<f4" and man["n_cases"] == 12 and man["units"]["fields"] == "degC"
    raw = (tmp_path / "fields.bin").read_bytes()
    assert len(raw) == 4 * 12 * 301
    assert np.array_equal(np.frombuffer(raw, "<f4").reshape(12, 301), heat_data.fields)
    back = DatasetBundle.load(tmp_path)
    for name in ("histories", "coords", "fields", "times"):
        assert getattr(back, name).tobytes() == getattr(heat_data, name).tobytes()
    assert back.config == heat_data.config and back.seed == 5
    man["config"]["dt"] = 0.2
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(DatasetError, match="hash"):
        DatasetBundle.load(tmp_path)


def test_generation_independent_of_schedule(heat_data):
    par = generate_dataset("heat", 12, seed=5, jobs=2)
    assert par.fields.tobytes() == heat_data.fields.tobytes()
    assert par.histories.tobytes() == heat_data.histories.tobytes()
    # case i depends on (seed, i) only
    head = generate_dataset("heat", 4, seed=5)
    assert head.fields.tobytes() == heat_data.fields[:4].tobytes()


def test_generated_heat_cases_are_physical(heat_data):
    assert heat_data.coords.shape == (301, 2) and np.all(heat_data.coords[:, 1] == 0.0)
    assert np.all(heat_data.fields <= 1540.0 + 1e-3) and np.all(heat_data.times > 0)
    h = heat_data.load_history(0)
    assert h.kind == "flux" and np.array_equal(h.values.astype(np.float32), heat_data.histories[0])


def test_gen_config_rejects_unknown_keys():
    with pytest.raises(DatasetError, match="unknown"):
        default_gen_config("heat", mesh_target=10)


# ---- training ----------------------------------------------------------------

def test_tiny_operator_fits():
    res = train(small_model(), synthetic(), epochs=2000, lr=1e-3)
    assert res.final_loss < 1e-3
    assert res.final_loss <= res.initial_loss
    s = smoothed(res.losses, 100)
    assert np.all(np.diff(s) <= 0.0)


def test_zero_learning_rate_keeps_parameters():
    m = small_model("gru", width=6, hd=4)
    before = m.params.copy()
    train(m, synthetic(n=10), epochs=3, lr=0.0)
    assert all(m.params[k].tobytes() == before[k].tobytes() for k in m.params.names)


def test_training_is_bitwise_deterministic():
    runs = [train(small_model("lstm", width=6, hd=4), synthetic(n=20), epochs=4, batch=8,
                  seed=3, deterministic=True) for _ in range(2)]
    assert runs[0].model.params.equal(runs[1].model.params)
    assert runs[0].losses == runs[1].losses


def test_scaler_hygiene():
    data = synthetic(n=40)
    _, te = split_dataset(data, 10, seed=0)
    data.fields[te.case_ids[3]] += 50.0  # outlier seen only by the test view
    tr, te = split_dataset(data, 10, seed=0)
    m = small_model()
    train(m, tr, epochs=1)
    ref = InputScaling.fit(tr.coords, tr.histories, tr.fields)
    assert m.scaling == ref
    assert m.scaling.field.hi < float(data.fields.max())


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_aborts_with_checkpoint(tmp_path):
    with pytest.raises(TrainingDiverged) as info:
        train(small_model(), synthetic(), epochs=20, lr=1e30, checkpoint_dir=tmp_path,
              checkpoint_every=1)
    err = info.value
    assert err.last_good is not None and err.last_good.parent == tmp_path
    assert (err.last_good / "model.json").is_file() and str(err.last_good) in str(err)
    DeepONetModel.load(err.last_good)


def test_checkpoint_cadence_and_metadata(tmp_path):
    data = synthetic(n=10)
    res = train(small_model(), data, epochs=6, checkpoint_dir=tmp_path, checkpoint_every=2)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_0000002", "epoch_0000004",
                                                          "epoch_0000006"]
    md = res.model.metadata
    assert md["epochs_done"] == 6 and md["n_train"] == 10 and md["problem"] == "heat"
    assert md["data_config_hash"] == data.config_hash and md["final_loss"] == res.losses[-1]


def test_train_argument_errors():
    with pytest.raises(ValueError):
        train(small_model(), synthetic(n=4), epochs=0)
    with pytest.raises(ValueError):
        train(small_model(), synthetic(n=4), epochs=1, lr=-1.0)


def test_smoothed_window():
    x = np.arange(10.0)
    np.testing.assert_allclose(smoothed(x, 4), [1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5])
    assert np.array_equal(smoothed(x[:3], 4), x[:3])


# ---- evaluation and report -----------------------------------------------------

@pytest.fixture(scope="module")
def heat_eval(heat_data):
    tr, te = split_dataset(heat_data, 4, seed=0)
    m = build_model(DeepONetConfig("fnn", 8, (101, 16, 8), (2, 16, 8)), 0)
    train(m, tr, epochs=30)
    report, pred = evaluate(m, te)
    return m, te, report, pred


def test_evaluate_matches_metric(heat_eval):
    m, te, report, pred = heat_eval
    assert report.case_ids == [int(i) for i in te.case_ids]
    for e, p, t in zip(report.errors, pred, te.fields):
        assert e == rel_l2(p, t)
    assert report.config["problem"] == "heat"


def test_export_report_files(tmp_path, heat_eval):
    m, te, report, pred = heat_eval
    files = export_report(report, te, {"fnn": pred, "copy": pred}, tmp_path, svg=True)
    names = {p.name for p in files}
    for cid in {report.best, report.median, report.worst}:
        assert f"field_case_{cid}.csv" in names and f"line_{cid}.csv" in names
    assert {"errors.csv", "histogram.csv", "summary.json"} <= names
    assert any(n.endswith(".svg") for n in names)
    assert all(p.is_file() for p in files)

    with open(tmp_path / "errors.csv") as fh:
        rows = list(csv.DictReader(fh))
    ids = [int(r["case_id"]) for r in rows]
    assert sorted(ids) == sorted(report.case_ids) and len(set(ids)) == len(ids)
    e = np.array([float(r["rel_l2"]) for r in rows])
    back = read_summary(tmp_path / "summary.json")
    assert back == report
    for stat, val in (("mean", e.mean()), ("std", e.std()), ("min", e.min()), ("max", e.max())):
        assert abs(getattr(back, stat) - val) <= 1e-12

    with open(tmp_path / "histogram.csv") as fh:
        hist = list(csv.DictReader(fh))
    assert len(hist) == 20 and sum(int(r["count"]) for r in hist) == len(report.errors)

    with open(tmp_path / f"line_{report.median}.csv") as fh:
        line = list(csv.DictReader(fh))
    x = [float(r["x_mm"]) for r in line]
    assert len(line) == 200 and x[0] == 0.0 and x[-1] == pytest.approx(30.0)
    assert set(line[0]) == {"x_mm", "y_mm", "truth", "pred_fnn", "pred_copy"}


def test_export_rejects_foreign_report(tmp_path, heat_eval):
    m, te, report, pred = heat_eval
    bad = ErrorReport.from_errors([100, 101, 102], [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        export_report(bad, te, {"fnn": pred}, tmp_path)


def test_problem_mismatch_refused(heat_eval, small_dogbone):
    m = heat_eval[0]
    n = small_dogbone.nodes.shape[0]
    plastic = DatasetBundle("plastic", np.zeros((3, 101)), small_dogbone.nodes,
                            np.ones((3, n)), np.ones(3))
    with pytest.raises(ValueError, match="heat"):
        evaluate(m, plastic)


def test_plastic_line_is_grip_diagonal(small_dogbone):
    pts = line_samples("plastic", small_dogbone.nodes)
    assert tuple(pts[0]) == (0.0, 30.0) and tuple(pts[-1]) == (110.0, 0.0) and len(pts) == 200


def test_idw_exact_at_nodes_and_bounded(rng):
    nodes = rng.uniform(0, 10, size=(50, 2))
    vals = rng.normal(size=50)
    assert np.array_equal(idw_sample(nodes, vals, nodes), vals)
    q = rng.uniform(0, 10, size=(100, 2))
    out = idw_sample(nodes, vals, q)
    assert np.all(out >= vals.min()) and np.all(out <= vals.max())
    np.testing.assert_allclose(idw_sample(nodes, np.full(50, 4.2), q), 4.2, rtol=1e-15)


def test_measure_speedup_fields(heat_eval):
    m, te, _, _ = heat_eval
    t = measure_speedup(te, m, n_repeat=3)
    assert t["n_cases"] == len(te) and t["inference_time_per_case"] > 0
    assert t["speedup"] == pytest.approx(t["solver_time_per_case"] / t["inference_time_per_case"])


def test_forward_in_physical_units(heat_eval):
    m, te, _, pred = heat_eval
    direct = forward(m, te.histories, te.coords)
    assert np.array_equal(direct, pred)
    assert isinstance(m.scaling.field, FieldScaler)
