import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poet.errors import InputError
from poet.geometry import Pose, axis_angle, random_rotation, rotation_angle
from poet.inference import gt_predictions
from poet.metrics import (
    MAX_THRESHOLD,
    ROW_FIELDS,
    aggregate,
    add_distance,
    adds_distance,
    auc,
    evaluate,
    symmetry_reduced_rotation_error,
)
from poet.scenes import Symmetry, make_dataset
from poet.scenes.primitives import box, cube, cylinder


def _random_pose(rng, scale=0.3):
    return Pose(random_rotation(rng), rng.normal(scale=scale, size=3))


def test_add_identical_and_pure_translation(rng):
    m = box(0)
    p = _random_pose(rng)
    assert add_distance(m, p, p) == 0.0
    assert adds_distance(m, p, p) == 0.0
    d = np.array([0.01, -0.02, 0.005])
    q = Pose(p.rotation, p.translation + d)
    assert add_distance(m, p, q) == pytest.approx(np.linalg.norm(d), abs=1e-15)


def test_add_matches_per_point_loop(rng):
    pts = rng.normal(size=(50, 3)) * 0.05
    a, b = _random_pose(rng), _random_pose(rng)
    ref = sum(np.linalg.norm((a.rotation @ x + a.translation) - (b.rotation @ x + b.translation)) for x in pts) / 50
    assert abs(add_distance(pts, a, b) - ref) < 1e-12


def test_adds_matches_per_point_loop(rng):
    pts = rng.normal(size=(40, 3)) * 0.05
    a, b = _random_pose(rng), _random_pose(rng)
    pa = [a.rotation @ x + a.translation for x in pts]
    pb = [b.rotation @ x + b.translation for x in pts]
    ref = np.mean([min(np.linalg.norm(x - y) for y in pb) for x in pa])
    assert abs(adds_distance(pts, a, b) - ref) < 1e-12


def test_cylinder_rotation_about_axis():
    m = cylinder(0)
    gt = Pose(np.eye(3), np.array([0.0, 0.0, 0.5]))
    est = Pose(axis_angle([0, 0, 1], 2 * np.pi / 24 * 5), gt.translation)
    assert adds_distance(m, gt, est) < 1e-12
    assert add_distance(m, gt, est) > 0.01
    off_grid = Pose(axis_angle([0, 0, 1], 0.4), gt.translation)
    assert adds_distance(m, gt, off_grid) < 0.5 * add_distance(m, gt, off_grid)


def test_empty_model_rejected():
    with pytest.raises(InputError):
        add_distance(np.zeros((0, 3)), Pose.identity(), Pose.identity())
    with pytest.raises(InputError):
        auc([])


def test_auc_closed_forms():
    assert auc([0.0, 0.0, 0.0]) == 100.0
    assert auc([0.2, 0.11, np.inf]) == 0.0
    assert auc([MAX_THRESHOLD / 2]) == 50.0
    assert auc([0.0, np.inf]) == 50.0
    assert auc([0.1]) == 0.0


def test_auc_matches_fine_riemann_sum(rng):
    d = rng.uniform(0, 0.15, size=37)
    th = (np.arange(200000) + 0.5) / 200000 * MAX_THRESHOLD
    acc = (d[None, :] <= th[:, None]).mean(1)
    assert auc(d) == pytest.approx(acc.mean() * 100, abs=1e-3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 0.3), min_size=1, max_size=20), st.data())
def test_auc_monotone(ds, data):
    i = data.draw(st.integers(0, len(ds) - 1))
    bump = data.draw(st.floats(0, 0.2))
    worse = list(ds)
    worse[i] += bump
    a, b = auc(ds), auc(worse)
    assert 0.0 <= b <= a <= 100.0


def test_symmetry_examples():
    z4 = [Symmetry((0.0, 0.0, 1.0), 4)]
    R = np.eye(3)
    assert symmetry_reduced_rotation_error(R, axis_angle([0, 0, 1], np.pi / 2), z4) == pytest.approx(0.0, abs=1e-6)
    assert symmetry_reduced_rotation_error(R, axis_angle([0, 0, 1], np.pi / 4), z4) == pytest.approx(45.0, abs=1e-9)
    cont = [{"axis": [0.0, 0.0, 1.0], "order": None}]
    assert symmetry_reduced_rotation_error(R, axis_angle([0, 0, 1], 2.0), cont) == pytest.approx(0.0, abs=1e-6)
    E = axis_angle([1, 0, 0], 0.3)
    assert symmetry_reduced_rotation_error(R, E, []) == pytest.approx(np.degrees(0.3), abs=1e-9)


def test_symmetry_error_never_exceeds_plain(rng):
    for syms in (cube(0).symmetries, cylinder(0).symmetries, box(0).symmetries):
        for _ in range(100):
            Rg, Re = random_rotation(rng), random_rotation(rng)
            plain = np.degrees(rotation_angle(Rg.T @ Re))
            assert symmetry_reduced_rotation_error(Rg, Re, syms) <= plain + 1e-9


def test_continuous_axis_leaves_swing(rng):
    Rg = random_rotation(rng)
    swing = axis_angle([1, 0, 0], 0.2)
    Re = Rg @ axis_angle([0, 0, 1], 1.1) @ swing
    err = symmetry_reduced_rotation_error(Rg, Re, [Symmetry((0.0, 0.0, 1.0))])
    assert err == pytest.approx(np.degrees(0.2), abs=1e-9)


def test_malformed_symmetry():
    with pytest.raises(InputError):
        symmetry_reduced_rotation_error(np.eye(3), np.eye(3), [{"order": 2}])
    with pytest.raises(InputError):
        symmetry_reduced_rotation_error(np.eye(3), np.eye(3), [{"axis": [0, 0, 2], "order": 2}])


@pytest.fixture(scope="module")
def small_dataset():
    return make_dataset(4, 2, 3, 3, "mixed", 4)


def test_evaluate_perfect(small_dataset):
    rep = evaluate(small_dataset, gt_predictions(small_dataset))
    assert rep.overall["auc_adds"] == 100.0 and rep.overall["auc_add"] == 100.0
    assert rep.overall["missing"] == 0
    assert rep.overall["t_err_cm"] < 1e-9 and rep.overall["rot_err_deg"] < 1e-3
    assert rep.metadata["aggregation"] == "per-object"


def test_evaluate_all_missing(small_dataset):
    rep = evaluate(small_dataset, {})
    n = sum(len(f.objects) for s in small_dataset for f in s.frames)
    assert rep.overall["auc_adds"] == 0.0 and rep.overall["missing"] == n == rep.overall["count"]
    assert np.isnan(rep.overall["t_err_cm"])


def test_evaluate_reaggregation(small_dataset, rng):
    preds = gt_predictions(small_dataset)
    for seq in preds.values():
        for objs in seq.values():
            for lid in list(objs):
                if rng.random() < 0.2:
                    del objs[lid]
                else:
                    p = objs[lid]
                    objs[lid] = Pose(p.rotation @ axis_angle(rng.normal(size=3), rng.uniform(0, 0.3)),
                                     p.translation + rng.normal(scale=0.02, size=3))
    rep = evaluate(small_dataset, preds)
    recs = rep.records
    for row in rep.rows:
        sel = recs if row["class"] == "ALL" else [r for r in recs if str(r.class_id) == row["class"]]
        found = [r for r in sel if not r.missing]
        assert row["count"] == len(sel) and row["missing"] == len(sel) - len(found)
        ref = np.mean([max(0.0, MAX_THRESHOLD - r.adds) for r in sel]) / MAX_THRESHOLD * 100
        assert row["auc_adds"] == pytest.approx(ref, abs=1e-12)
        assert row["t_err_cm"] == pytest.approx(np.mean([r.t_err_cm for r in found]), abs=1e-12)
    per_class = [r for r in rep.rows if r["class"] != "ALL"]
    weighted = sum(r["auc_add"] * r["count"] for r in per_class) / sum(r["count"] for r in per_class)
    assert rep.overall["auc_add"] == pytest.approx(weighted, abs=1e-9)
    for r in recs:
        if not r.missing:
            assert r.adds <= r.add + 1e-15 and r.sym_rot_err_deg <= r.rot_err_deg + 1e-9


def test_report_files(small_dataset, tmp_path):
    rep = evaluate(small_dataset, {})
    rep.write_csv(tmp_path / "r.csv")
    rep.write_records_csv(tmp_path / "o.csv")
    rep.write_json(tmp_path / "r.json")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert tuple(rows[0]) == ROW_FIELDS and rows[-1][0] == "ALL"
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["rows"][-1]["t_err_cm"] is None
    assert len(list(csv.reader(open(tmp_path / "o.csv")))) == 1 + len(rep.records)


def test_aggregate_single_record():
    from poet.metrics import ObjectRecord

    rec = ObjectRecord("s", 0, 1, 2, False, 0.05, 0.02, 1.0, 3.0, 1.5)
    row = aggregate([rec], "2")
    assert row["auc_add"] == pytest.approx(50.0) and row["auc_adds"] == pytest.approx(80.0)
