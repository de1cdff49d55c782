import csv
import warnings

import numpy as np
import pytest
from oracles import assd_brute_force, dice_count, iou_count, ravd_count

from collabseg.exceptions import DimensionError, UndefinedMetricError
from collabseg.metrics import (
    CSV_FIELDS,
    MetricsReport,
    aggregate,
    assd,
    dice,
    evaluate_volume,
    iou,
    precision,
    ravd,
    report_rows,
    write_csv,
)


def _random_pair(rng):
    shape = (int(rng.integers(1, 6)), int(rng.integers(2, 13)), int(rng.integers(2, 13)))
    p = rng.random(shape) < rng.uniform(0.05, 0.7)
    r = rng.random(shape) < rng.uniform(0.05, 0.7)
    p.flat[rng.integers(p.size)] = True
    r.flat[rng.integers(r.size)] = True
    return p, r


def test_dice_and_iou_hand_cases():
    a = np.zeros((1, 4, 4), bool)
    b = np.zeros((1, 4, 4), bool)
    a[0, :2, :2] = True
    b[0, :2, 1:3] = True
    assert dice(a, a) == 1.0 and iou(a, a) == 1.0
    assert dice(a, b) == 0.5
    assert iou(a, b) == pytest.approx(1 / 3)
    c = np.zeros_like(a)
    c[0, 3, 3] = True
    assert dice(a, c) == 0.0 and iou(a, c) == 0.0
    empty = np.zeros_like(a)
    assert dice(empty, empty) == 1.0 and iou(empty, empty) == 1.0
    assert dice(empty, a) == 0.0
    with pytest.raises(DimensionError):
        dice(a, a[:, :3])


def test_assd_hand_cases():
    a = np.zeros((1, 1, 8), bool)
    b = np.zeros((1, 1, 8), bool)
    a[0, 0, 1], b[0, 0, 4] = True, True
    assert assd(a, b, (1, 1, 1)) == 3.0
    assert assd(a, b, (1, 1, 2.5)) == 7.5
    m = np.random.default_rng(0).random((3, 6, 6)) > 0.5
    assert assd(m, m) == 0.0
    with pytest.raises(UndefinedMetricError):
        assd(np.zeros_like(m), m)


def test_ravd_signed():
    ref = np.zeros(200, bool)
    ref[:100] = True
    big = np.zeros(200, bool)
    big[:120] = True
    small = np.zeros(200, bool)
    small[:80] = True
    assert ravd(ref, ref) == 0.0
    assert ravd(big, ref) == pytest.approx(0.2)
    assert ravd(small, ref) == pytest.approx(-0.2)
    with pytest.raises(UndefinedMetricError):
        ravd(ref, np.zeros_like(ref))


def test_precision_convention():
    ref = np.array([1, 1, 0, 0], bool)
    assert precision(np.array([1, 0, 1, 0], bool), ref) == 0.5
    assert precision(np.zeros(4, bool), ref) == 1.0


def test_metrics_match_brute_force_oracles():
    rng = np.random.default_rng(42)
    for _ in range(200):
        p, r = _random_pair(rng)
        spacing = tuple(rng.uniform(0.5, 3.0, size=3))
        d = dice(p, r)
        assert abs(d - dice_count(p, r)) < 1e-9
        assert abs(iou(p, r) - iou_count(p, r)) < 1e-9
        assert abs(iou(p, r) - d / (2 - d)) < 1e-9
        assert abs(ravd(p, r) - ravd_count(p, r)) < 1e-9
        assert abs(assd(p, r, spacing) - assd_brute_force(p, r, spacing)) < 1e-9


def test_assd_is_symmetric_and_transform_invariant():
    rng = np.random.default_rng(3)
    for _ in range(30):
        p, r = _random_pair(rng)
        assert assd(p, r) == pytest.approx(assd(r, p), abs=1e-12)
        k = int(rng.integers(4))
        pr, rr = np.rot90(p, k, axes=(1, 2)), np.rot90(r, k, axes=(1, 2))
        assert dice(pr, rr) == pytest.approx(dice(p, r))
        assert iou(pr, rr) == pytest.approx(iou(p, r))
        assert ravd(pr, rr) == pytest.approx(ravd(p, r))
        assert assd(pr, rr) == pytest.approx(assd(p, r), abs=1e-9)
        fp, fr = p[:, :, ::-1], r[:, :, ::-1]
        assert assd(fp, fr) == pytest.approx(assd(p, r), abs=1e-9)


def test_evaluate_volume_reports_undefined_as_nan():
    ref = np.zeros((3, 4, 4), bool)
    pred = np.zeros((3, 4, 4), bool)
    pred[1, 1, 1] = True
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = evaluate_volume(pred, ref, volume_id="x")
    assert np.isnan(rep.assd) and np.isnan(rep.ravd)
    assert len(caught) == 2
    assert rep.dice == 0.0


def _report(vid, d, assd_value=1.0, ravd_value=0.1):
    return MetricsReport(vid, d, d / (2 - d), assd_value, ravd_value)


def test_aggregate_mean_and_population_sd():
    agg = aggregate([_report("a", 0.8)])
    assert agg["dice"] == (0.8, 0.0)
    agg = aggregate([_report("a", 0.8, ravd_value=-0.2), _report("b", 0.6, ravd_value=0.4)])
    assert agg["dice"][0] == pytest.approx(0.7)
    assert agg["dice"][1] == pytest.approx(0.1)
    assert agg["ravd"][0] == pytest.approx(0.1)
    assert agg["abs_ravd"][0] == pytest.approx(0.3)


def test_aggregate_skips_nan():
    agg = aggregate([_report("a", 0.8, assd_value=float("nan")), _report("b", 0.6, assd_value=2.0)])
    assert agg["assd"] == (2.0, 0.0)


def test_csv_rows_against_manual_recomputation(tmp_path):
    reports = [_report("a", 0.812345678, 1.5, -0.05), _report("b", 0.7, 2.25, 0.15), _report("c", 0.65, 3.0, 0.0)]
    rows = report_rows(reports, "Ours", 0)
    write_csv(tmp_path / "m.csv", rows)
    with open(tmp_path / "m.csv") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == CSV_FIELDS
    assert table[1][:4] == ["Ours", "0", "a", "0.812346"]
    mean_row = next(r for r in table if r[2] == "MEAN")
    sd_row = next(r for r in table if r[2] == "SD")
    dices = [0.812345678, 0.7, 0.65]
    mean = sum(dices) / 3
    sd = (sum((d - mean) ** 2 for d in dices) / 3) ** 0.5
    assert float(mean_row[3]) == pytest.approx(mean, rel=1e-5)
    assert float(sd_row[3]) == pytest.approx(sd, rel=1e-5)
    assert mean_row[CSV_FIELDS.index("abs_ravd")] == f"{(0.05 + 0.15 + 0.0) / 3:.6g}"
