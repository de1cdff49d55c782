"""Behaviour of the trained stages on the default phantom (shares the acceptance run)."""

import json

import numpy as np

from collabseg.runner import RECORD


def _metrics(runner, stage):
    return json.loads((runner.stage_dir(stage, 0) / RECORD).read_text())["metrics"]


def test_warmup_fits_the_central_slices(phantom_run):
    runner = phantom_run[0]
    m = _metrics(runner, "semi")
    assert m["warmup_central_dice"] > 0.8
    assert m["warmup_loss"][-1] < 0.5 * m["warmup_loss"][0]


def test_registration_improves_similarity(phantom_run):
    m = _metrics(phantom_run[0], "reg")
    assert m["similarity_after"] < m["similarity_before"]


def test_propagated_labels_degrade_with_distance_but_stay_usable(phantom_run):
    rows = phantom_run[0].label_quality(0)
    by_distance = {}
    for r in rows:
        by_distance.setdefault(r["distance"], []).append(r["ssl_dice"])
    means = [np.mean(by_distance[d]) for d in sorted(by_distance)]
    assert all(m > 0.7 for m in means)
    assert all(a >= b for a, b in zip(means, means[1:]))


def test_label_quality_covers_every_training_slice(phantom_run):
    rows = phantom_run[0].label_quality(0)
    assert len(rows) == 16 * 8  # training volumes x non-central slices


def test_final_loss_trace_mostly_decreases(phantom_run):
    trace = _metrics(phantom_run[0], "final")["loss"]
    pairs = list(zip(trace, trace[1:]))
    assert sum(b < a for a, b in pairs) >= 0.8 * len(pairs)


def test_final_beats_baseline(phantom_run):
    summary = phantom_run[1]
    assert summary["Ours"]["dice"][0] > summary["FS-LCS"]["dice"][0]
