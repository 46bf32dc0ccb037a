import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occlubench.metrics import (MetricsError, ScoreEntry, acer, apcer_bpcer_acer,
                                candidate_thresholds, det_points, eer_threshold, evaluate,
                                far_frr, format_rate, hter, read_report_csv, write_report_csv)

FIXTURE = Path(__file__).parent / "fixtures" / "reference_tables.json"


def scored(gen, imp):
    gen, imp = np.asarray(gen, float), np.asarray(imp, float)
    return np.r_[gen, imp], np.r_[np.ones(gen.size, bool), np.zeros(imp.size, bool)]


def grid_eer(gen, imp, n=10_000):
    """Dense uniform threshold sweep, independent of the candidate construction."""
    lo, hi = min(gen.min(), imp.min()), max(gen.max(), imp.max())
    grid = np.linspace(lo - 1e-9, hi + 1e-9, n)
    far = np.array([100.0 * np.mean(imp >= t) for t in grid])
    frr = np.array([100.0 * np.mean(gen < t) for t in grid])
    k = int(np.argmin(np.abs(far - frr)))
    return grid[k], (far[k] + frr[k]) / 2, abs(far[k] - frr[k])


def test_threshold_extremes():
    s = scored([0.2, 0.9], [-0.5, 0.1])
    assert far_frr(s, -10) == (100.0, 0.0)
    assert far_frr(s, 10) == (0.0, 100.0)


def test_hand_count():
    assert far_frr(scored([1, 1], [-1, 1]), 0.0) == (50.0, 0.0)


def test_score_entries_accepted():
    entries = [ScoreEntry("a", 1.0, "bonafide"), ScoreEntry("b", -1.0, "attack"),
               ScoreEntry("c", 2.0, "attack")]
    assert far_frr(entries, 0.0) == (50.0, 0.0)


def test_empty_and_one_class_rejected():
    with pytest.raises(MetricsError):
        far_frr((np.array([]), np.array([], bool)), 0)
    with pytest.raises(MetricsError):
        eer_threshold(scored([1, 2], []))
    with pytest.raises(MetricsError):
        far_frr(scored([1, np.nan], [0]), 0)


def test_eer_perfect_separation():
    tau, eer = eer_threshold(scored([1, 1, 1], [-1, -1]))
    assert tau == 0.0 and eer == 0.0


def test_eer_identical_scores():
    _, eer = eer_threshold(scored([0.3] * 4, [0.3] * 6))
    assert eer == 50.0


def test_candidates_have_sentinels():
    c = candidate_thresholds(scored([1, 3], [2]))
    assert c[0] == -math.inf and c[-1] == math.inf
    assert c[1:-1].tolist() == [1.5, 2.5]


def test_eer_matches_dense_grid_on_gaussians():
    rng = np.random.default_rng(0)
    gen, imp = rng.normal(1, 1, 500), rng.normal(-1, 1, 500)
    tau, eer = eer_threshold(scored(gen, imp))
    far, frr = far_frr(scored(gen, imp), tau)
    _, g_eer, g_gap = grid_eer(gen, imp)
    assert abs(far - frr) <= g_gap + 1e-9  # candidates are at least as good as any grid point
    assert abs(eer - g_eer) <= 100.0 / 500 + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30),
       st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(-3, 3))
def test_far_frr_monotone(gen, imp, t):
    s = scored(gen, imp)
    f1, r1 = far_frr(s, t)
    f2, r2 = far_frr(s, t + 0.5)
    assert f2 <= f1 and r2 >= r1


def test_eer_invariant_under_increasing_transform():
    rng = np.random.default_rng(1)
    gen, imp = rng.normal(0.5, 1, 200), rng.normal(-0.5, 1, 300)
    _, eer = eer_threshold(scored(gen, imp))
    for f in (np.exp, lambda x: 3 * x + 7, np.arctan):
        assert eer_threshold(scored(f(gen), f(imp)))[1] == eer


@pytest.mark.parametrize("far,frr,expect", [(9.4, 21.8, 15.6), (13.9, 12.5, 13.2), (0, 0, 0)])
def test_hter_examples(far, frr, expect):
    assert hter(far, frr) == pytest.approx(expect, abs=1e-9)


@pytest.mark.parametrize("apcer,bpcer,expect", [(0.83, 0.0, 0.415), (2.5, 39.17, 20.835),
                                                (16.67, 12.5, 14.585)])
def test_acer_examples(apcer, bpcer, expect):
    assert acer(apcer, bpcer) == pytest.approx(expect, abs=1e-9)


def test_fixture_shape():
    tables = json.loads(FIXTURE.read_text())
    assert len(tables["columns"]) == 7
    for rows in (tables["table1"], tables["table2"]):
        for metrics in rows.values():
            assert {len(v) for v in metrics.values()} == {7}


def test_apcer_is_far_on_pooled_attacks():
    s = scored([0.5, 1.5, -0.2], [-1, 0.7, 2.0, -3])
    assert apcer_bpcer_acer(s, 0.6)[:2] == far_frr(s, 0.6)


def test_evaluate_uses_dev_threshold():
    dev = scored([1, 2, 3], [-1, -2, -3])
    test = scored([0.1, -0.1], [0.2, -5])
    r = evaluate(dev, test, occlusion="low", extractor="LBP59")
    assert r.threshold == 0.0
    assert (r.far, r.frr, r.hter) == (50.0, 50.0, 50.0)
    assert r.dev_eer == 0.0 and r.n_bonafide == 2 and r.n_attack == 2


def test_rate_formatting_half_even():
    assert format_rate(0.125) == "0.12"
    assert format_rate(0.375) == "0.38"
    assert format_rate(100) == "100.00"


def test_report_csv_round_trip(tmp_path):
    r = evaluate(scored([1, 2], [0, -1]), scored([1.5, 0.2], [-2, 0.9]), extractor="IQM")
    p = tmp_path / "r.csv"
    write_report_csv(p, [r])
    row = read_report_csv(p)[0]
    assert row["extractor"] == "IQM" and row["hter"] == format_rate(r.hter)


def test_det_points_cover_extremes():
    pts = det_points(scored([1, 2], [0, 3]))
    assert pts[0][1:] == (100.0, 0.0) and pts[-1][1:] == (0.0, 100.0)
