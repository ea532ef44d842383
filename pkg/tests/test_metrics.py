import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svbackend.errors import DataError
from svbackend.metrics import (DcfParams, act_dcf, det_points, eer, error_profile, evaluate,
                               format_report, min_dcf, primary_dcf, profile_from_arrays)

from conftest import make_scores
from oracles import act_dcf_scan, det_scan, eer_exact, min_dcf_scan


def test_separable_sets():
    prof = profile_from_arrays([5.0, 6.0], [1.0, 2.0])
    assert eer(prof) == 0.0
    assert min_dcf(prof, DcfParams(0.01))[0] == 0.0


def test_all_equal_scores():
    prof = profile_from_arrays([1.0] * 3, [1.0] * 5)
    assert eer(prof) == 0.5
    assert min_dcf(prof, DcfParams(0.01))[0] == 1.0
    assert len(prof) == 2


def test_worked_eer_fixture():
    assert eer(profile_from_arrays([1.0, 3.0], [2.0, 4.0])) == 0.5


def test_inverted_scores():
    prof = profile_from_arrays([1.0, 2.0], [3.0, 4.0])
    assert eer(prof) == 1.0


def test_profile_thresholds_and_counts():
    prof = profile_from_arrays([1.0, 3.0], [2.0, 4.0])
    assert prof.thresholds.tolist() == [-math.inf, 1.5, 2.5, 3.5, math.inf]
    assert prof.n_miss.tolist() == [0, 1, 1, 2, 2]
    assert prof.n_fa.tolist() == [2, 2, 1, 1, 0]


def test_min_dcf_picks_lowest_threshold_on_ties():
    # two thresholds give zero errors: -> the lower one is reported
    prof = profile_from_arrays([10.0, 11.0], [0.0])
    value, th = min_dcf(prof, DcfParams(0.5))
    assert value == 0.0 and th == 5.0


@pytest.mark.parametrize("n_tar,n_non", [(40, 50), (13, 27)])
def test_min_dcf_brute_force(rng, n_tar, n_non):
    tar = np.round(rng.normal(1, 1, n_tar), 1)
    non = np.round(rng.normal(-1, 1, n_non), 1)
    prof = profile_from_arrays(tar, non)
    for p in (0.01, 0.05, 0.3):
        assert min_dcf(prof, DcfParams(p)) == min_dcf_scan(tar, non, p)


def test_act_dcf_not_below_min_dcf(rng):
    for _ in range(20):
        s, key = make_scores(rng.normal(2, 2, 60), rng.normal(-2, 2, 90))
        for p in (0.01, 0.1, 0.5):
            params = DcfParams(p, rng.uniform(0.5, 2), rng.uniform(0.5, 2))
            assert act_dcf(s, key, params) >= min_dcf(error_profile(s, key), params)[0] - 1e-12


def test_shift_changes_act_not_min_dcf(rng):
    s, key = make_scores(rng.normal(3, 1, 200), rng.normal(-3, 1, 800))
    params = DcfParams(0.05)
    shifted = type(s)(s.enroll, s.test, s.scores + 10)
    assert min_dcf(error_profile(shifted, key), params)[0] == min_dcf(error_profile(s, key), params)[0]
    assert act_dcf(shifted, key, params) > act_dcf(s, key, params)


def test_primary_dcf_is_mean(rng):
    s, key = make_scores(rng.normal(2, 1, 100), rng.normal(-1, 1, 300))
    prof = error_profile(s, key)
    a = min_dcf(prof, DcfParams(0.01))[0]
    b = min_dcf(prof, DcfParams(0.005))[0]
    assert primary_dcf(s, key) == pytest.approx(0.5 * (a + b), abs=1e-15)
    with pytest.raises(DataError):
        primary_dcf(s, key, ())


def test_det_points_monotone(rng):
    prof = profile_from_arrays(rng.normal(1, 1, 50), rng.normal(0, 1, 70))
    pts = det_points(prof)
    pm = [p for p, _ in pts]
    pf = [f for _, f in pts]
    assert pm[0] == 0 and pf[0] == 1 and pm[-1] == 1 and pf[-1] == 0
    assert all(np.diff(pm) >= 0) and all(np.diff(pf) <= 0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_agrees_with_brute_force_scan(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    n_tar = int(rng.integers(1, n))
    vals = rng.normal(0, 1, n)
    if rng.random() < 0.5:
        vals = np.round(vals, 1)  # force ties
    vals[:n_tar] += rng.uniform(0, 2)
    tar, non = vals[:n_tar], vals[n_tar:]
    prof = profile_from_arrays(tar, non)
    assert eer(prof) == eer_exact(tar.tolist(), non.tolist())
    assert det_points(prof) == det_scan(tar.tolist(), non.tolist())
    for p in (0.01, 0.005, 0.3):
        params = DcfParams(p)
        assert min_dcf(prof, params) == min_dcf_scan(tar.tolist(), non.tolist(), p)
        s, key = make_scores(tar, non)
        assert act_dcf(s, key, params) == act_dcf_scan(tar.tolist(), non.tolist(), p)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_invariant_to_monotone_transform_and_order(seed):
    rng = np.random.default_rng(seed)
    tar, non = rng.normal(1, 1, 40), rng.normal(0, 1, 60)
    prof = profile_from_arrays(tar, non)
    moved = profile_from_arrays(np.exp(tar) * 3 + 1, np.exp(non) * 3 + 1)
    perm = profile_from_arrays(rng.permutation(tar), rng.permutation(non))
    for other in (moved, perm):
        assert eer(other) == eer(prof)
        assert min_dcf(other, DcfParams(0.01))[0] == min_dcf(prof, DcfParams(0.01))[0]


def test_one_class_key_rejected():
    s, key = make_scores([1.0, 2.0], [])
    with pytest.raises(DataError):
        error_profile(s, key)
    with pytest.raises(DataError):
        DcfParams(1.0)


def test_report_format():
    s, key = make_scores([5.0, 6.0], [1.0, 2.0])
    report = format_report([("sys", evaluate(s, key))])
    assert "0.00" in report.splitlines()[2]
    tsv = format_report([("sys", {"eer": 0.0453, "min_dcf": 0.19, "act_dcf": None})], tsv=True)
    assert tsv.splitlines()[1] == "sys\t4.53\t0.190\t-"


def test_missing_score_rejected():
    s, key = make_scores([1.0], [0.0])
    partial = type(s)(s.enroll[:1], s.test[:1], s.scores[:1])
    with pytest.raises(DataError, match="no score"):
        error_profile(partial, key)


def test_dcf_param_conventions(rng):
    assert DcfParams(0.5).bayes_threshold == 0.0
    s, key = make_scores(rng.normal(1, 1, 30), rng.normal(0, 1, 30))
    single = min_dcf(error_profile(s, key), DcfParams(0.01))[0]
    assert primary_dcf(s, key, [DcfParams(0.01)]) == single
    assert primary_dcf(s, key, [DcfParams(0.01)] * 2) == single
    assert (0.0, 0.0) in det_points(profile_from_arrays([1.0], [0.0]))
