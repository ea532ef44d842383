import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svbackend.bench import random_trials
from svbackend.data import EmbeddingSet, EnrollmentMap, ScoreSet, TrialList
from svbackend.errors import DataError, NumericalError
from svbackend.plda import PldaModel, score_plda
from svbackend.scoring import (CosineKernel, adaptive_snorm, build_cohort_scores, cohort_stats,
                               score_cosine, score_trials, score_trials_cosine, top_count)

from oracles import snorm_full_cohort


def test_cosine_identities(rng):
    v = rng.standard_normal(6)
    assert score_cosine(v, v) == pytest.approx(1.0, abs=1e-15)
    assert score_cosine(v, -v) == pytest.approx(-1.0, abs=1e-15)
    assert score_cosine([1, 0], [0, 1]) == 0.0
    with pytest.raises(DataError):
        score_cosine([0.0, 0.0], [1.0, 0.0])


def test_trial_cosine_conventions(rng):
    v, w, x, y = rng.standard_normal((4, 5))
    es = EmbeddingSet(["v", "neg", "w", "x", "y", "t"], np.vstack([v, -v, w, x, y, v]))
    enr = EnrollmentMap({"same": ["t"], "pm": ["v", "neg"], "three": ["w", "x", "y"]})
    out = score_trials_cosine(es, enr, TrialList(["same", "pm", "three"], ["v", "v", "v"]))
    assert out.scores[0] == pytest.approx(1.0, abs=1e-15)
    assert abs(out.scores[1]) < 1e-15
    mean3 = np.mean([score_cosine(u, v) for u in (w, x, y)])
    assert abs(out.scores[2] - mean3) < 1e-12


def test_zero_vector_reported(rng):
    es = EmbeddingSet(["a", "z"], [[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(DataError):
        score_trials_cosine(es, None, TrialList(["a"], ["z"]))


def test_snorm_fixture():
    # enroll top selection {0.5, 1.5}: mean 1, std 0.5; test {-1, 1}: mean 0, std 1
    raw = ScoreSet(["m"], ["t"], [2.0])
    out = adaptive_snorm(raw, {"m": [0.5, 1.5]}, {"t": [-1.0, 1.0]}, top_fraction=1.0)
    assert abs(out.scores[0] - 2.0) < 1e-12


def test_standardized_cohort_is_identity(rng):
    c = np.array([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0])
    s = rng.standard_normal(30) * 3
    raw = ScoreSet([f"m{i}" for i in range(30)], [f"t{i}" for i in range(30)], s)
    cohorts = {f"m{i}": c for i in range(30)} | {f"t{i}": c for i in range(30)}
    out = adaptive_snorm(raw, cohorts, cohorts, top_fraction=1.0)
    np.testing.assert_allclose(out.scores, s, atol=1e-12)


def test_full_fraction_is_plain_snorm(rng):
    n = 40
    raw = ScoreSet([f"m{i % 5}" for i in range(n)], [f"t{i}" for i in range(n)], rng.standard_normal(n))
    ec = {f"m{i}": rng.standard_normal(17) + i for i in range(5)}
    tc = {f"t{i}": rng.standard_normal(23) * 2 for i in range(n)}
    out = adaptive_snorm(raw, ec, tc, top_fraction=1.0)
    for k in range(n):
        ref = snorm_full_cohort(raw.scores[k], ec[raw.enroll[k]], tc[raw.test[k]])
        assert out.scores[k] == pytest.approx(ref, abs=1e-12)


def test_top_count_rule():
    assert top_count(10, 0.3) == 3
    assert top_count(1000, 0.30) == 300
    assert top_count(3, 0.3) == 2
    assert top_count(7, 1.0) == 7


def test_top_selection_uses_highest_scores():
    scores = np.array([5.0, 1.0, 4.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    mu, sd = cohort_stats(scores, 0.3)
    assert mu == pytest.approx(4.0) and sd == pytest.approx(np.sqrt(2 / 3))


def test_small_and_flat_cohorts_rejected():
    raw = ScoreSet(["m"], ["t"], [1.0])
    with pytest.raises(DataError, match="enroll"):
        adaptive_snorm(raw, {"m": [1.0]}, {"t": [0.0, 1.0]})
    with pytest.raises(NumericalError, match="test cohort for 't'"):
        adaptive_snorm(raw, {"m": [0.0, 1.0]}, {"t": [2.0, 2.0, 2.0]})
    with pytest.raises(DataError, match="no test cohort"):
        adaptive_snorm(raw, {"m": [0.0, 1.0]}, {})
    with pytest.raises(DataError):
        adaptive_snorm(raw, {"m": [0.0, 1.0]}, {"t": [0.0, 1.0]}, top_fraction=0.0)


def _random_config(rng):
    n = int(rng.integers(1, 6))
    raw = ScoreSet([f"m{i % 2}" for i in range(n)], [f"t{i}" for i in range(n)], rng.standard_normal(n) * 3)
    ec = {f"m{i}": rng.standard_normal(int(rng.integers(2, 50))) for i in range(2)}
    tc = {f"t{i}": rng.standard_normal(int(rng.integers(2, 50))) * 2 + 1 for i in range(n)}
    return raw, ec, tc, float(rng.uniform(0.05, 1.0))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(0.01, 100), b=st.floats(-100, 100))
def test_affine_invariance_property(seed, a, b):
    raw, ec, tc, f = _random_config(np.random.default_rng(seed))
    ref = adaptive_snorm(raw, ec, tc, f).scores
    moved = adaptive_snorm(ScoreSet(raw.enroll, raw.test, a * raw.scores + b),
                           {k: a * v + b for k, v in ec.items()},
                           {k: a * v + b for k, v in tc.items()}, f).scores
    np.testing.assert_allclose(moved, ref, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_symmetry_and_monotonicity(seed):
    rng = np.random.default_rng(seed)
    ec, tc = rng.standard_normal(20), rng.standard_normal(31) + 1
    s = np.sort(rng.standard_normal(8) * 4)
    s = np.unique(s)
    ids = [f"x{i}" for i in range(len(s))]
    fwd = adaptive_snorm(ScoreSet(["e"] * len(s), ids, s), {"e": ec}, {i: tc for i in ids}).scores
    swapped = adaptive_snorm(ScoreSet(ids, ["e"] * len(s), s), {i: tc for i in ids}, {"e": ec}).scores
    np.testing.assert_allclose(fwd, swapped, atol=1e-12)
    assert np.all(np.diff(fwd) > 0)


def test_order_preserved(rng):
    raw, ec, tc, f = _random_config(rng)
    perm = rng.permutation(len(raw.scores))
    shuffled = ScoreSet([raw.enroll[i] for i in perm], [raw.test[i] for i in perm], raw.scores[perm])
    a = adaptive_snorm(raw, ec, tc, f)
    b = adaptive_snorm(shuffled, ec, tc, f)
    np.testing.assert_array_equal(b.scores, a.scores[perm])
    assert b.enroll == shuffled.enroll


def test_cohort_of_one_propagates_then_rejected(rng):
    es = EmbeddingSet(["a", "b"], rng.standard_normal((2, 3)))
    coh = EmbeddingSet(["c"], rng.standard_normal((1, 3)))
    models, tests = build_cohort_scores(es, coh, CosineKernel())
    assert all(len(v) == 1 for v in models.values()) and all(len(v) == 1 for v in tests.values())
    with pytest.raises(DataError):
        adaptive_snorm(ScoreSet(["a"], ["b"], [0.0]), models, tests)


def test_cosine_cohort_contains_test(rng):
    es = EmbeddingSet(["a", "b"], rng.standard_normal((2, 3)))
    coh = EmbeddingSet(["c0", "c1"], np.vstack([rng.standard_normal(3), es.vectors[1]]))
    _, tests = build_cohort_scores(es, coh, CosineKernel())
    assert tests["b"][1] == pytest.approx(1.0, abs=1e-15)


def test_plda_cohort_matches_loop(rng):
    d = 4
    a = rng.standard_normal((d, d))
    m = PldaModel(rng.standard_normal(d), a @ a.T, np.eye(d))
    es = EmbeddingSet([f"u{i}" for i in range(6)], rng.standard_normal((6, d)))
    coh = EmbeddingSet([f"c{i}" for i in range(9)], rng.standard_normal((9, d)))
    enr = EnrollmentMap({"m0": ["u0", "u1"], "m1": ["u2"]})
    models, tests = build_cohort_scores(es, coh, m.kernel, enrollment=enr, test_ids=["u3", "u4", "u5"])
    X, C = es.vectors, coh.vectors
    for j in range(9):
        ref = 0.5 * (score_plda(m, X[0], C[j]) + score_plda(m, X[1], C[j]))
        assert abs(models["m0"][j] - ref) < 1e-12
        assert abs(models["m1"][j] - score_plda(m, X[2], C[j])) < 1e-12
        for t in (3, 4, 5):
            assert abs(tests[f"u{t}"][j] - score_plda(m, X[t], C[j])) < 1e-12
    with pytest.raises(DataError):
        build_cohort_scores(es, EmbeddingSet(["c"], np.zeros((1, 2))), m.kernel)
    with pytest.raises(DataError):
        build_cohort_scores(es, EmbeddingSet([], np.zeros((0, d))), m.kernel)


def test_thread_count_invariance(rng):
    d = 8
    m = PldaModel(np.zeros(d), np.eye(d), np.eye(d))
    es = EmbeddingSet([f"u{i}" for i in range(300)], rng.standard_normal((300, d)))
    trials = random_trials(es.ids, es.ids, 20_000, seed=3)
    one = score_trials(m.kernel, es, None, trials, threads=1)
    four = score_trials(m.kernel, es, None, trials, threads=4)
    assert np.array_equal(one.scores.view(np.uint64), four.scores.view(np.uint64))
