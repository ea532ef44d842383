"""Trial scoring kernels, cohort scores and adaptive symmetric normalization.

Every kernel here has the form ``k(e, t) = a(e) + a(t) + u(e) . v(t) + c``.
Averaging scores over several enrollment utterances then reduces to
averaging ``a`` and ``u`` over those utterances, so a model's mean score
is computed without materializing the per-utterance scores.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .data import EnrollmentMap, ScoreSet
from .errors import DataError, NumericalError

BLOCK = 4096  # trials per work unit; fixed so results do not depend on --threads


def score_cosine(e, t):
    e = np.asarray(e, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if not (np.isfinite(e).all() and np.isfinite(t).all()):
        raise DataError("non-finite input vector")
    ne, nt = np.linalg.norm(e), np.linalg.norm(t)
    if ne == 0 or nt == 0:
        raise DataError("cosine of a zero vector")
    return float(np.clip(e @ t / (ne * nt), -1.0, 1.0))


class CosineKernel:
    name = "cosine"
    dim = None
    const = 0.0
    side_terms = False  # a(.) is identically zero

    def sides(self, X):
        norms = np.linalg.norm(X, axis=1)
        if (norms == 0).any():
            raise DataError("cosine of a zero vector", record=int(np.flatnonzero(norms == 0)[0]) + 1)
        U = X / norms[:, None]
        return np.zeros(len(X)), U, U

    def pair(self, e, t):
        return score_cosine(e, t)


def _rowdot(U, V):
    return np.einsum("ij,ij->i", U, V)


def _model_sides(kernel, embeddings, enrollment, model_ids):
    rows = [embeddings.rows(enrollment[m], context=f"enrollment utterance of {m!r}") for m in model_ids]
    flat = np.unique(np.concatenate(rows)) if rows else np.empty(0, dtype=np.intp)
    a, u, _ = kernel.sides(embeddings.vectors[flat])
    pos = {r: i for i, r in enumerate(flat)}
    A = np.empty(len(model_ids))
    U = np.empty((len(model_ids), embeddings.dim if u.ndim < 2 else u.shape[1]))
    for k, r in enumerate(rows):
        idx = [pos[i] for i in r]
        A[k] = a[idx].mean()
        U[k] = u[idx].mean(axis=0)
    return A, U


def _check_kernel(kernel, dim):
    if kernel.dim is not None and kernel.dim != dim:
        raise DataError(f"kernel expects dim {kernel.dim}, embeddings have dim {dim}")


def score_trials(kernel, embeddings, enrollment, trials, threads=1):
    """Mean kernel score of each trial's enrollment utterances vs. its test utterance."""
    _check_kernel(kernel, embeddings.dim)
    if enrollment is None:
        enrollment = EnrollmentMap.identity(trials.enroll)
    for k, (m, t) in enumerate(zip(trials.enroll, trials.test), 1):
        if m not in enrollment.models:
            raise DataError(f"unknown model {m!r}", record=k)
        if t not in embeddings.index:
            raise DataError(f"unknown test utterance {t!r}", record=k)
    model_ids = list(dict.fromkeys(trials.enroll))
    A_m, U_m = _model_sides(kernel, embeddings, enrollment, model_ids)
    test_ids = list(dict.fromkeys(trials.test))
    a_t, _, V_t = kernel.sides(embeddings.vectors[embeddings.rows(test_ids)])
    mpos = {m: i for i, m in enumerate(model_ids)}
    tpos = {t: i for i, t in enumerate(test_ids)}
    mi = np.fromiter((mpos[m] for m in trials.enroll), dtype=np.intp, count=len(trials))
    ti = np.fromiter((tpos[t] for t in trials.test), dtype=np.intp, count=len(trials))
    out = np.empty(len(trials))

    def block(start):
        sl = slice(start, start + BLOCK)
        i, j = mi[sl], ti[sl]
        out[sl] = _rowdot(U_m[i], V_t[j])
        if getattr(kernel, "side_terms", True):
            out[sl] += A_m[i] + a_t[j] + kernel.const

    starts = range(0, len(trials), BLOCK)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(block, starts))
    else:
        for s in starts:
            block(s)
    return ScoreSet.for_trials(trials, out)


def score_trials_cosine(embeddings, enrollment, trials, threads=1):
    return score_trials(CosineKernel(), embeddings, enrollment, trials, threads)


def build_cohort_scores(embeddings, cohort, kernel, enrollment=None, test_ids=None):
    """Scores of every enrollment model and every test utterance against a cohort.

    Models are scored with the same mean-over-enrollment convention as the
    trial scores. ``enrollment=None`` treats each embedding as its own model;
    ``test_ids=None`` scores every embedding as a test side.

    Returns:
      (model_id -> cohort score array, test_id -> cohort score array)
    """
    if len(cohort) == 0:
        raise DataError("cohort is empty")
    if cohort.dim != embeddings.dim:
        raise DataError(f"cohort dim {cohort.dim} does not match embeddings dim {embeddings.dim}")
    _check_kernel(kernel, embeddings.dim)
    if enrollment is None:
        enrollment = EnrollmentMap.identity(embeddings.ids)
    if test_ids is None:
        test_ids = embeddings.ids
    test_ids = list(dict.fromkeys(test_ids))
    a_c, _, V_c = kernel.sides(cohort.vectors)
    model_ids = list(enrollment.models)
    A_m, U_m = _model_sides(kernel, embeddings, enrollment, model_ids)
    S_m = A_m[:, None] + a_c[None, :] + U_m @ V_c.T + kernel.const
    a_t, U_t, _ = kernel.sides(embeddings.vectors[embeddings.rows(test_ids)])
    S_t = a_t[:, None] + a_c[None, :] + U_t @ V_c.T + kernel.const
    return dict(zip(model_ids, S_m)), dict(zip(test_ids, S_t))


def top_count(n, top_fraction):
    return max(2, math.floor(top_fraction * n + 1e-9))


def cohort_stats(scores, top_fraction, side="", ident=""):
    """Mean and population std of the top-K cohort scores.

    Ties at the K-th score keep the earlier cohort entries.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        raise DataError(f"{side} cohort for {ident!r} has {scores.size} scores, need >= 2")
    k = top_count(scores.size, top_fraction)
    top = scores[np.argsort(-scores, kind="stable")[:k]]
    mu = top.mean()
    sd = np.sqrt(np.mean((top - mu) ** 2))
    if not sd > 0:
        raise NumericalError(f"{side} cohort for {ident!r}: zero std over top {k} scores")
    return mu, sd


def adaptive_snorm(raw, enroll_cohort_scores, test_cohort_scores, top_fraction=0.30):
    """Adaptive s-norm: average of the two per-side z-normalized scores.

    Args:
      raw: ScoreSet of raw trial scores.
      enroll_cohort_scores: enroll id -> scores of that model against the cohort.
      test_cohort_scores: test id -> scores of that utterance against the cohort.
      top_fraction: share of highest cohort scores used per side.

    Returns:
      ScoreSet in the same trial order.
    """
    if not 0 < top_fraction <= 1:
        raise DataError(f"top_fraction must be in (0, 1], got {top_fraction}")

    def stats(ids, table, side):
        cache = {}
        mu, sd = np.empty(len(ids)), np.empty(len(ids))
        for k, i in enumerate(ids):
            if i not in cache:
                try:
                    cache[i] = cohort_stats(table[i], top_fraction, side, i)
                except KeyError:
                    raise DataError(f"no {side} cohort scores for {i!r}", record=k + 1) from None
            mu[k], sd[k] = cache[i]
        return mu, sd

    mu_e, sd_e = stats(raw.enroll, enroll_cohort_scores, "enroll")
    mu_t, sd_t = stats(raw.test, test_cohort_scores, "test")
    s = raw.scores
    out = 0.5 * ((s - mu_e) / sd_e + (s - mu_t) / sd_t)
    return ScoreSet(raw.enroll, raw.test, out)
