"""Scoring throughput benchmark on synthetic embeddings."""

from __future__ import annotations

import time

import numpy as np

from . import plda, scoring, synth
from .data import EnrollmentMap, TrialList
from .errors import DataError

MIN_TRIALS = 10_000


def synthetic_model(dim):
    return plda.PldaModel(np.zeros(dim), np.diag(np.linspace(2.0, 0.1, dim)), np.eye(dim))


def random_trials(enroll_ids, test_ids, n_trials, seed):
    n_t = len(test_ids)
    total = len(enroll_ids) * n_t
    if n_trials > total:
        raise DataError(f"only {total} distinct trials available, {n_trials} requested")
    picks = synth._sample_without_replacement(synth.stream_key(seed, 1 << 40), total, n_trials)
    return TrialList([enroll_ids[k // n_t] for k in picks], [test_ids[k % n_t] for k in picks])


def bench_fixture(model, n_utts, n_trials, cohort_size, seed=0):
    """Embeddings, trials and cohort drawn from ``model``."""
    if n_trials < MIN_TRIALS:
        raise DataError(f"bench needs at least {MIN_TRIALS} trials, got {n_trials}")
    d = model.dim
    cfg = synth.GenerativeConfig(d, max(1, n_utts // 2), 2, model.B, model.W, model.mu, seed, "bench")
    emb = synth.generate(cfg)
    coh = synth.generate(synth.GenerativeConfig(d, cohort_size, 1, model.B, model.W, model.mu,
                                                seed + 1, "cohort"))
    trials = random_trials(emb.ids[0::2], emb.ids[1::2], n_trials, seed)
    return emb, trials, coh


def time_config(kernel, emb, trials, coh, snorm, threads, top_fraction=0.30):
    t0 = time.perf_counter()
    scores = scoring.score_trials(kernel, emb, None, trials, threads)
    if snorm:
        e_coh, t_coh = scoring.build_cohort_scores(
            emb, coh, kernel, EnrollmentMap.identity(trials.enroll), trials.test)
        scores = scoring.adaptive_snorm(scores, e_coh, t_coh, top_fraction)
    return scores, time.perf_counter() - t0


def run_bench(model=None, dim=150, n_utts=2000, n_trials=100_000, cohort_size=1000,
              threads=1, seed=0, top_fraction=0.30):
    """Time plda/cosine scoring with and without AS-norm.

    Returns:
      (rows of (kernel, snorm, n_trials, seconds), scores identical for 1 vs N threads)
    """
    model = synthetic_model(dim) if model is None else model
    emb, trials, coh = bench_fixture(model, n_utts, n_trials, cohort_size, seed)
    kernels = (("plda", model.kernel), ("cosine", scoring.CosineKernel()))
    rows = []
    for name, kernel in kernels:
        for snorm in (False, True):
            _, secs = time_config(kernel, emb, trials, coh, snorm, threads, top_fraction)
            rows.append((name, snorm, len(trials), secs))
    n_alt = max(2, threads)
    invariant = all(
        scoring.score_trials(k, emb, None, trials, 1) == scoring.score_trials(k, emb, None, trials, n_alt)
        for _, k in kernels)
    return rows, invariant


def format_bench(rows, tsv=False):
    header = ("kernel", "snorm", "trials", "seconds", "trials_per_s", "latency_us")
    body = [(k, "yes" if s else "no", str(n), f"{t:.4f}", f"{n / t:.0f}", f"{1e6 * t / n:.3f}")
            for k, s, n, t in rows]
    if tsv:
        return "\n".join("\t".join(r) for r in [header, *body]) + "\n"
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header, *body]) + "\n"
