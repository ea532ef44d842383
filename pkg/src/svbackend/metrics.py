"""Detection metrics: EER, minDCF, actDCF and DET points.

A trial is accepted as target when ``score >= threshold``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class DcfParams:
    p_target: float
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0 < self.p_target < 1:
            raise DataError(f"p_target must be in (0, 1), got {self.p_target}")
        if not (self.c_miss > 0 and self.c_fa > 0):
            raise DataError("costs must be positive")

    @property
    def normalizer(self):
        return min(self.c_miss * self.p_target, self.c_fa * (1 - self.p_target))

    @property
    def bayes_threshold(self):
        return math.log(self.c_fa * (1 - self.p_target) / (self.c_miss * self.p_target))

    def cost(self, p_miss, p_fa):
        """Normalized detection cost at the given error rates."""
        return (self.c_miss * self.p_target * p_miss
                + self.c_fa * (1 - self.p_target) * p_fa) / self.normalizer


DEFAULT_PARAMS = (DcfParams(0.01), DcfParams(0.005))


@dataclass(frozen=True, eq=False)
class ErrorProfile:
    """Operating points in increasing threshold order.

    ``thresholds`` are -inf, the midpoints between adjacent distinct scores,
    and +inf. ``n_miss``/``n_fa`` are the integer error counts behind
    ``p_miss``/``p_fa``.
    """

    thresholds: np.ndarray
    n_miss: np.ndarray
    n_fa: np.ndarray
    n_tar: int
    n_non: int

    @property
    def p_miss(self):
        return self.n_miss / self.n_tar

    @property
    def p_fa(self):
        return self.n_fa / self.n_non

    def __len__(self):
        return len(self.thresholds)


def _split(scores, key):
    key.require_both_classes()
    return scores.split(key)


def profile_from_arrays(tar, non):
    tar = np.sort(np.asarray(tar, dtype=np.float64))
    non = np.sort(np.asarray(non, dtype=np.float64))
    if tar.size == 0 or non.size == 0:
        raise DataError("need at least one target and one nontarget score")
    uniq = np.unique(np.concatenate([tar, non]))
    inner = uniq[:-1]
    mids = 0.5 * inner + 0.5 * uniq[1:]
    n_miss = np.concatenate([[0], np.searchsorted(tar, inner, side="right"), [tar.size]])
    n_fa = np.concatenate([[non.size], non.size - np.searchsorted(non, inner, side="right"), [0]])
    thr = np.concatenate([[-np.inf], mids, [np.inf]])
    return ErrorProfile(thr, n_miss.astype(np.int64), n_fa.astype(np.int64), tar.size, non.size)


def error_profile(scores, key):
    return profile_from_arrays(*_split(scores, key))


def eer(profile):
    """Equal error rate on the linearly interpolated ROC steps.

    Computed from integer counts so the result is the exact crossing
    rounded once to a float.
    """
    n_t, n_n = int(profile.n_tar), int(profile.n_non)
    miss = [int(v) for v in profile.n_miss]
    fa = [int(v) for v in profile.n_fa]
    for i in range(len(miss)):
        d_i = miss[i] * n_n - fa[i] * n_t
        if d_i == 0:
            return miss[i] / n_t
        if d_i > 0:
            j = i - 1
            d_j = miss[j] * n_n - fa[j] * n_t
            num = miss[j] * (d_j - d_i) + d_j * (miss[i] - miss[j])
            return num / (n_t * (d_j - d_i))
    raise AssertionError("ROC never reaches p_miss = 1")


def min_dcf(profile, params):
    """Minimum normalized DCF and the (lowest) threshold attaining it."""
    costs = params.cost(profile.p_miss, profile.p_fa)
    i = int(np.argmin(costs))
    return float(costs[i]), float(profile.thresholds[i])


def act_dcf(scores, key, params):
    """Normalized DCF at the Bayes threshold, treating scores as LLRs."""
    tar, non = _split(scores, key)
    return act_dcf_arrays(tar, non, params)


def act_dcf_arrays(tar, non, params):
    theta = params.bayes_threshold
    p_miss = np.count_nonzero(tar < theta) / tar.size
    p_fa = np.count_nonzero(non >= theta) / non.size
    return float(params.cost(p_miss, p_fa))


def primary_dcf(scores, key, params_list=DEFAULT_PARAMS):
    """Mean minDCF over several operating points."""
    if not params_list:
        raise DataError("params_list is empty")
    prof = error_profile(scores, key)
    return float(np.mean([min_dcf(prof, p)[0] for p in params_list]))


def primary_act_dcf(scores, key, params_list=DEFAULT_PARAMS):
    if not params_list:
        raise DataError("params_list is empty")
    tar, non = _split(scores, key)
    return float(np.mean([act_dcf_arrays(tar, non, p) for p in params_list]))


def det_points(profile):
    return list(zip(profile.p_miss.tolist(), profile.p_fa.tolist()))


def evaluate(scores, key, params_list=DEFAULT_PARAMS):
    """EER, averaged minDCF and averaged actDCF of one score set."""
    if not params_list:
        raise DataError("params_list is empty")
    tar, non = _split(scores, key)
    prof = profile_from_arrays(tar, non)
    return {
        "eer": eer(prof),
        "min_dcf": float(np.mean([min_dcf(prof, p)[0] for p in params_list])),
        "act_dcf": float(np.mean([act_dcf_arrays(tar, non, p) for p in params_list])),
    }


def format_report(rows, tsv=False):
    """Render ``[(system, metrics-dict or None for actDCF), ...]`` as a table.

    EER is shown in percent with two decimals, DCFs with three; a missing
    actDCF prints as ``-``.
    """
    header = ("system", "EER%", "minDCF", "actDCF")
    body = []
    for name, m in rows:
        act = "-" if m.get("act_dcf") is None else f"{m['act_dcf']:.3f}"
        body.append((name, f"{100 * m['eer']:.2f}", f"{m['min_dcf']:.3f}", act))
    if tsv:
        return "\n".join("\t".join(r) for r in [header, *body]) + "\n"
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(4)]
    fmt = lambda r: "  ".join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])])
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
    return "\n".join(lines) + "\n"
