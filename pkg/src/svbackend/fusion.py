"""Linear score calibration and fusion by prior-weighted logistic regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import ScoreSet
from .errors import DataError, NumericalError


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    weights: np.ndarray
    offset: float
    effective_prior: float = 0.05

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if w.ndim != 1 or w.size < 1 or not np.isfinite(w).all():
            raise DataError("weights must be a non-empty finite vector")
        if not np.isfinite(self.offset):
            raise DataError("offset must be finite")
        if not 0 < self.effective_prior < 1:
            raise DataError("effective_prior must be in (0, 1)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "effective_prior", float(self.effective_prior))

    @property
    def n_systems(self):
        return self.weights.size

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"prior={self.effective_prior!r}\n")
            f.write(f"offset={self.offset!r}\n")
            for i, w in enumerate(self.weights, 1):
                f.write(f"w_{i}={float(w)!r}\n")

    @classmethod
    def load(cls, path):
        fields = {}
        with open(path, encoding="utf-8") as f:
            for k, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError("expected key=value", record=k)
                key, val = line.split("=", 1)
                try:
                    fields[key.strip()] = float(val)
                except ValueError:
                    raise DataError(f"bad number {val!r}", record=k) from None
        try:
            n = sum(1 for key in fields if key.startswith("w_"))
            weights = [fields[f"w_{i}"] for i in range(1, n + 1)]
            return cls(weights, fields["offset"], fields["prior"])
        except KeyError as exc:
            raise DataError(f"calibration file {path} lacks {exc.args[0]!r}") from None


def stack_scores(score_sets, enroll, test, exact=False):
    """(n_trials, n_systems) matrix aligned by (enroll, test) pair."""
    if not score_sets:
        raise DataError("at least one score set is required")
    return np.column_stack([s.aligned_to(enroll, test, exact=exact) for s in score_sets])


def _softplus(x):
    return np.logaddexp(0.0, x)


class _Objective:
    """Prior-weighted logistic loss over theta = (weights..., offset)."""

    def __init__(self, S, is_target, prior, ridge):
        self.S = S
        self.tar, self.non = is_target, ~is_target
        n_tar, n_non = int(is_target.sum()), int((~is_target).sum())
        self.c_tar = prior / n_tar
        self.c_non = (1 - prior) / n_non
        self.shift = logit(prior)
        self.ridge = ridge
        self.X = np.column_stack([S, np.ones(len(S))])

    def value(self, theta):
        f = self.X @ theta + self.shift
        w = theta[:-1]
        return (self.c_tar * _softplus(-f[self.tar]).sum()
                + self.c_non * _softplus(f[self.non]).sum()
                + self.ridge * w @ w)

    def grad_hess(self, theta):
        f = self.X @ theta + self.shift
        p = expit(f)
        # d/df: targets -(1 - p), nontargets p
        g_f = np.where(self.tar, -self.c_tar * (1 - p), self.c_non * p)
        h_f = np.where(self.tar, self.c_tar, self.c_non) * p * (1 - p)
        g = self.X.T @ g_f
        H = (self.X * h_f[:, None]).T @ self.X
        k = theta.size - 1
        g[:k] += 2 * self.ridge * theta[:k]
        H[:k, :k] += 2 * self.ridge * np.eye(k)
        return g, H


def _newton(obj, theta, max_iter=200, gtol=1e-8):
    value = obj.value(theta)
    for _ in range(max_iter):
        g, H = obj.grad_hess(theta)
        if np.linalg.norm(g) < gtol:
            return theta
        # least-squares step tolerates the rank-deficient Hessian of constant scores
        step = np.linalg.lstsq(H, -g, rcond=None)[0]
        if not g @ step < 0:
            step = -g
        t = 1.0
        while True:
            cand = theta + t * step
            v = obj.value(cand)
            if v <= value + 1e-4 * t * (g @ step) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 and v > value:
            # no representable decrease left along the step
            return theta
        theta, value = cand, v
    return theta


def train_fusion(score_sets, key, effective_prior=0.05, ridge=0.0, init=None):
    """Fit fusion weights and offset by prior-weighted logistic regression.

    The loss is convex, so any ``init`` reaches the same optimum; Newton
    iterations stop at gradient norm 1e-8 or after 200 steps.
    """
    if not 0 < effective_prior < 1:
        raise DataError("effective_prior must be in (0, 1)")
    if ridge < 0:
        raise DataError("ridge must be non-negative")
    key.require_both_classes()
    S = stack_scores(score_sets, key.enroll, key.test, exact=True)
    obj = _Objective(S, key.is_target, effective_prior, ridge)
    theta = np.zeros(S.shape[1] + 1) if init is None else np.asarray(init, dtype=np.float64).copy()
    if theta.shape != (S.shape[1] + 1,):
        raise DataError(f"init must have {S.shape[1] + 1} entries")
    theta = _newton(obj, theta)
    if not np.isfinite(theta).all():
        raise NumericalError("fusion optimizer diverged")
    return CalibrationModel(theta[:-1], theta[-1], effective_prior)


def fusion_gradient(model, score_sets, key, ridge=0.0):
    """Gradient of the training loss at ``model``; zero at the optimum."""
    S = stack_scores(score_sets, key.enroll, key.test, exact=True)
    obj = _Objective(S, key.is_target, model.effective_prior, ridge)
    return obj.grad_hess(np.append(model.weights, model.offset))[0]


def apply_fusion(model, score_sets, manual_offset=0.0):
    """Fused score per trial, in the trial order of the first score set."""
    if len(score_sets) != model.n_systems:
        raise DataError(f"model fuses {model.n_systems} systems, got {len(score_sets)} score sets")
    ref = score_sets[0]
    S = stack_scores(score_sets, ref.enroll, ref.test, exact=True)
    return ScoreSet(ref.enroll, ref.test, S @ model.weights + model.offset + manual_offset)


def cllr(scores, key):
    """Log-likelihood-ratio cost in bits."""
    key.require_both_classes()
    tar, non = scores.split(key)
    return 0.5 * (np.mean(_softplus(-tar)) + np.mean(_softplus(non))) / np.log(2)
