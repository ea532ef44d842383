"""Two-covariance PLDA: x = mu + y + e, y ~ N(0, B), e ~ N(0, W)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .data import _same_bits, read_container, write_container
from .errors import DataError, NumericalError
from .scoring import _rowdot, score_trials

PLDA_MAGIC = b"SVP1"
LOG2PI = np.log(2 * np.pi)


class DegenerateDataWarning(UserWarning):
    pass


def _sym(a):
    return 0.5 * (a + a.T)


def _logdet(a, what):
    sign, val = np.linalg.slogdet(a)
    if sign <= 0:
        raise NumericalError(f"{what} is not positive definite")
    return val


@dataclass(frozen=True, eq=False)
class PldaModel:
    mu: np.ndarray
    B: np.ndarray
    W: np.ndarray
    loglik: tuple = ()  # training log-likelihood trace, not persisted

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        d = mu.shape[0]
        B = np.asarray(self.B, dtype=np.float64).reshape(d, d)
        W = np.asarray(self.W, dtype=np.float64).reshape(d, d)
        for name, m in (("B", B), ("W", W)):
            scale = max(float(np.abs(m).max()), 1.0)
            if np.abs(m - m.T).max() > 1e-10 * scale:
                raise DataError(f"{name} is not symmetric")
        try:
            np.linalg.cholesky(W)
        except np.linalg.LinAlgError:
            raise NumericalError("W is not positive definite") from None
        if np.linalg.eigvalsh(_sym(B)).min() < -1e-10 * max(float(np.abs(B).max()), 1.0):
            raise NumericalError("B is not positive semi-definite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "loglik", tuple(self.loglik))

    @property
    def dim(self):
        return self.mu.shape[0]

    def same_parameters(self, other):
        return all(_same_bits(a, b) for a, b in
                   ((self.mu, other.mu), (self.B, other.B), (self.W, other.W)))

    def save(self, path):
        write_container(path, PLDA_MAGIC, (self.dim,), (self.mu, self.B, self.W))

    @classmethod
    def load(cls, path):
        _, (mu, B, W) = read_container(path, PLDA_MAGIC, 1, lambda d: [(d,), (d, d), (d, d)])
        return cls(mu, B, W)

    @cached_property
    def kernel(self):
        return PldaKernel(self)


class PldaKernel:
    """LLR as ``0.5 e'Qe + 0.5 t'Qt + e'Pt + const`` on mean-removed vectors.

    With T = B + W and A = (T - B T^-1 B)^-1, the same-speaker covariance
    [[T, B], [B, T]] inverts to [[A, -T^-1 B A], [., A]], which gives
    Q = T^-1 - A and P = T^-1 B A.
    """

    name = "plda"

    def __init__(self, model):
        T = model.B + model.W
        T_inv = np.linalg.inv(T)
        S = _sym(T - model.B @ T_inv @ model.B)
        A = np.linalg.inv(S)
        self.mu = model.mu
        self.dim = model.dim
        self.Q = _sym(T_inv - A)
        self.P = _sym(T_inv @ model.B @ A)
        self.const = 0.5 * _logdet(T, "B + W") - 0.5 * _logdet(S, "T - B T^-1 B")

    def sides(self, X):
        Xc = np.asarray(X, dtype=np.float64) - self.mu
        return 0.5 * _rowdot(Xc @ self.Q, Xc), Xc @ self.P, Xc

    def pair(self, e, t):
        a, u, v = self.sides(np.vstack([e, t]))
        return float(a[0] + a[1] + u[0] @ v[1] + self.const)


def score_plda(model, enroll, test):
    """Same-speaker vs. different-speaker log-likelihood ratio of one pair."""
    e = np.asarray(enroll, dtype=np.float64).reshape(-1)
    t = np.asarray(test, dtype=np.float64).reshape(-1)
    if e.shape != (model.dim,) or t.shape != (model.dim,):
        raise DataError(f"expected vectors of dim {model.dim}")
    if not (np.isfinite(e).all() and np.isfinite(t).all()):
        raise DataError("non-finite input vector")
    return model.kernel.pair(e, t)


def score_trials_plda(model, embeddings, enrollment, trials, threads=1):
    return score_trials(model.kernel, embeddings, enrollment, trials, threads)


# ---------------------------------------------------------------------------
# EM training


class _Stats:
    """Per-speaker sufficient statistics grouped by utterance count."""

    def __init__(self, X, codes, n_spk):
        self.N, self.d = X.shape
        self.S = n_spk
        self.counts = np.bincount(codes, minlength=n_spk)
        sums = np.zeros((n_spk, self.d))
        np.add.at(sums, codes, X)
        self.means = sums / self.counts[:, None]
        resid = X - self.means[codes]
        self.scatter = resid.T @ resid  # pooled within-speaker scatter
        self.groups = [(int(n), np.flatnonzero(self.counts == n)) for n in np.unique(self.counts)]


def _loglik(st, mu, B, W):
    W_inv = np.linalg.inv(W)
    ll = -0.5 * st.N * st.d * LOG2PI
    ll -= 0.5 * (st.N - st.S) * _logdet(W, "W")
    ll -= 0.5 * np.sum(W_inv * st.scatter)
    for n, idx in st.groups:
        M = W + n * B
        D = st.means[idx] - mu
        sol = np.linalg.solve(M, D.T).T
        ll -= 0.5 * (len(idx) * _logdet(M, "W + nB") + n * np.sum(D * sol))
    return float(ll)


def _em_step(st, mu, B, W):
    z_hat = np.empty_like(st.means)
    post_cov = np.zeros_like(B)   # sum over speakers of Cov[z_s]
    w_extra = np.zeros_like(W)    # sum of n_s * Cov[z_s]
    for n, idx in st.groups:
        # posterior of the speaker mean z given the n-utterance average
        G = np.linalg.solve(B + W / n, B).T   # B (B + W/n)^-1
        C = _sym(B - G @ B)
        z_hat[idx] = mu + (st.means[idx] - mu) @ G.T
        post_cov += len(idx) * C
        w_extra += n * len(idx) * C
    mu_new = z_hat.mean(axis=0)
    dz = z_hat - mu_new
    B_new = _sym((post_cov + dz.T @ dz) / st.S)
    r = st.means - z_hat
    W_new = _sym((st.scatter + (r * st.counts[:, None]).T @ r + w_extra) / st.N)
    W_new += 1e-8 * np.trace(W_new) / st.d * np.eye(st.d)
    return mu_new, B_new, W_new


def train_plda(data, iters=20, tol=1e-6):
    """EM estimate of a two-covariance PLDA model from a labeled set.

    Starts from mu = sample mean and B = W = half the total covariance, and
    stops after ``iters`` iterations or once the relative log-likelihood gain
    drops below ``tol``. The log-likelihood trace is kept on ``model.loglik``.
    """
    names, codes = data.speaker_index()
    if len(names) < 2:
        raise DataError("PLDA training needs at least two speakers")
    if iters < 1 or tol <= 0:
        raise DataError("iters must be positive and tol > 0")
    X = data.vectors
    d = data.dim
    mu = X.mean(axis=0)
    total = (X - mu).T @ (X - mu) / len(X)
    B, W = 0.5 * total, 0.5 * total.copy()
    W = W + 1e-8 * np.trace(W) / d * np.eye(d)
    st = _Stats(X, codes, len(names))
    if st.counts.max() == 1:
        warnings.warn("every speaker has a single utterance: B and W are not identifiable; "
                      "returning the initial total-covariance split", DegenerateDataWarning, stacklevel=2)
        return PldaModel(mu, B, W)
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise NumericalError("total covariance is singular") from None
    trace = [_loglik(st, mu, B, W)]
    for it in range(1, iters + 1):
        mu, B, W = _em_step(st, mu, B, W)
        try:
            np.linalg.cholesky(W)
        except np.linalg.LinAlgError:
            raise NumericalError(f"W lost positive definiteness at EM iteration {it}") from None
        trace.append(_loglik(st, mu, B, W))
        if trace[-1] - trace[-2] < tol * abs(trace[-2]):
            break
    return PldaModel(mu, B, W, tuple(trace))


def max_psd_part(a):
    vals, vecs = np.linalg.eigh(_sym(a))
    return _sym((vecs * np.clip(vals, 0.0, None)) @ vecs.T)


def adapt_plda(model, indomain, alpha=0.5):
    """Unsupervised adaptation to an in-domain set.

    The mean moves toward the in-domain mean by ``alpha``. The PSD part of
    the excess in-domain total covariance over B + W is added to B and W in
    proportion to their traces, scaled by ``alpha``.
    """
    if not 0 <= alpha <= 1:
        raise DataError(f"alpha must be in [0, 1], got {alpha}")
    if len(indomain) == 0:
        raise DataError("in-domain set is empty")
    if indomain.dim != model.dim:
        raise DataError(f"in-domain dim {indomain.dim} does not match model dim {model.dim}")
    X = indomain.vectors
    m_in = X.mean(axis=0)
    T_in = (X - m_in).T @ (X - m_in) / len(X)
    T_out = model.B + model.W
    excess = max_psd_part(T_in - T_out)
    tr = np.trace(T_out)
    mu = (1 - alpha) * model.mu + alpha * m_in
    B = model.B + alpha * excess * (np.trace(model.B) / tr)
    W = model.W + alpha * excess * (np.trace(model.W) / tr)
    return PldaModel(mu, B, W)
