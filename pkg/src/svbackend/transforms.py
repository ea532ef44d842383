"""Linear pre-processing: LDA projection and length normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import EmbeddingSet, read_container, write_container
from .errors import DataError, NumericalError

LDA_MAGIC = b"SVL1"


@dataclass(frozen=True, eq=False)
class LdaTransform:
    mean: np.ndarray        # (in_dim,)
    projection: np.ndarray  # (out_dim, in_dim)
    eigenvalues: np.ndarray | None = None  # fit-time only, not persisted

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        proj = np.atleast_2d(np.asarray(self.projection, dtype=np.float64))
        if proj.shape[1] != mean.shape[0] or proj.shape[0] < 1:
            raise DataError(f"projection {proj.shape} does not match mean of {mean.shape[0]}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "projection", proj)

    @property
    def in_dim(self):
        return self.projection.shape[1]

    @property
    def out_dim(self):
        return self.projection.shape[0]

    def save(self, path):
        write_container(path, LDA_MAGIC, (self.in_dim, self.out_dim), (self.mean, self.projection))

    @classmethod
    def load(cls, path):
        _, (mean, proj) = read_container(path, LDA_MAGIC, 2, lambda i, o: [(i,), (o, i)])
        return cls(mean, proj)


def class_scatter(X, codes, n_classes):
    """Global mean, between-class and pooled within-class scatter.

    Between: count-weighted outer products of class-mean offsets, divided by N.
    Within: pooled centered outer products, divided by N - n_classes.
    """
    N = X.shape[0]
    counts = np.bincount(codes, minlength=n_classes).astype(np.float64)
    sums = np.zeros((n_classes, X.shape[1]))
    np.add.at(sums, codes, X)
    means = sums / counts[:, None]
    mu = X.mean(axis=0)
    off = means - mu
    s_b = (off * counts[:, None]).T @ off / N
    resid = X - means[codes]
    dof = N - n_classes
    s_w = resid.T @ resid / dof if dof > 0 else np.zeros((X.shape[1], X.shape[1]))
    return mu, s_b, s_w


def fit_lda(data, out_dim, ridge=None):
    """Fit an LDA projection on a labeled set.

    Rows of the projection are generalized eigenvectors of
    (S_between, S_within + ridge*I) in decreasing eigenvalue order, scaled
    so the projected within-class scatter (ridge included) is the identity.
    ``ridge=None`` uses 1e-6 * trace(S_within) / dim.
    The retained generalized eigenvalues are kept on ``eigenvalues``.
    """
    names, codes = data.speaker_index()
    k, d = len(names), data.dim
    if k < 2:
        raise DataError("LDA needs at least two speakers")
    if not 1 <= out_dim <= min(d, k - 1):
        raise DataError(f"out_dim={out_dim} must be within [1, min(dim={d}, n_speakers-1={k - 1})]")
    mu, s_b, s_w = class_scatter(data.vectors, codes, k)
    if ridge is None:
        ridge = 1e-6 * np.trace(s_w) / d
    if ridge < 0:
        raise DataError("ridge must be non-negative")
    if ridge == 0:
        w_eig = np.linalg.eigvalsh(s_w)
        if w_eig[0] <= 1e-12 * max(w_eig[-1], np.finfo(float).tiny):
            raise NumericalError("within-class scatter is singular; use a positive ridge")
    s_w = s_w + ridge * np.eye(d)
    try:
        vals, vecs = scipy.linalg.eigh(s_b, s_w)
    except np.linalg.LinAlgError:
        raise NumericalError("within-class scatter is singular; use a positive ridge") from None
    order = np.argsort(vals, kind="stable")[::-1][:out_dim]
    proj = vecs[:, order].T
    for row in proj:
        nz = np.flatnonzero(np.abs(row) > 1e-12 * np.abs(row).max())
        if nz.size and row[nz[0]] < 0:
            row *= -1
    return LdaTransform(mu, proj, vals[order])


def apply_lda(t, eset, mean=None):
    """Project ``x -> P (x - mean)``; ``mean`` overrides the training mean."""
    if eset.dim != t.in_dim:
        raise DataError(f"LDA expects dim {t.in_dim}, got {eset.dim}")
    m = t.mean if mean is None else np.asarray(mean, dtype=np.float64)
    out = (eset.vectors - m) @ t.projection.T
    return EmbeddingSet(eset.ids, out.reshape(len(eset), t.out_dim), eset.speakers)


def length_normalize(eset):
    """Scale every vector to norm sqrt(dim)."""
    norms = np.linalg.norm(eset.vectors, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        i = int(zero[0])
        raise DataError(f"zero-norm vector {eset.ids[i]!r}", record=i + 1)
    out = eset.vectors * (np.sqrt(eset.dim) / norms)[:, None]
    return EmbeddingSet(eset.ids, out, eset.speakers)
