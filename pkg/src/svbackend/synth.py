"""Synthetic embedding populations drawn from the two-covariance model.

Each speaker s gets a latent mean ``y_s ~ N(global_mean, between_cov)`` and
each of its utterances is ``x ~ N(y_s, within_cov)``.

Random numbers come from a counter-based generator that is simple enough to
re-implement anywhere (all arithmetic mod 2**64)::

    GAMMA = 0x9E3779B97F4A7C15
    mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)
    key(seed, stream) = mix(mix(seed) + (stream + 1) * GAMMA)
    word(key, i)      = mix(key + (i + 1) * GAMMA)
    uniform(key, i)   = ((word(key, i) >> 11) + 0.5) * 2**-53        # in (0, 1)
    normal pair j:      r = sqrt(-2 ln uniform(2j)), a = 2 pi uniform(2j + 1)
                        z[2j] = r cos a,  z[2j + 1] = r sin a

Speaker s of a population reads stream ``s``: its first ``dim`` normals
drive the latent mean, then utterance u consumes normals
``dim * (1 + u) ... dim * (2 + u) - 1``. Covariance factors are lower
Cholesky factors ``L`` with sample ``mean + L @ z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import EmbeddingSet, EnrollmentMap, TrialKey, TrialList
from .errors import DataError, NumericalError

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1, _M2 = 0xBF58476D1CE4E5B9, 0x94D049BB133111EB


def _mix_int(z):
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def _mix_array(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_key(seed, stream):
    return _mix_int(_mix_int(seed) + (stream + 1) * GAMMA)


def uniforms(key, n, start=0):
    """``n`` uniforms in (0, 1) from positions ``start .. start+n-1`` of a stream."""
    i = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key) + i * np.uint64(GAMMA)
    w = _mix_array(z)
    return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(key, n):
    """First ``n`` standard normals of a stream (Box-Muller on uniform pairs)."""
    pairs = (n + 1) // 2
    u = uniforms(key, 2 * pairs).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log(u[:, 0]))
    a = 2.0 * math.pi * u[:, 1]
    z = np.empty((pairs, 2))
    z[:, 0] = r * np.cos(a)
    z[:, 1] = r * np.sin(a)
    return z.reshape(-1)[:n]


def psd_factor(cov, name="covariance", strict=False):
    """Lower factor L with L @ L.T == cov.

    Plain Cholesky first. Singular PSD matrices (allowed for the between-speaker
    covariance unless ``strict``) fall back to a symmetric eigen square root.
    """
    cov = np.asarray(cov, dtype=np.float64)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        if strict:
            raise NumericalError(f"{name} is not positive definite (Cholesky failed)") from None
    vals, vecs = np.linalg.eigh(cov)
    scale = max(float(np.abs(vals).max()), 1.0)
    if vals.min() < -1e-10 * scale:
        raise NumericalError(f"{name} is not positive semi-definite (min eigenvalue {vals.min():.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class GenerativeConfig:
    dim: int
    n_speakers: int
    utts_per_speaker: int
    between_cov: np.ndarray
    within_cov: np.ndarray
    global_mean: np.ndarray = None
    seed: int = 0
    prefix: str = field(default="spk")

    def __post_init__(self):
        for name in ("dim", "n_speakers", "utts_per_speaker"):
            if int(getattr(self, name)) < 1:
                raise DataError(f"{name} must be a positive integer")
        if not 0 <= int(self.seed) <= MASK:
            raise DataError("seed must be an unsigned 64-bit integer")
        d = int(self.dim)
        mean = np.zeros(d) if self.global_mean is None else np.asarray(self.global_mean, dtype=np.float64)
        if mean.shape != (d,):
            raise DataError(f"global_mean must have {d} components")
        covs = []
        for name in ("between_cov", "within_cov"):
            c = np.asarray(getattr(self, name), dtype=np.float64)
            if c.shape != (d, d):
                raise DataError(f"{name} must be {d}x{d}, got {c.shape}")
            if np.abs(c - c.T).max(initial=0.0) > 1e-12:
                raise DataError(f"{name} is not symmetric")
            covs.append(c)
        if np.linalg.eigvalsh(covs[1]).min() <= 0:
            raise DataError("within_cov must be positive definite")
        object.__setattr__(self, "global_mean", mean)
        object.__setattr__(self, "between_cov", covs[0])
        object.__setattr__(self, "within_cov", covs[1])


def generate(config):
    """Draw a labeled EmbeddingSet; identical configs give identical output."""
    d, n_spk, n_utt = config.dim, config.n_speakers, config.utts_per_speaker
    lb = psd_factor(config.between_cov, "between_cov")
    lw = psd_factor(config.within_cov, "within_cov", strict=True)
    z = np.empty((n_spk, (1 + n_utt) * d))
    for s in range(n_spk):
        z[s] = normals(stream_key(config.seed, s), (1 + n_utt) * d)
    z = z.reshape(n_spk, 1 + n_utt, d)
    latent = config.global_mean + z[:, 0] @ lb.T
    x = latent[:, None, :] + z[:, 1:] @ lw.T
    ids, spks = [], []
    for s in range(n_spk):
        name = f"{config.prefix}{s:05d}"
        for u in range(n_utt):
            ids.append(f"{name}-{u:03d}")
            spks.append(name)
    return EmbeddingSet(ids, x.reshape(n_spk * n_utt, d), spks)


def make_two_domain(config_out, config_in):
    """Out-of-domain training set and in-domain set with disjoint speaker names."""
    if config_out.dim != config_in.dim:
        raise DataError(f"dimension mismatch: {config_out.dim} vs {config_in.dim}")
    out = generate(_with_prefix(config_out, "out"))
    ind = generate(_with_prefix(config_in, "in"))
    return out, ind


def _with_prefix(cfg, prefix):
    return GenerativeConfig(cfg.dim, cfg.n_speakers, cfg.utts_per_speaker, cfg.between_cov,
                            cfg.within_cov, cfg.global_mean, cfg.seed, prefix)


def make_trials(eset, n_enroll=1, nontargets_per_model=10, seed=0):
    """Build an enrollment map, trial list and key from a labeled set.

    The first ``n_enroll`` utterances of each speaker enroll model
    ``<speaker>``; its remaining utterances are target tests. Nontarget
    tests are drawn per model from the other speakers' test utterances
    using stream ``2**32 + model index`` of the generator above.
    """
    names, codes = eset.speaker_index()
    models, tests = {}, []
    start = []
    for m, name in enumerate(names):
        utts = [eset.ids[i] for i in np.flatnonzero(codes == m)]
        if len(utts) <= n_enroll:
            raise DataError(f"speaker {name!r} has no utterances left for testing")
        models[name] = utts[:n_enroll]
        start.append(len(tests))
        tests.extend(utts[n_enroll:])
    start.append(len(tests))
    enroll, test, labels = [], [], []
    for m, name in enumerate(names):
        lo, hi = start[m], start[m + 1]
        for u in tests[lo:hi]:
            enroll.append(name); test.append(u); labels.append(True)
        # own test block [lo, hi) is skipped by shifting indices past it
        n_pool = len(tests) - (hi - lo)
        k = min(nontargets_per_model, n_pool)
        for j in _sample_without_replacement(stream_key(seed, (1 << 32) + m), n_pool, k):
            enroll.append(name); test.append(tests[j if j < lo else j + hi - lo]); labels.append(False)
    key = TrialKey(enroll, test, np.array(labels))
    return EnrollmentMap(models), TrialList(enroll, test), key


def _sample_without_replacement(key, n, k):
    # partial Fisher-Yates over a sparse swap table, driven by the stream's uniforms
    swapped, picks = {}, []
    u = uniforms(key, k)
    for i in range(k):
        j = i + min(int(u[i] * (n - i)), n - i - 1)
        picks.append(swapped.get(j, j))
        swapped[j] = swapped.get(i, i)
    return sorted(picks)


# ---------------------------------------------------------------------------
# key=value config files

CONFIG_KEYS = ("dim", "n_speakers", "utts_per_speaker", "between", "within", "mean", "seed", "prefix")


def parse_matrix(text, dim, base=None):
    """Covariance from ``diag:v1,...``, ``iso:v`` or a whitespace matrix file."""
    text = text.strip()
    if text.startswith("iso:"):
        return float(text[4:]) * np.eye(dim)
    if text.startswith("diag:"):
        vals = [float(v) for v in text[5:].split(",") if v.strip()]
        if len(vals) != dim:
            raise DataError(f"diag: needs {dim} values, got {len(vals)}")
        return np.diag(vals)
    path = Path(text[5:] if text.startswith("file:") else text)
    if base is not None and not path.is_absolute():
        path = Path(base) / path
    try:
        m = np.loadtxt(path, ndmin=2)
    except OSError:
        raise DataError(f"cannot read matrix file {path}") from None
    if m.shape != (dim, dim):
        raise DataError(f"matrix file {path} has shape {m.shape}, expected ({dim}, {dim})")
    return m


def parse_vector(text, dim):
    """Mean vector from ``zero``, ``const:v`` or ``v1,v2,...``."""
    text = text.strip()
    if text in ("", "zero"):
        return np.zeros(dim)
    if text.startswith("const:"):
        return np.full(dim, float(text[6:]))
    vals = np.array([float(v) for v in text.split(",") if v.strip()])
    if vals.shape != (dim,):
        raise DataError(f"mean needs {dim} values, got {vals.size}")
    return vals


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for k, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"expected key=value in {path}", record=k)
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def config_from_mapping(values, base=None):
    try:
        dim = int(values["dim"])
        return GenerativeConfig(
            dim=dim,
            n_speakers=int(values["n_speakers"]),
            utts_per_speaker=int(values["utts_per_speaker"]),
            between_cov=parse_matrix(str(values.get("between", "iso:1")), dim, base),
            within_cov=parse_matrix(str(values.get("within", "iso:1")), dim, base),
            global_mean=parse_vector(str(values.get("mean", "zero")), dim),
            seed=int(values.get("seed", 0)),
            prefix=str(values.get("prefix", "spk")),
        )
    except KeyError as exc:
        raise DataError(f"missing config key {exc.args[0]!r}") from None
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"bad config value: {exc}") from None
