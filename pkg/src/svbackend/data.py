"""Embedding, trial and score containers and their on-disk formats.

Binary embedding layout (little-endian)::

    b"SVE1" | u32 dim | u64 count | count x record
    record := u16 len | utf-8 utt_id | u8 has_speaker | [u16 len | utf-8 spk_id] | dim x f64

Text embedding layout: a header ``#dim=D labeled=0|1`` followed by one
``utt_id [spk_id] v1 ... vD`` line per record, values written with 17
significant digits.

Trial lists, keys, scores and enrollment maps are tab-separated UTF-8 text
with LF line endings. Columns beyond the required ones are ignored on
trial and key files so NIST-style side information can stay in place.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError

EMB_MAGIC = b"SVE1"
TARGET, NONTARGET = "target", "nontarget"


def _readonly(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _same_bits(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return a.shape == b.shape and np.array_equal(a.view(np.uint64), b.view(np.uint64))


def _check_unique(pairs, what):
    seen = set()
    for i, p in enumerate(pairs, 1):
        if p in seen:
            raise DataError(f"duplicate {what} {p!r}", record=i)
        seen.add(p)


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Utterance embeddings, optionally labeled with speaker ids.

    ``vectors`` is an (n, dim) float64 array; row i belongs to ``ids[i]``.
    Either every record carries a speaker id or none does.
    """

    ids: tuple
    vectors: np.ndarray
    speakers: tuple | None = None

    def __post_init__(self):
        ids = tuple(str(u) for u in self.ids)
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DataError(f"vectors must be 2-D, got shape {vectors.shape}")
        if vectors.shape[1] < 1:
            raise DataError("embedding dimension must be positive")
        if vectors.shape[0] != len(ids):
            raise DataError(f"{len(ids)} ids for {vectors.shape[0]} vectors")
        bad = ~np.isfinite(vectors).all(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"non-finite value in {ids[i]!r}", record=i + 1)
        _check_unique(ids, "utterance id")
        speakers = self.speakers
        if speakers is not None:
            speakers = tuple(str(s) for s in speakers)
            if len(speakers) != len(ids):
                raise DataError("speaker labels must cover every record")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", _readonly(vectors))
        object.__setattr__(self, "speakers", speakers)

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def labeled(self):
        return self.speakers is not None

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (self.ids == other.ids and self.speakers == other.speakers
                and _same_bits(self.vectors, other.vectors))

    __hash__ = None

    @cached_property
    def index(self):
        return {u: i for i, u in enumerate(self.ids)}

    def rows(self, ids, context="utterance"):
        """Row indices for ``ids``; unknown ids raise with their position."""
        index = self.index
        out = np.empty(len(ids), dtype=np.intp)
        for k, u in enumerate(ids):
            try:
                out[k] = index[u]
            except KeyError:
                raise DataError(f"unknown {context} id {u!r}", record=k + 1) from None
        return out

    def replace_vectors(self, vectors):
        return EmbeddingSet(self.ids, vectors, self.speakers)

    def speaker_index(self):
        """Return (speaker names in first-seen order, per-record speaker index)."""
        if self.speakers is None:
            raise DataError("embedding set is unlabeled")
        names, codes, lookup = [], np.empty(len(self), dtype=np.intp), {}
        for i, s in enumerate(self.speakers):
            if s not in lookup:
                lookup[s] = len(names)
                names.append(s)
            codes[i] = lookup[s]
        return names, codes

    def unlabeled(self):
        return EmbeddingSet(self.ids, self.vectors)


@dataclass(frozen=True)
class TrialList:
    enroll: tuple
    test: tuple

    def __post_init__(self):
        if len(self.enroll) != len(self.test):
            raise DataError("enroll and test columns differ in length")
        object.__setattr__(self, "enroll", tuple(self.enroll))
        object.__setattr__(self, "test", tuple(self.test))
        _check_unique(zip(self.enroll, self.test), "trial")

    def __len__(self):
        return len(self.enroll)

    def pairs(self):
        return list(zip(self.enroll, self.test))


@dataclass(frozen=True, eq=False)
class TrialKey:
    """Trials with ground truth; ``is_target`` is a boolean array."""

    enroll: tuple
    test: tuple
    is_target: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.is_target, dtype=bool).copy()
        labels.setflags(write=False)
        if not len(self.enroll) == len(self.test) == len(labels):
            raise DataError("key columns differ in length")
        object.__setattr__(self, "enroll", tuple(self.enroll))
        object.__setattr__(self, "test", tuple(self.test))
        object.__setattr__(self, "is_target", labels)
        _check_unique(zip(self.enroll, self.test), "trial")

    def __len__(self):
        return len(self.enroll)

    def __eq__(self, other):
        if not isinstance(other, TrialKey):
            return NotImplemented
        return (self.enroll == other.enroll and self.test == other.test
                and np.array_equal(self.is_target, other.is_target))

    __hash__ = None

    @property
    def trials(self):
        return TrialList(self.enroll, self.test)

    def require_both_classes(self):
        n_tar = int(self.is_target.sum())
        if n_tar == 0 or n_tar == len(self):
            raise DataError("key needs at least one target and one nontarget trial")


@dataclass(frozen=True, eq=False)
class ScoreSet:
    enroll: tuple
    test: tuple
    scores: np.ndarray

    def __post_init__(self):
        scores = _readonly(np.asarray(self.scores, dtype=np.float64).reshape(-1))
        if not len(self.enroll) == len(self.test) == len(scores):
            raise DataError("score columns differ in length")
        bad = ~np.isfinite(scores)
        if bad.any():
            raise DataError("non-finite score", record=int(np.flatnonzero(bad)[0]) + 1)
        object.__setattr__(self, "enroll", tuple(self.enroll))
        object.__setattr__(self, "test", tuple(self.test))
        object.__setattr__(self, "scores", scores)
        _check_unique(zip(self.enroll, self.test), "trial")

    def __len__(self):
        return len(self.scores)

    def __eq__(self, other):
        if not isinstance(other, ScoreSet):
            return NotImplemented
        return (self.enroll == other.enroll and self.test == other.test
                and _same_bits(self.scores, other.scores))

    __hash__ = None

    @classmethod
    def for_trials(cls, trials, scores):
        return cls(trials.enroll, trials.test, scores)

    @cached_property
    def index(self):
        return {p: i for i, p in enumerate(zip(self.enroll, self.test))}

    def aligned_to(self, enroll, test, exact=False):
        """Scores re-ordered to the (enroll, test) pairs given.

        Missing pairs raise. With ``exact`` the set must also contain no
        pairs beyond the requested ones.
        """
        index = self.index
        out = np.empty(len(enroll))
        for k, p in enumerate(zip(enroll, test)):
            try:
                out[k] = self.scores[index[p]]
            except KeyError:
                raise DataError(f"no score for trial {p!r}", record=k + 1) from None
        if exact and len(self) != len(enroll):
            raise DataError(f"score set has {len(self)} trials, expected {len(enroll)}")
        return out

    def split(self, key):
        """Target and nontarget score arrays for the keyed trials."""
        s = self.aligned_to(key.enroll, key.test)
        return s[key.is_target], s[~key.is_target]


@dataclass(frozen=True)
class EnrollmentMap:
    """Model id -> tuple of enrollment utterance ids."""

    models: dict

    def __post_init__(self):
        models = {}
        for i, (m, utts) in enumerate(dict(self.models).items(), 1):
            utts = tuple(utts)
            if not utts:
                raise DataError(f"model {m!r} has no enrollment utterances", record=i)
            models[m] = utts
        object.__setattr__(self, "models", models)

    @classmethod
    def identity(cls, ids):
        """Every utterance enrolls a model of the same name."""
        return cls({u: (u,) for u in dict.fromkeys(ids)})

    def __len__(self):
        return len(self.models)

    def __getitem__(self, model_id):
        return self.models[model_id]

    def validate(self, embeddings):
        for i, (m, utts) in enumerate(self.models.items(), 1):
            for u in utts:
                if u not in embeddings.index:
                    raise DataError(f"model {m!r}: unknown utterance {u!r}", record=i)


# ---------------------------------------------------------------------------
# embedding files


def write_embeddings(eset, path, format="binary"):
    if format == "binary":
        _write_binary(eset, path)
    elif format == "text":
        _write_text(eset, path)
    else:
        raise ValueError(f"unknown embedding format {format!r}")


def read_embeddings(path, format="binary"):
    if format == "binary":
        return _read_binary(path)
    if format == "text":
        return _read_text(path)
    raise ValueError(f"unknown embedding format {format!r}")


def guess_format(path):
    with open(path, "rb") as f:
        return "binary" if f.read(4) == EMB_MAGIC else "text"


def _encode_id(s):
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise DataError(f"identifier too long ({len(b)} bytes)")
    return struct.pack("<H", len(b)) + b


def _write_binary(eset, path):
    vecs = np.ascontiguousarray(eset.vectors, dtype="<f8")
    parts = [EMB_MAGIC, struct.pack("<IQ", eset.dim, len(eset))]
    for i, u in enumerate(eset.ids):
        parts.append(_encode_id(u))
        if eset.speakers is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01" + _encode_id(eset.speakers[i]))
        parts.append(vecs[i].tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def _read_binary(path):
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 16 or buf[:4] != EMB_MAGIC:
        raise DataError("malformed header: missing SVE1 magic")
    dim, count = struct.unpack_from("<IQ", buf, 4)
    if dim < 1:
        raise DataError("malformed header: dim must be positive")
    pos, nbytes = 16, 8 * dim
    ids, spks, rows = [], [], []
    try:
        for k in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            ids.append(buf[pos + 2:pos + 2 + n].decode("utf-8"))
            pos += 2 + n
            flag = buf[pos]
            pos += 1
            if flag == 1:
                (n,) = struct.unpack_from("<H", buf, pos)
                spks.append(buf[pos + 2:pos + 2 + n].decode("utf-8"))
                pos += 2 + n
            elif flag != 0:
                raise DataError(f"bad speaker flag {flag}", record=k + 1)
            if pos + nbytes > len(buf):
                raise DataError("truncated vector", record=k + 1)
            rows.append(np.frombuffer(buf, dtype="<f8", count=dim, offset=pos))
            pos += nbytes
    except (struct.error, IndexError, UnicodeDecodeError) as exc:
        raise DataError(f"truncated or corrupt record ({exc})", record=len(ids) + 1) from None
    if pos != len(buf):
        raise DataError(f"{len(buf) - pos} trailing bytes after {count} records")
    if spks and len(spks) != len(ids):
        raise DataError("speaker ids present on some records only")
    vectors = np.array(rows, dtype=np.float64).reshape(count, dim)
    return EmbeddingSet(ids, vectors, spks or None)


def _write_text(eset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"#dim={eset.dim} labeled={int(eset.labeled)}\n")
        for i, u in enumerate(eset.ids):
            head = u if eset.speakers is None else f"{u} {eset.speakers[i]}"
            f.write(head + " " + " ".join(format(v, ".17g") for v in eset.vectors[i]) + "\n")


def _parse_header(line):
    fields = dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
    try:
        dim, labeled = int(fields["dim"]), fields["labeled"]
    except (KeyError, ValueError):
        raise DataError(f"malformed header {line!r}") from None
    if dim < 1 or labeled not in ("0", "1"):
        raise DataError(f"malformed header {line!r}")
    return dim, labeled == "1"


def _read_text(path):
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if not lines or not lines[0].startswith("#"):
        raise DataError("malformed header: expected '#dim=D labeled=0|1'")
    dim, labeled = _parse_header(lines[0])
    head = 2 if labeled else 1
    ids, spks, rows = [], [], []
    for k, line in enumerate(l for l in lines[1:] if l.strip()):
        tok = line.split()
        if len(tok) != head + dim:
            raise DataError(f"expected {dim} values, got {len(tok) - head}", record=k + 1)
        try:
            vals = [float(t) for t in tok[head:]]
        except ValueError:
            raise DataError("unparseable value", record=k + 1) from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError("non-finite value", record=k + 1)
        ids.append(tok[0])
        if labeled:
            spks.append(tok[1])
        rows.append(vals)
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return EmbeddingSet(ids, vectors, spks if labeled else None)


# ---------------------------------------------------------------------------
# tab-separated trial files


def _tsv_rows(path, ncols, strict=False):
    with open(path, encoding="utf-8") as f:
        for k, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) < ncols or (strict and len(cols) != ncols):
                raise DataError(f"expected {ncols} tab-separated columns, got {len(cols)}", record=k)
            yield k, cols


def read_trials(path):
    enroll, test = [], []
    for _, cols in _tsv_rows(path, 2):
        enroll.append(cols[0])
        test.append(cols[1])
    return TrialList(enroll, test)


def write_trials(trials, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e, t in zip(trials.enroll, trials.test):
            f.write(f"{e}\t{t}\n")


def read_key(path):
    enroll, test, labels = [], [], []
    for k, cols in _tsv_rows(path, 3):
        lab = cols[2].strip()
        if lab not in (TARGET, NONTARGET):
            raise DataError(f"unknown label {lab!r}", record=k)
        enroll.append(cols[0])
        test.append(cols[1])
        labels.append(lab == TARGET)
    return TrialKey(enroll, test, np.array(labels, dtype=bool))


def write_key(key, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e, t, y in zip(key.enroll, key.test, key.is_target):
            f.write(f"{e}\t{t}\t{TARGET if y else NONTARGET}\n")


def read_scores(path):
    enroll, test, scores = [], [], []
    for k, cols in _tsv_rows(path, 3, strict=True):
        try:
            scores.append(float(cols[2]))
        except ValueError:
            raise DataError(f"unparseable score {cols[2]!r}", record=k) from None
        enroll.append(cols[0])
        test.append(cols[1])
    return ScoreSet(enroll, test, np.array(scores))


def write_scores(scores, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e, t, s in zip(scores.enroll, scores.test, scores.scores):
            f.write(f"{e}\t{t}\t{s:.17g}\n")


def read_enrollment(path):
    models = {}
    for k, cols in _tsv_rows(path, 2, strict=True):
        if cols[0] in models:
            raise DataError(f"duplicate model id {cols[0]!r}", record=k)
        utts = [u for u in cols[1].split(",") if u]
        if not utts:
            raise DataError(f"model {cols[0]!r} has no enrollment utterances", record=k)
        models[cols[0]] = utts
    return EnrollmentMap(models)


def write_enrollment(enrollment, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for m, utts in enrollment.models.items():
            f.write(f"{m}\t{','.join(utts)}\n")


# ---------------------------------------------------------------------------
# binary parameter containers (LDA and PLDA models)


def write_container(path, magic, dims, arrays):
    parts = [magic, struct.pack(f"<{len(dims)}I", *dims)]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays]
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_container(path, magic, ndims, shapes):
    """Read a container; ``shapes`` maps the header dims to array shapes."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != magic:
        raise DataError(f"not a {magic.decode()} file: {path}")
    try:
        dims = struct.unpack_from(f"<{ndims}I", buf, 4)
    except struct.error:
        raise DataError(f"truncated header in {path}") from None
    pos, out = 4 + 4 * ndims, []
    for shape in shapes(*dims):
        n = int(np.prod(shape))
        if pos + 8 * n > len(buf):
            raise DataError(f"truncated payload in {path}")
        out.append(np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64))
        pos += 8 * n
    if pos != len(buf):
        raise DataError(f"trailing bytes in {path}")
    return dims, out
