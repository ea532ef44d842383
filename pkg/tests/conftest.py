import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from svbackend.data import EmbeddingSet, ScoreSet, TrialKey  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_scores(tar, non):
    """ScoreSet and TrialKey from target / nontarget score lists."""
    tar, non = list(tar), list(non)
    n = len(tar) + len(non)
    enroll = [f"m{i}" for i in range(n)]
    test = [f"t{i}" for i in range(n)]
    labels = np.array([True] * len(tar) + [False] * len(non))
    return ScoreSet(enroll, test, np.array(tar + non, dtype=float)), TrialKey(enroll, test, labels)


def random_set(rng, n, dim, labeled=True, n_speakers=None):
    ids = [f"u{i:05d}" for i in range(n)]
    spks = None
    if labeled:
        k = n_speakers or max(1, n // 4)
        spks = [f"s{i % k:04d}" for i in range(n)]
    return EmbeddingSet(ids, rng.standard_normal((n, dim)), spks)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in mod.RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name:<18} {detail}")
