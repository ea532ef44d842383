"""Speaker-verification back-end: LDA, PLDA, cosine scoring, AS-norm,
calibration/fusion and NIST-style detection metrics on fixed embeddings."""

from .data import (
    EmbeddingSet,
    EnrollmentMap,
    ScoreSet,
    TrialKey,
    TrialList,
    read_embeddings,
    read_enrollment,
    read_key,
    read_scores,
    read_trials,
    write_embeddings,
    write_enrollment,
    write_key,
    write_scores,
    write_trials,
)
from .errors import DataError, NumericalError

__version__ = "0.1.0"
