"""Core domain types: spectrograms, tri-state labels, vocabularies, clip records.

All types are immutable after construction (arrays are frozen with
``writeable = False``) and therefore safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Protocol, Sequence

import numpy as np

from .errors import ValidationError

# Target instrument classes, in the fixed lexicographic order used everywhere.
OPENMIC_INSTRUMENTS = (
    "accordion", "banjo", "bass", "cello", "clarinet", "cymbals", "drums",
    "flute", "guitar", "mallet_percussion", "mandolin", "organ", "piano",
    "saxophone", "synthesizer", "trombone", "trumpet", "ukulele", "violin",
    "voice",
)


class LabelState(IntEnum):
    """Per-class annotation state. MISSING marks an unannotated entry."""

    POSITIVE = 1
    NEGATIVE = 0
    MISSING = -1


class SplitTag(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Vocabulary:
    """Ordered, duplicate-free list of class names."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValidationError("vocabulary names must be unique", code="DUPLICATE_NAME")
        if not self.names:
            raise ValidationError("vocabulary must be non-empty", code="EMPTY_VOCABULARY")

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def openmic(cls) -> "Vocabulary":
        return cls(OPENMIC_INSTRUMENTS)

    @classmethod
    def generic(cls, n: int, prefix: str = "class") -> "Vocabulary":
        return cls(tuple(f"{prefix}_{i}" for i in range(n)))


@dataclass(frozen=True)
class TriStateLabelVector:
    """Length-C vector of POSITIVE / NEGATIVE / MISSING states (int8 codes)."""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int8)
        bad = ~np.isin(codes, (1, 0, -1))
        if codes.ndim != 1:
            raise ValidationError("label vector must be 1-D", code="INVALID_STATE")
        if bad.any():
            raise ValidationError(
                f"invalid state codes {sorted(set(codes[bad].tolist()))}; "
                "expected 1 (positive), 0 (negative), -1 (missing)",
                code="INVALID_STATE",
            )
        object.__setattr__(self, "codes", _freeze(codes))

    @classmethod
    def from_states(cls, states: Sequence[LabelState]) -> "TriStateLabelVector":
        return cls(np.array([int(s) for s in states], dtype=np.int8))

    @classmethod
    def all_missing(cls, size: int) -> "TriStateLabelVector":
        return cls(np.full(size, -1, dtype=np.int8))

    @property
    def size(self) -> int:
        return int(self.codes.shape[0])

    @property
    def states(self) -> tuple[LabelState, ...]:
        return tuple(LabelState(int(c)) for c in self.codes)

    def n_observed(self) -> int:
        return int((self.codes != -1).sum())


def validate_labels(v: TriStateLabelVector, vocab: Vocabulary) -> TriStateLabelVector:
    """Return v unchanged if it matches the vocabulary size.

    State validity is already enforced at construction; this re-checks it so
    the operation is safe on vectors built through other paths.
    """
    if v.size != vocab.size:
        raise ValidationError(
            f"label vector has {v.size} entries, vocabulary has {vocab.size}",
            code="LENGTH_MISMATCH",
        )
    if not np.isin(v.codes, (1, 0, -1)).all():
        raise ValidationError("label vector holds an unknown state", code="INVALID_STATE")
    return v


def observed_mask(v: TriStateLabelVector) -> tuple[np.ndarray, np.ndarray]:
    """Split a tri-state vector into (mask, target) float vectors.

    mask is 1 where the entry is observed; target is 1 for POSITIVE and 0
    elsewhere. Target values at masked-out positions are stored as 0 and must
    never influence any loss or metric: always multiply by the mask.
    """
    mask = (v.codes != -1).astype(np.float64)
    target = (v.codes == 1).astype(np.float64)
    return mask, target


@dataclass(frozen=True)
class Spectrogram:
    """T x F matrix of log-mel energies (rows = frames, columns = mel bands)."""

    values: np.ndarray
    frame_hop_ms: float
    n_mels: int

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError(
                f"spectrogram must be a non-empty 2-D matrix, got shape {values.shape}",
                code="SHAPE_MISMATCH",
            )
        if not np.isfinite(values).all():
            raise ValidationError("spectrogram holds non-finite entries", code="NON_FINITE_INPUT")
        if values.shape[1] != self.n_mels:
            raise ValidationError(
                f"spectrogram has {values.shape[1]} columns but n_mels={self.n_mels}",
                code="SHAPE_MISMATCH",
            )
        object.__setattr__(self, "values", _freeze(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # (T, F)

    def with_values(self, values: np.ndarray) -> "Spectrogram":
        return Spectrogram(values=values, frame_hop_ms=self.frame_hop_ms, n_mels=values.shape[1])


class SpectrogramRef(Protocol):
    """Storage locator that can produce the clip's spectrogram matrix."""

    def load(self) -> np.ndarray: ...


@dataclass(frozen=True)
class InMemorySpectrogram:
    """Spectrogram held directly in memory (synthetic datasets, tests)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(np.asarray(self.values)))

    def load(self) -> np.ndarray:
        return self.values


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    spectrogram_ref: SpectrogramRef
    labels: TriStateLabelVector
    split: SplitTag

    def retag(self, split: SplitTag) -> "ClipRecord":
        return replace(self, split=split)
