"""Dataset loading and synthesis.

Real data follows the weak-label layout of the 20-instrument corpus: a
relevance table (`sample_key,instrument,relevance`), one-key-per-line split
files, and audio clips keyed by sample id. Absent (clip, instrument) pairs
are MISSING; present ones binarize at a relevance threshold.

The synthetic generator plants one rectangular energy blob per positive
class in a class-specific mel band at a random time offset, over a jittered
noise floor. Random time placement means a constant additive perturbation
cannot align with the patterns while convolutional transforms can, which is
what makes the desk-scale method comparison meaningful.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import read_matrix, write_matrix
from .datamodel import (
    ClipRecord,
    InMemorySpectrogram,
    SplitTag,
    TriStateLabelVector,
    Vocabulary,
)
from .errors import DataError, ValidationError
from .frontend import FrontendParams, compute_logmel, load_audio, prepare
from .rng import Lcg64, derive_seed
from .validation import check_positive


@dataclass(frozen=True)
class OpenMicLayout:
    root: Path
    labels_file: str = "labels.csv"
    train_split: str = "split_train.txt"
    test_split: str = "split_test.txt"
    audio_dir: str = "audio"

    @classmethod
    def locate(cls, root) -> "OpenMicLayout":
        """Resolve a dataset root, accepting the upstream corpus naming too."""
        root = Path(root)
        if (root / "openmic-2018-aggregated-labels.csv").exists():
            return cls(
                root=root,
                labels_file="openmic-2018-aggregated-labels.csv",
                train_split="partitions/split01_train.csv",
                test_split="partitions/split01_test.csv",
                audio_dir="audio",
            )
        return cls(root=root)


def _frontend_hash(p: FrontendParams) -> str:
    text = f"{p.n_mels},{p.win_ms},{p.hop_ms},{p.target_frames},{p.norm_mean},{p.norm_std}"
    return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class AudioSpectrogramRef:
    """Computes the clip's log-mel matrix on demand and caches it to disk."""

    path: Path
    params: FrontendParams
    cache_dir: Path | None = None
    decoder: object = None

    def load(self) -> np.ndarray:
        cache_path = None
        if self.cache_dir is not None:
            cache_path = Path(self.cache_dir) / _frontend_hash(self.params) / (self.path.stem + ".spec")
            if cache_path.exists():
                return read_matrix(cache_path).astype(np.float64)
        waveform, rate = load_audio(self.path, decoder=self.decoder)
        spec = prepare(compute_logmel(waveform, rate, self.params), self.params)
        if cache_path is not None:
            write_matrix(cache_path, spec.values.astype(np.float32))
        return spec.values


@dataclass(frozen=True)
class MatrixSpectrogramRef:
    """Spectrogram stored as a single-matrix container file."""

    path: Path

    def load(self) -> np.ndarray:
        return read_matrix(self.path).astype(np.float64)


def _read_split_file(path: Path) -> list[str]:
    if not path.exists():
        raise DataError(f"split file not found: {path}", code="MISSING_SPLIT_FILE")
    keys = []
    for line in path.read_text().splitlines():
        key = line.strip()
        if key and key != "sample_key":
            keys.append(key)
    return keys


def load_openmic(
    layout: OpenMicLayout,
    pos_threshold: float = 0.5,
    vocab: Vocabulary | None = None,
    frontend: FrontendParams | None = None,
    cache_dir=None,
    decoder=None,
) -> list[ClipRecord]:
    """Build clip records from a weak-label dataset root.

    Every key listed in a split file must resolve to an audio file; a
    (clip, instrument) pair becomes POSITIVE when its relevance reaches
    pos_threshold, NEGATIVE when below, and MISSING when absent. Records come
    back sorted by sample key regardless of filesystem enumeration order.
    """
    vocab = vocab or Vocabulary.openmic()
    frontend = frontend or FrontendParams()
    root = Path(layout.root)
    if not root.exists():
        raise DataError(f"dataset root not found: {root}", code="DATASET_UNAVAILABLE")

    train_keys = _read_split_file(root / layout.train_split)
    test_keys = _read_split_file(root / layout.test_split)
    overlap = set(train_keys) & set(test_keys)
    if overlap:
        raise DataError(f"keys in both splits: {sorted(overlap)[:5]}...", code="MISSING_SPLIT_FILE")
    split_of = {k: SplitTag.TRAIN for k in train_keys}
    split_of.update({k: SplitTag.TEST for k in test_keys})

    labels_path = root / layout.labels_file
    if not labels_path.exists():
        raise DataError(f"label table not found: {labels_path}", code="DATASET_UNAVAILABLE")
    codes: dict[str, np.ndarray] = {k: np.full(vocab.size, -1, dtype=np.int8) for k in split_of}
    with open(labels_path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = row["sample_key"]
            instrument = row["instrument"]
            if instrument not in vocab.names:
                raise DataError(f"unknown instrument '{instrument}'", code="UNKNOWN_INSTRUMENT")
            if key not in split_of:
                raise DataError(
                    f"labeled sample '{key}' appears in no split file", code="MISSING_SPLIT_FILE"
                )
            relevance = float(row["relevance"])
            codes[key][vocab.index(instrument)] = 1 if relevance >= pos_threshold else 0

    audio_root = root / layout.audio_dir
    index = {p.stem: p for p in sorted(audio_root.rglob("*")) if p.is_file()} if audio_root.exists() else {}

    records = []
    for key in sorted(split_of):
        if key not in index:
            raise DataError(f"no audio file for sample '{key}'", code="UNRESOLVED_AUDIO")
        records.append(
            ClipRecord(
                clip_id=key,
                spectrogram_ref=AudioSpectrogramRef(
                    path=index[key], params=frontend,
                    cache_dir=Path(cache_dir) if cache_dir else None, decoder=decoder,
                ),
                labels=TriStateLabelVector(codes[key]),
                split=split_of[key],
            )
        )
    return records


def make_validation_split(records: list[ClipRecord], fraction: float, seed: int) -> list[ClipRecord]:
    """Retag floor(fraction * n_train) TRAIN records as VAL, seeded, TEST untouched."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(
            f"fraction must be in (0, 1), got {fraction}", code="FRACTION_OUT_OF_RANGE"
        )
    train_idx = [i for i, r in enumerate(records) if r.split is SplitTag.TRAIN]
    n_val = int(np.floor(fraction * len(train_idx)))
    gen = Lcg64(derive_seed(seed, "val_split"))
    chosen = {train_idx[j] for j in gen.permutation(len(train_idx))[:n_val]}
    return [r.retag(SplitTag.VAL) if i in chosen else r for i, r in enumerate(records)]


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-pattern dataset description. Class c owns a disjoint mel band."""

    n_clips: int = 2000
    n_classes: int = 4
    frames: int = 128
    mels: int = 128
    blob_frames: int = 24       # time extent of each pattern
    blob_bins: int = 14         # mel extent, centered inside the class band
    blob_amp: float = 4.0       # added on top of the background inside the blob
    background_level: float = -7.0
    background_jitter: float = 1.5   # per-clip uniform offset half-range
    pixel_noise: float = 0.5         # per-pixel uniform noise half-range
    pos_rate: float = 0.4
    missing_rate: float = 0.5
    label_noise: float = 0.0
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        check_positive(self.n_clips, "n_clips")
        check_positive(self.n_classes, "n_classes")
        if self.frames % 8 or self.mels % 8:
            raise ValidationError(
                f"dims must be divisible by 8, got ({self.frames}, {self.mels})", code="BAD_DIMS"
            )
        if self.mels // self.n_classes < self.blob_bins:
            raise ValidationError("class bands too narrow for the blob width", code="BAD_DIMS")
        if self.blob_frames > self.frames:
            raise ValidationError("blob longer than the clip", code="BAD_DIMS")
        for name in ("missing_rate", "label_noise", "test_fraction", "pos_rate"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValidationError(f"{name} must be in [0, 1), got {v}", code="OUT_OF_RANGE")

    def band(self, c: int) -> tuple[int, int]:
        """Mel-bin range [lo, hi) owned by class c's pattern."""
        band_width = self.mels // self.n_classes
        margin = (band_width - self.blob_bins) // 2
        lo = c * band_width + margin
        return lo, lo + self.blob_bins

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.generic(self.n_classes, prefix="pattern")


def generate_synthetic(spec: SyntheticSpec) -> list[ClipRecord]:
    """Deterministically generate clip records with in-memory spectrograms."""
    gen = Lcg64(derive_seed(spec.seed, "synthetic"))
    n = spec.n_clips
    records = []
    n_test = int(round(n * spec.test_fraction))
    test_members = set(Lcg64(derive_seed(spec.seed, "synthetic.split")).permutation(n)[:n_test].tolist())
    for i in range(n):
        truth = gen.uniform(spec.n_classes) < spec.pos_rate
        base = spec.background_level + gen.uniform(low=-spec.background_jitter, high=spec.background_jitter)
        values = base + gen.uniform((spec.frames, spec.mels), -spec.pixel_noise, spec.pixel_noise)
        for c in range(spec.n_classes):
            if truth[c]:
                t0 = int(gen.integers(1, spec.frames - spec.blob_frames + 1)[0])
                lo, hi = spec.band(c)
                values[t0 : t0 + spec.blob_frames, lo:hi] += spec.blob_amp
        codes = truth.astype(np.int8)
        if spec.label_noise > 0:
            flips = gen.uniform(spec.n_classes) < spec.label_noise
            codes = np.where(flips, 1 - codes, codes).astype(np.int8)
        missing = gen.uniform(spec.n_classes) < spec.missing_rate
        codes = np.where(missing, np.int8(-1), codes).astype(np.int8)
        records.append(
            ClipRecord(
                clip_id=f"synth_{i:06d}",
                spectrogram_ref=InMemorySpectrogram(values.astype(np.float32)),
                labels=TriStateLabelVector(codes),
                split=SplitTag.TEST if i in test_members else SplitTag.TRAIN,
            )
        )
    return records


@dataclass
class LabelStats:
    class_names: tuple[str, ...]
    n_pos: np.ndarray
    n_neg: np.ndarray
    n_missing: np.ndarray
    n_records: int

    @property
    def observed_total(self) -> int:
        return int(self.n_pos.sum() + self.n_neg.sum())

    @property
    def missing_fraction(self) -> float:
        total = self.n_records * len(self.class_names)
        return 1.0 - self.observed_total / total


def label_stats(records: list[ClipRecord], vocab: Vocabulary | None = None) -> LabelStats:
    if not records:
        raise DataError("no records", code="EMPTY_SPLIT")
    codes = np.stack([r.labels.codes for r in records])
    names = vocab.names if vocab else tuple(f"class_{i}" for i in range(codes.shape[1]))
    if len(names) != codes.shape[1]:
        raise ValidationError("vocabulary size does not match labels", code="LENGTH_MISMATCH")
    return LabelStats(
        class_names=tuple(names),
        n_pos=(codes == 1).sum(axis=0),
        n_neg=(codes == 0).sum(axis=0),
        n_missing=(codes == -1).sum(axis=0),
        n_records=len(records),
    )


def save_matrix_dataset(records: list[ClipRecord], out_dir, vocab: Vocabulary) -> None:
    """Materialize records as matrix containers + label table + split files."""
    out = Path(out_dir)
    (out / "spectrograms").mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_key", "instrument", "relevance"])
        for r in records:
            for c, code in enumerate(r.labels.codes):
                if code != -1:
                    w.writerow([r.clip_id, vocab.names[c], "1.0" if code == 1 else "0.0"])
    train_keys = [r.clip_id for r in records if r.split is not SplitTag.TEST]
    test_keys = [r.clip_id for r in records if r.split is SplitTag.TEST]
    (out / "split_train.txt").write_text("".join(k + "\n" for k in train_keys))
    (out / "split_test.txt").write_text("".join(k + "\n" for k in test_keys))
    (out / "classes.txt").write_text("".join(n + "\n" for n in vocab.names))
    for r in records:
        write_matrix(out / "spectrograms" / f"{r.clip_id}.spec",
                     r.spectrogram_ref.load().astype(np.float32))


def load_matrix_dataset(root, pos_threshold: float = 0.5) -> tuple[list[ClipRecord], Vocabulary]:
    """Load a dataset previously written by save_matrix_dataset."""
    root = Path(root)
    classes_path = root / "classes.txt"
    if not classes_path.exists():
        raise DataError(f"not a matrix dataset (no classes.txt): {root}", code="DATASET_UNAVAILABLE")
    vocab = Vocabulary(tuple(classes_path.read_text().split()))
    train_keys = _read_split_file(root / "split_train.txt")
    test_keys = _read_split_file(root / "split_test.txt")
    split_of = {k: SplitTag.TRAIN for k in train_keys}
    split_of.update({k: SplitTag.TEST for k in test_keys})
    codes = {k: np.full(vocab.size, -1, dtype=np.int8) for k in split_of}
    with open(root / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["instrument"] not in vocab.names:
                raise DataError(f"unknown class '{row['instrument']}'", code="UNKNOWN_INSTRUMENT")
            codes[row["sample_key"]][vocab.index(row["instrument"])] = (
                1 if float(row["relevance"]) >= pos_threshold else 0
            )
    records = []
    for key in sorted(split_of):
        path = root / "spectrograms" / f"{key}.spec"
        if not path.exists():
            raise DataError(f"no spectrogram for sample '{key}'", code="UNRESOLVED_AUDIO")
        records.append(
            ClipRecord(
                clip_id=key,
                spectrogram_ref=MatrixSpectrogramRef(path),
                labels=TriStateLabelVector(codes[key]),
                split=split_of[key],
            )
        )
    return records, vocab
