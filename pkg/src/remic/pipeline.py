"""Config-driven orchestration: build models and datasets, run seeded fits.

The repeat protocol runs `run.repeats` independent training runs with seeds
seed, seed+1, ... against the same dataset and backbone, then reports the
mean and standard deviation of test macro F1 across runs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .backbone import ASTAdapter, ToyBackbone
from .config import ExperimentConfig, canonical_text, config_hash
from .dataio import (
    OpenMicLayout,
    generate_synthetic,
    load_matrix_dataset,
    load_openmic,
    make_validation_split,
)
from .datamodel import SplitTag, Vocabulary
from .errors import CheckpointError, DataError
from .evaluation import EvalReport, binarize, macro_f1
from .mapping import init_mapper, parse_assignment
from .reprogrammers import init_reprogrammer
from .rng import derive_seed
from .training import ReprogrammedModel, Trainer, TrainOutcome, restore_model

DATA_ROOT_ENV = "REMIC_DATA_ROOT"


def build_backbone(cfg: ExperimentConfig):
    b = cfg.backbone
    if b.kind == "toy":
        return ToyBackbone(
            frames=b.frames, mels=b.mels, k_src=b.k_src, seed=b.seed,
            input_gain=b.input_gain, bias_span=b.bias_span, mix_gain=b.mix_gain,
        )
    return ASTAdapter(weights=b.weights, input_dims=(b.frames, b.mels), k_src=b.k_src)


def target_vocabulary(cfg: ExperimentConfig) -> Vocabulary:
    if cfg.data.kind == "synthetic":
        return cfg.synth.vocabulary()
    if cfg.data.kind == "matrix_dir":
        _, vocab = load_matrix_dataset(_data_root(cfg))
        return vocab
    return Vocabulary.openmic()


def build_model(cfg: ExperimentConfig, seed: int, backbone=None,
                vocab: Vocabulary | None = None) -> ReprogrammedModel:
    """Assemble reprogrammer + frozen backbone + mapper for one run seed."""
    backbone = backbone if backbone is not None else build_backbone(cfg)
    vocab = vocab or target_vocabulary(cfg)
    reprogrammer = init_reprogrammer(
        cfg.reprogrammer.kind, cfg.model_dims,
        cnn_channels=cfg.reprogrammer.cnn_channels,
        cnn_relu=cfg.reprogrammer.cnn_relu,
        unet_widths=cfg.reprogrammer.unet_widths,
        seed=seed,
    )
    assignment = None
    if cfg.mapper.kind == "many_to_one":
        path = cfg.mapper.assignment_file
        if not os.path.exists(path):
            raise DataError(f"assignment file not found: {path}", code="DATASET_UNAVAILABLE")
        with open(path) as fh:
            assignment = parse_assignment(fh.read(), vocab, backbone.k_src)
    mapper = init_mapper(cfg.mapper.kind, backbone.k_src, vocab.size,
                         assignment=assignment, seed=seed)
    return ReprogrammedModel(reprogrammer, backbone, mapper)


def _data_root(cfg: ExperimentConfig) -> str:
    return os.environ.get(DATA_ROOT_ENV, "") or cfg.data.root


def build_dataset(cfg: ExperimentConfig):
    """Records with TRAIN/VAL/TEST tags plus the target vocabulary."""
    if cfg.data.kind == "synthetic":
        records = generate_synthetic(cfg.synth)
        vocab = cfg.synth.vocabulary()
    elif cfg.data.kind == "matrix_dir":
        root = _data_root(cfg)
        if not root:
            raise DataError("data.root (or $" + DATA_ROOT_ENV + ") is required",
                            code="DATASET_UNAVAILABLE")
        records, vocab = load_matrix_dataset(root, pos_threshold=cfg.data.pos_threshold)
    else:
        root = _data_root(cfg)
        if not root:
            raise DataError("data.root (or $" + DATA_ROOT_ENV + ") is required",
                            code="DATASET_UNAVAILABLE")
        layout = OpenMicLayout.locate(root)
        cache = cfg.data.cache_dir or os.path.join(root, ".spectrogram_cache")
        records = load_openmic(
            layout, pos_threshold=cfg.data.pos_threshold,
            frontend=cfg.frontend, cache_dir=cache,
        )
        vocab = Vocabulary.openmic()
    records = make_validation_split(records, cfg.data.val_fraction, cfg.seed)
    return records, vocab


def evaluate_records(model: ReprogrammedModel, records, threshold: float,
                     vocab: Vocabulary, seed=None, cfg_hash="") -> EvalReport:
    specs = np.stack([r.spectrogram_ref.load() for r in records])
    probs = model.predict_probs(specs)
    preds = binarize(probs, threshold)
    codes = np.stack([r.labels.codes for r in records])
    result = macro_f1(preds, codes)
    trainable = sum(count for _, count in model.budget_rows())
    return EvalReport(
        class_names=vocab.names, result=result, threshold=threshold,
        trainable_parameters=trainable, seed=seed, config_hash=cfg_hash,
    )


@dataclass
class FitResult:
    runs: list[TrainOutcome]
    mean_test_f1: float
    std_test_f1: float

    @property
    def checkpoint(self):
        return self.runs[0].checkpoint


def fit(cfg: ExperimentConfig, records, vocab: Vocabulary | None = None,
        backbone=None, log=None) -> FitResult:
    """Train `cfg.repeats` independent seeds and aggregate test macro F1."""
    vocab = vocab or target_vocabulary(cfg)
    backbone = backbone if backbone is not None else build_backbone(cfg)
    text = canonical_text(cfg)
    h = config_hash(cfg)
    test_records = [r for r in records if r.split is SplitTag.TEST]
    runs: list[TrainOutcome] = []
    for i in range(cfg.repeats):
        seed_i = cfg.seed + i
        model = build_model(cfg, seed=seed_i, backbone=backbone, vocab=vocab)
        plan = cfg.plan_for_seed(seed_i)
        if log:
            log(f"run {i + 1}/{cfg.repeats} (seed {seed_i})")
        trainer = Trainer(model, records, plan, threshold=cfg.eval_threshold,
                          config_text=text, log=log)
        outcome = trainer.fit()
        if test_records:
            restore_model(model, outcome.checkpoint)
            report = evaluate_records(model, test_records, cfg.eval_threshold,
                                      vocab, seed=seed_i, cfg_hash=h)
            outcome.test_macro_f1 = report.macro
            outcome.test_report = report
        runs.append(outcome)
    scores = [r.test_macro_f1 for r in runs if r.test_macro_f1 is not None]
    mean = float(np.mean(scores)) if scores else float("nan")
    std = float(np.std(scores)) if scores else float("nan")
    return FitResult(runs=runs, mean_test_f1=mean, std_test_f1=std)


def model_from_checkpoint(ckpt, cfg: ExperimentConfig, backbone=None,
                          vocab: Vocabulary | None = None) -> ReprogrammedModel:
    """Rebuild the model a checkpoint was trained with and load its weights.

    The live backbone's fingerprint must match the one recorded at training
    time; a different backbone means the checkpoint is not usable.
    """
    model = build_model(cfg, seed=int(ckpt.meta.get("seed", cfg.seed)),
                        backbone=backbone, vocab=vocab)
    live = model.backbone.fingerprint()
    recorded = ckpt.backbone_fingerprint
    if recorded and live != recorded:
        raise CheckpointError(
            f"checkpoint was trained against backbone {recorded[:12]}..., "
            f"live backbone is {live[:12]}...",
            code="FINGERPRINT_MISMATCH",
        )
    return restore_model(model, ckpt)
