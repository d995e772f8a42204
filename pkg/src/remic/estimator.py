"""Scikit-learn style estimator wrapping the reprogramming pipeline.

`ReprogrammedClassifier` is a multi-label classifier over spectrogram clips:
`fit(X, y)` takes X of shape (N, T, F) and tri-state y of shape (N, C) with
entries 1 (positive), 0 (negative), -1 (missing). Only the input reprogrammer
and the output mapper train; the backbone stays frozen. `get_params` /
`set_params` / `clone` behave as usual, so the estimator composes with the
wider ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .backbone import ToyBackbone
from .datamodel import ClipRecord, InMemorySpectrogram, SplitTag, TriStateLabelVector
from .dataio import make_validation_split
from .errors import ValidationError
from .evaluation import binarize, macro_f1
from .mapping import ManyToOneAssignment, init_mapper
from .reprogrammers import init_reprogrammer
from .training import ReprogrammedModel, Trainer, TrainingPlan, restore_model
from .validation import check_spectrogram_batch, check_tristate_matrix


class ReprogrammedClassifier(BaseEstimator, ClassifierMixin):
    """Frozen-backbone multi-label classifier with a trainable input transform.

    Parameters mirror the experiment configuration: `reprogrammer` is one of
    "none", "noise", "cnn", "unet"; `mapper` is "fcl" or "many_to_one" (the
    latter needs `assignment`). When `backbone` is None a deterministic toy
    backbone matching the input dims is built at fit time.
    """

    def __init__(
        self,
        reprogrammer: str = "noise",
        mapper: str = "fcl",
        backbone=None,
        backbone_seed: int = 3,
        k_src: int = 64,
        cnn_channels: int = 96,
        unet_widths: tuple = (4, 8, 16),
        assignment: ManyToOneAssignment | None = None,
        batch_size: int = 8,
        epochs: int = 50,
        lr0: float = 5e-5,
        warm_epochs: int = 10,
        halve_every: int = 5,
        threshold: float = 0.5,
        validation_fraction: float = 0.15,
        seed: int = 0,
        verbose: bool = False,
    ):
        self.reprogrammer = reprogrammer
        self.mapper = mapper
        self.backbone = backbone
        self.backbone_seed = backbone_seed
        self.k_src = k_src
        self.cnn_channels = cnn_channels
        self.unet_widths = unet_widths
        self.assignment = assignment
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr0 = lr0
        self.warm_epochs = warm_epochs
        self.halve_every = halve_every
        self.threshold = threshold
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.verbose = verbose

    def _build_model(self, dims, n_classes) -> ReprogrammedModel:
        backbone = self.backbone
        if backbone is None:
            backbone = ToyBackbone(frames=dims[0], mels=dims[1], k_src=self.k_src,
                                   seed=self.backbone_seed)
        rep = init_reprogrammer(
            self.reprogrammer, dims, cnn_channels=self.cnn_channels,
            unet_widths=tuple(self.unet_widths), seed=self.seed,
        )
        mapper = init_mapper(self.mapper, backbone.k_src, n_classes,
                             assignment=self.assignment, seed=self.seed)
        return ReprogrammedModel(rep, backbone, mapper)

    def fit(self, X, y):
        X = check_spectrogram_batch(X)
        y = check_tristate_matrix(y)
        if X.shape[0] != y.shape[0]:
            raise ValidationError(
                f"X has {X.shape[0]} clips but y has {y.shape[0]} rows", code="LENGTH_MISMATCH"
            )
        if int(np.floor(self.validation_fraction * X.shape[0])) < 1:
            raise ValidationError(
                "too few samples for the requested validation_fraction",
                code="FRACTION_OUT_OF_RANGE",
            )
        dims = X.shape[1:]
        model = self._build_model(dims, y.shape[1])
        records = [
            ClipRecord(
                clip_id=f"clip_{i:06d}",
                spectrogram_ref=InMemorySpectrogram(X[i].astype(np.float32)),
                labels=TriStateLabelVector(y[i]),
                split=SplitTag.TRAIN,
            )
            for i in range(X.shape[0])
        ]
        records = make_validation_split(records, self.validation_fraction, self.seed)
        plan = TrainingPlan(
            batch_size=self.batch_size, total_epochs=self.epochs, lr0=self.lr0,
            warm_epochs=self.warm_epochs, halve_every=self.halve_every,
            seed=self.seed, repeats=1,
        )
        trainer = Trainer(model, records, plan, threshold=self.threshold,
                          log=print if self.verbose else None)
        outcome = trainer.fit()
        restore_model(model, outcome.checkpoint)
        self.model_ = model
        self.checkpoint_ = outcome.checkpoint
        self.history_ = outcome.history
        self.best_epoch_ = outcome.best_epoch
        self.best_val_f1_ = outcome.best_val_f1
        self.classes_ = np.arange(y.shape[1])
        self.n_features_in_ = int(np.prod(dims))
        self.input_dims_ = tuple(dims)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predicting")

    def predict_proba(self, X) -> np.ndarray:
        self._require_fitted()
        X = check_spectrogram_batch(X, dims=self.input_dims_)
        return self.model_.predict_probs(X)

    def predict(self, X) -> np.ndarray:
        return binarize(self.predict_proba(X), self.threshold)

    def score(self, X, y, sample_weight=None) -> float:
        """Macro F1 over observed entries of tri-state y (not accuracy)."""
        y = check_tristate_matrix(y)
        return macro_f1(self.predict(X), y).macro
