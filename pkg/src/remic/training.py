"""Optimization loop for the reprogrammer + mapper, with the scorer frozen.

The loss is binary cross-entropy averaged over *observed* label entries only,
so missing labels contribute nothing to gradients. The learning rate holds at
lr0 for the warm epochs and halves every halve_every epochs afterwards. Only
reprogrammer and mapper parameters ever reach the optimizer; the backbone's
fingerprint is recorded so its freshness is checkable at any point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from .checkpoint import Checkpoint
from .datamodel import ClipRecord, SplitTag, TriStateLabelVector
from .errors import DataError, NumericalError, ShapeMismatch, ValidationError
from .evaluation import binarize, macro_f1
from .rng import Lcg64, derive_seed
from .validation import check_positive

PROB_CLAMP = 1e-7  # predictions are clamped this far inside (0, 1) before the log
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class TrainingPlan:
    batch_size: int = 8
    total_epochs: int = 50
    lr0: float = 5e-5
    warm_epochs: int = 10
    halve_every: int = 5
    seed: int = 0
    repeats: int = 10

    def __post_init__(self):
        for name in ("batch_size", "total_epochs", "lr0", "warm_epochs", "halve_every", "repeats"):
            check_positive(getattr(self, name), name)


def lr_at_epoch(epoch: int, plan: TrainingPlan) -> float:
    """lr0 through the warm epochs, then halved every halve_every epochs."""
    if not 1 <= epoch <= plan.total_epochs:
        raise ValidationError(
            f"epoch {epoch} outside [1, {plan.total_epochs}]", code="EPOCH_OUT_OF_RANGE"
        )
    if epoch <= plan.warm_epochs:
        return plan.lr0
    halvings = -(-(epoch - plan.warm_epochs) // plan.halve_every)  # ceil division
    return plan.lr0 * 0.5 ** halvings


def masked_bce(probs: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean BCE over masked-in entries; exactly 0 when nothing is observed."""
    p = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    elem = -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p))
    n_obs = mask.sum()
    if n_obs.item() == 0:
        return probs.sum() * 0.0
    return (elem * mask).sum() / n_obs


def partial_bce(probs, labels) -> float:
    """Masked BCE of predictions against tri-state labels, in double precision.

    `labels` is a TriStateLabelVector, a list of them, or an int8 code matrix;
    `probs` must have the matching shape.
    """
    if isinstance(labels, TriStateLabelVector):
        codes = labels.codes[None, :]
    elif isinstance(labels, (list, tuple)):
        codes = np.stack([v.codes for v in labels])
    else:
        codes = np.asarray(labels, dtype=np.int8)
        if codes.ndim == 1:
            codes = codes[None, :]
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.shape != codes.shape:
        raise ShapeMismatch(f"probs shape {p.shape} vs labels shape {codes.shape}")
    mask = torch.from_numpy((codes != -1).astype(np.float64))
    target = torch.from_numpy((codes == 1).astype(np.float64))
    return float(masked_bce(torch.from_numpy(p), target, mask))


class ReprogrammedModel(nn.Module):
    """reprogrammer -> frozen backbone -> mapper, end to end differentiable."""

    def __init__(self, reprogrammer, backbone, mapper):
        super().__init__()
        self.reprogrammer = reprogrammer
        self.backbone = backbone
        self.mapper = mapper

    def forward_probs(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, F) spectrograms to (B, C) target probabilities."""
        return self.mapper(self.backbone.score_batch(self.reprogrammer(x)))

    def trainable_parameters(self):
        for module in (self.reprogrammer, self.mapper):
            yield from (p for p in module.parameters() if p.requires_grad)

    def named_trainable_parameters(self):
        for prefix, module in (("reprogrammer", self.reprogrammer), ("mapper", self.mapper)):
            for name, p in module.named_parameters():
                if p.requires_grad:
                    yield f"{prefix}.{name}", p

    def named_float_state(self):
        """Non-trainable float state that predictions depend on (BN statistics)."""
        for prefix, module in (("reprogrammer", self.reprogrammer), ("mapper", self.mapper)):
            for name, b in module.named_buffers():
                if b.is_floating_point():
                    yield f"{prefix}.{name}", b

    def budget_rows(self) -> list[tuple[str, int]]:
        rows = []
        for prefix, module in (("reprogrammer", self.reprogrammer), ("mapper", self.mapper)):
            rows.append((prefix, sum(p.numel() for p in module.parameters() if p.requires_grad)))
        return rows

    def predict_probs(self, specs, batch_size: int = 32) -> np.ndarray:
        """Evaluation-mode probabilities for an (N, T, F) array or list of matrices."""
        arr = np.asarray(specs, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None]
        self.eval()
        outs = []
        with torch.no_grad():
            for start in range(0, arr.shape[0], batch_size):
                batch = torch.from_numpy(arr[start : start + batch_size])
                outs.append(self.forward_probs(batch).cpu().numpy())
        return np.concatenate(outs, axis=0).astype(np.float64)


def train_step(model: ReprogrammedModel, optimizer, batch_x: torch.Tensor,
               target: torch.Tensor, mask: torch.Tensor, clip_ids=None):
    """One optimization step. Returns (batch loss, observed-entry count).

    A batch with no observed labels contributes zero loss and leaves every
    parameter untouched. A non-finite loss aborts the run, naming the clips.
    """
    model.train()
    probs = model.forward_probs(batch_x)
    if not torch.isfinite(probs).all():
        bad_rows = (~torch.isfinite(probs)).any(dim=1).nonzero().flatten().tolist()
        ids = [clip_ids[i] for i in bad_rows] if clip_ids else bad_rows
        raise NumericalError(f"non-finite predictions for clips {ids}", code="NON_FINITE_LOSS")
    n_obs = int(mask.sum().item())
    if n_obs == 0:
        return 0.0, 0
    loss = masked_bce(probs, target, mask)
    if not torch.isfinite(loss):
        ids = clip_ids if clip_ids else "batch"
        raise NumericalError(f"non-finite loss on clips {ids}", code="NON_FINITE_LOSS")
    if optimizer is not None:
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return float(loss.item()), n_obs


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_macro_f1: float


@dataclass
class TrainOutcome:
    seed: int
    history: list[EpochStats]
    best_epoch: int
    best_val_f1: float
    checkpoint: Checkpoint
    test_macro_f1: float | None = None
    test_report: object = None  # EvalReport, attached by the fit orchestration


def _records_by_split(records, tag: SplitTag):
    return [r for r in records if r.split is tag]


def _batch_tensors(records: list[ClipRecord]):
    x = np.stack([r.spectrogram_ref.load() for r in records]).astype(np.float32)
    codes = np.stack([r.labels.codes for r in records])
    mask = torch.from_numpy((codes != -1).astype(np.float32))
    target = torch.from_numpy((codes == 1).astype(np.float32))
    return torch.from_numpy(x), target, mask


class Trainer:
    """Runs one seeded training run over TRAIN/VAL splits of a record list."""

    def __init__(self, model: ReprogrammedModel, records: list[ClipRecord],
                 plan: TrainingPlan, threshold: float = 0.5, config_text: str = "",
                 log=None):
        self.model = model
        self.plan = plan
        self.threshold = threshold
        self.config_text = config_text
        self.log = log
        self.train_records = _records_by_split(records, SplitTag.TRAIN)
        self.val_records = _records_by_split(records, SplitTag.VAL)
        if not self.train_records:
            raise DataError("dataset has no TRAIN records", code="EMPTY_SPLIT")
        if not self.val_records:
            raise DataError("dataset has no VAL records", code="EMPTY_SPLIT")
        self.gen = Lcg64(derive_seed(plan.seed, "shuffle"))
        trainables = list(self.model.trainable_parameters())
        self.optimizer = torch.optim.Adam(trainables, lr=plan.lr0) if trainables else None

    def _epoch_pass(self, epoch: int) -> float:
        if self.optimizer is not None:
            lr = lr_at_epoch(epoch, self.plan)
            for group in self.optimizer.param_groups:
                group["lr"] = lr
        order = self.gen.permutation(len(self.train_records))
        loss_sum = 0.0
        obs_sum = 0
        bs = self.plan.batch_size
        for start in range(0, len(order), bs):
            batch = [self.train_records[i] for i in order[start : start + bs]]
            x, target, mask = _batch_tensors(batch)
            loss, n_obs = train_step(
                self.model, self.optimizer, x, target, mask,
                clip_ids=[r.clip_id for r in batch],
            )
            loss_sum += loss * n_obs
            obs_sum += n_obs
        return loss_sum / obs_sum if obs_sum else 0.0

    def _split_f1(self, records) -> float:
        specs = np.stack([r.spectrogram_ref.load() for r in records])
        probs = self.model.predict_probs(specs)
        preds = binarize(probs, self.threshold)
        codes = np.stack([r.labels.codes for r in records])
        return macro_f1(preds, codes).macro

    def _snapshot(self, epoch: int, best_val: float) -> Checkpoint:
        blocks: dict[str, np.ndarray] = {}
        adam_steps: dict[str, int] = {}
        for name, p in self.model.named_trainable_parameters():
            blocks[f"param.{name}"] = p.detach().cpu().numpy().astype(np.float32)
            if self.optimizer is not None and p in self.optimizer.state:
                state = self.optimizer.state[p]
                blocks[f"adam.exp_avg.{name}"] = state["exp_avg"].cpu().numpy().astype(np.float32)
                blocks[f"adam.exp_avg_sq.{name}"] = (
                    state["exp_avg_sq"].cpu().numpy().astype(np.float32)
                )
                adam_steps[name] = int(state["step"])
        for name, b in self.model.named_float_state():
            blocks[f"state.{name}"] = b.detach().cpu().numpy().astype(np.float32)
        meta = {
            "format": CHECKPOINT_FORMAT,
            "epoch": epoch,
            "best_val_macro_f1": best_val,
            "backbone_fingerprint": self.model.backbone.fingerprint(),
            "rng_state": self.gen.state,
            "adam_steps": adam_steps,
            "seed": self.plan.seed,
        }
        return Checkpoint(config_text=self.config_text, meta=meta, blocks=blocks)

    def fit(self) -> TrainOutcome:
        history: list[EpochStats] = []
        best_val = -1.0
        best_epoch = 0
        best_ckpt = self._snapshot(0, 0.0)
        for epoch in range(1, self.plan.total_epochs + 1):
            lr = lr_at_epoch(epoch, self.plan)
            train_loss = self._epoch_pass(epoch)
            val_f1 = self._split_f1(self.val_records)
            history.append(EpochStats(epoch, lr, train_loss, val_f1))
            if self.log:
                self.log(f"epoch {epoch:3d}  lr {lr:.3e}  loss {train_loss:.5f}  val_f1 {val_f1:.4f}")
            if val_f1 > best_val:
                best_val = val_f1
                best_epoch = epoch
                best_ckpt = self._snapshot(epoch, val_f1)
        return TrainOutcome(
            seed=self.plan.seed, history=history, best_epoch=best_epoch,
            best_val_f1=best_val, checkpoint=best_ckpt,
        )


def restore_model(model: ReprogrammedModel, ckpt: Checkpoint) -> ReprogrammedModel:
    """Copy a checkpoint's parameter and state blocks back into a live model."""
    from .errors import CheckpointError

    with torch.no_grad():
        for name, p in model.named_trainable_parameters():
            key = f"param.{name}"
            if key not in ckpt.blocks:
                raise CheckpointError(f"checkpoint lacks block {key}", code="CHECKPOINT_CORRUPT")
            arr = ckpt.blocks[key]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(
                    f"block {key} has shape {arr.shape}, expected {tuple(p.shape)}",
                    code="CHECKPOINT_CORRUPT",
                )
            p.copy_(torch.from_numpy(arr).to(p.dtype))
        for name, b in model.named_float_state():
            key = f"state.{name}"
            if key in ckpt.blocks:
                b.copy_(torch.from_numpy(ckpt.blocks[key]).to(b.dtype))
    return model
