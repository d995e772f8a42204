"""Metrics and reports: per-class F1, macro F1, parameter budgets, distributions.

Missing labels are excluded from every count. A class with no observed
positives and no predicted positives gets F1 = 0 rather than being dropped,
so the macro average's denominator is always the full class count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .validation import check_probabilities, check_tristate_matrix

# Published reference totals (in parameters) for the full-scale configuration,
# per input-reprogramming kind; budgets pass within +-30% of these. The band
# is wide because the reference's exact mapper input width is not recoverable.
REFERENCE_BUDGETS = {"noise": 148_000, "cnn": 17_000, "unet": 18_000, "none": 17_000}
BUDGET_BAND = 0.30


def binarize(probs, threshold: float) -> np.ndarray:
    """1 where prob >= threshold. Threshold must lie strictly inside (0, 1)."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {threshold}", code="BAD_THRESHOLD")
    p = check_probabilities(probs, "probs")
    return (p >= threshold).astype(np.int8)


@dataclass
class MacroF1Result:
    macro: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    n_pos: np.ndarray  # observed positives per class
    n_neg: np.ndarray  # observed negatives per class


def macro_f1(preds, labels) -> MacroF1Result:
    """Unweighted mean of per-class F1 over observed label entries.

    preds: (N, C) binary; labels: (N, C) tri-state codes (or objects with
    .codes). Rates for empty denominators are defined as 0.
    """
    codes = check_tristate_matrix(
        np.stack([v.codes for v in labels]) if isinstance(labels, (list, tuple)) else labels
    )
    p = np.asarray(preds)
    if p.shape != codes.shape:
        raise ValidationError(
            f"preds shape {p.shape} vs labels shape {codes.shape}", code="LENGTH_MISMATCH"
        )
    observed = codes != -1
    pos = (codes == 1) & observed
    neg = (codes == 0) & observed
    pred_pos = (p == 1) & observed

    tp = (pred_pos & pos).sum(axis=0).astype(np.float64)
    fp = (pred_pos & neg).sum(axis=0).astype(np.float64)
    fn = (~pred_pos & pos).sum(axis=0).astype(np.float64)

    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return MacroF1Result(
        macro=float(f1.mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        n_pos=pos.sum(axis=0),
        n_neg=neg.sum(axis=0),
    )


def positive_count_correlation(pos_counts, f1s) -> float:
    """Pearson correlation between per-class positive counts and F1 scores."""
    x = np.asarray(pos_counts, dtype=np.float64)
    y = np.asarray(f1s, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError("need two equal-length vectors of at least 2 points",
                              code="LENGTH_MISMATCH")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc ** 2).sum() * (yc ** 2).sum())
    if denom == 0.0:
        raise ValidationError("correlation undefined: zero variance", code="ZERO_VARIANCE")
    return float((xc * yc).sum() / denom)


@dataclass
class BudgetRow:
    component: str
    count: int


@dataclass
class BudgetReport:
    rows: list[BudgetRow]
    total: int
    reference: int | None = None
    within_band: bool | None = None

    def lines(self) -> list[str]:
        out = ["component,trainable_parameters"]
        out += [f"{r.component},{r.count}" for r in self.rows]
        out.append(f"total,{self.total}")
        if self.reference is not None:
            deviation = (self.total - self.reference) / self.reference
            out.append(f"reference,{self.reference}")
            out.append(f"deviation,{deviation:+.4f}")
            out.append(f"within_band,{str(self.within_band).lower()}")
        return out


def budget_report(model, reference: int | None = None) -> BudgetReport:
    """Trainable-parameter counts per component, optionally checked against a
    published reference total (pass iff within +-30%)."""
    rows = [BudgetRow(name, count) for name, count in model.budget_rows()]
    total = sum(r.count for r in rows)
    within = None
    if reference is not None:
        within = abs(total - reference) / reference <= BUDGET_BAND
    return BudgetReport(rows=rows, total=total, reference=reference, within_band=within)


@dataclass
class EvalReport:
    class_names: tuple[str, ...]
    result: MacroF1Result
    threshold: float
    trainable_parameters: int
    seed: int | None = None
    config_hash: str = ""

    @property
    def macro(self) -> float:
        return self.result.macro


def write_report_csv(path, report: EvalReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "n_pos", "n_neg", "precision", "recall", "f1"])
        r = report.result
        for i, name in enumerate(report.class_names):
            w.writerow([name, int(r.n_pos[i]), int(r.n_neg[i]),
                        f"{r.precision[i]:.6f}", f"{r.recall[i]:.6f}", f"{r.f1[i]:.6f}"])
        w.writerow(["macro", int(r.n_pos.sum()), int(r.n_neg.sum()), "", "", f"{r.macro:.6f}"])


def write_report_txt(path, report: EvalReport) -> None:
    r = report.result
    width = max(len(n) for n in report.class_names + ("macro",))
    lines = [
        f"threshold: {report.threshold}",
        f"trainable parameters: {report.trainable_parameters}",
        f"config: {report.config_hash}" + (f"  seed: {report.seed}" if report.seed is not None else ""),
        "",
        f"{'class'.ljust(width)}  {'n_pos':>6} {'n_neg':>6} {'prec':>7} {'recall':>7} {'f1':>7}",
    ]
    for i, name in enumerate(report.class_names):
        lines.append(
            f"{name.ljust(width)}  {int(r.n_pos[i]):>6} {int(r.n_neg[i]):>6} "
            f"{r.precision[i]:>7.4f} {r.recall[i]:>7.4f} {r.f1[i]:>7.4f}"
        )
    lines.append(f"{'macro'.ljust(width)}  {int(r.n_pos.sum()):>6} {int(r.n_neg.sum()):>6} "
                 f"{'':>7} {'':>7} {r.macro:>7.4f}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def write_label_distribution(path, class_names, n_pos, n_neg) -> None:
    """Plot-data file for label-distribution bars: class, positives, negatives."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "positives", "negatives"])
        for name, p, n in zip(class_names, n_pos, n_neg):
            w.writerow([name, int(p), int(n)])
