"""Output label mapping: K_src source scores to C target probabilities.

Two routes. The fixed many-to-one assignment averages source-class
probabilities over a hand-chosen set per target (scores are squashed by a
sigmoid first, since the frozen scorer emits raw pre-activation values).
The trainable route is a fully connected layer followed by a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from torch import nn

from .datamodel import Vocabulary
from .errors import ValidationError
from .rng import Lcg64, derive_seed
from .validation import as_float_array, check_probabilities


class MapperKind(str, Enum):
    MANY_TO_ONE = "many_to_one"
    FCL = "fcl"


@dataclass(frozen=True)
class ManyToOneAssignment:
    """For each target class, a non-empty set of source indices (overlap allowed)."""

    sets: tuple[tuple[int, ...], ...]
    k_src: int

    def __post_init__(self):
        for c, s in enumerate(self.sets):
            if len(s) == 0:
                raise ValidationError(f"target {c} has an empty source set", code="EMPTY_ASSIGNMENT")
            if len(set(s)) != len(s):
                raise ValidationError(f"target {c} lists a source index twice", code="DUPLICATE_SOURCE")
            for idx in s:
                if not 0 <= idx < self.k_src:
                    raise ValidationError(
                        f"target {c} references source {idx}, valid range is [0, {self.k_src})",
                        code="INDEX_OUT_OF_RANGE",
                    )

    @property
    def n_targets(self) -> int:
        return len(self.sets)


def parse_assignment(
    text: str,
    targets: Vocabulary,
    k_src: int,
    source_names: Vocabulary | None = None,
) -> ManyToOneAssignment:
    """Parse the mapping file format: one `target_name: src, src, ...` per line.

    Sources may be integer indices or, when a source vocabulary is given,
    source class names. Unknown targets, duplicate lines, duplicates within a
    line, and uncovered targets are all rejected.
    """
    seen: dict[str, tuple[int, ...]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ValidationError(f"line {lineno}: expected 'target: sources'", code="PARSE_ERROR")
        name, _, rhs = line.partition(":")
        name = name.strip()
        if name not in targets.names:
            raise ValidationError(f"line {lineno}: unknown target '{name}'", code="UNKNOWN_TARGET")
        if name in seen:
            raise ValidationError(f"line {lineno}: target '{name}' listed twice", code="DUPLICATE_TARGET")
        indices = []
        for token in rhs.split(","):
            token = token.strip()
            if not token:
                continue
            if token.lstrip("-").isdigit():
                indices.append(int(token))
            elif source_names is not None and token in source_names.names:
                indices.append(source_names.index(token))
            else:
                raise ValidationError(
                    f"line {lineno}: source '{token}' is neither an index nor a known name",
                    code="UNKNOWN_SOURCE",
                )
        if len(indices) != len(set(indices)):
            raise ValidationError(f"line {lineno}: duplicate source for '{name}'", code="DUPLICATE_SOURCE")
        seen[name] = tuple(indices)
    missing = [n for n in targets.names if n not in seen]
    if missing:
        raise ValidationError(f"targets without sources: {missing}", code="EMPTY_ASSIGNMENT")
    return ManyToOneAssignment(sets=tuple(seen[n] for n in targets.names), k_src=k_src)


def many_to_one_forward(source_probs, a: ManyToOneAssignment) -> np.ndarray:
    """Per-target mean of the assigned source probabilities."""
    p = check_probabilities(source_probs, "source_probs")
    if p.shape != (a.k_src,):
        raise ValidationError(
            f"expected {a.k_src} source probabilities, got shape {p.shape}",
            code="INDEX_OUT_OF_RANGE",
        )
    return np.array([p[list(s)].mean() for s in a.sets])


class ManyToOneMapper(nn.Module):
    """Differentiable batched version: sigmoid on scores, then set means."""

    kind = MapperKind.MANY_TO_ONE

    def __init__(self, assignment: ManyToOneAssignment):
        super().__init__()
        self.assignment = assignment
        self.k_src = assignment.k_src
        self.n_targets = assignment.n_targets
        for c, s in enumerate(assignment.sets):
            self.register_buffer(f"idx_{c}", torch.tensor(list(s), dtype=torch.long))

    def forward(self, scores: torch.Tensor) -> torch.Tensor:
        probs = torch.sigmoid(scores)
        cols = [
            probs.index_select(1, getattr(self, f"idx_{c}")).mean(dim=1)
            for c in range(self.n_targets)
        ]
        return torch.stack(cols, dim=1)


class FCLMapper(nn.Module):
    """Trainable affine map from source scores to target logits, then sigmoid.

    Weights start uniform in +-1/sqrt(K_src), biases at zero, drawn from the
    package LCG so equal seeds give identical mappers.
    """

    kind = MapperKind.FCL

    def __init__(self, k_src: int, n_targets: int, seed: int = 0):
        super().__init__()
        self.k_src = k_src
        self.n_targets = n_targets
        self.linear = nn.Linear(k_src, n_targets)
        gen = Lcg64(derive_seed(seed, "mapper.fcl"))
        bound = 1.0 / np.sqrt(k_src)
        with torch.no_grad():
            self.linear.weight.copy_(
                torch.tensor(gen.uniform((n_targets, k_src), -bound, bound))
            )
            self.linear.bias.zero_()

    def forward(self, scores: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.linear(scores))


def fcl_forward(scores, m: FCLMapper) -> np.ndarray:
    """Single-vector forward: sigmoid(W scores + b), strictly inside (0, 1)."""
    s = as_float_array(scores, "scores")
    if s.shape != (m.k_src,):
        raise ValidationError(
            f"expected {m.k_src} scores, got shape {s.shape}", code="NON_FINITE_INPUT"
        )
    w = m.linear.weight.detach().cpu().numpy().astype(np.float64)
    b = m.linear.bias.detach().cpu().numpy().astype(np.float64)
    z = w @ s + b
    return 1.0 / (1.0 + np.exp(-z))


def fcl_gradient(scores, m: FCLMapper, upstream) -> dict[str, np.ndarray]:
    """Exact gradients of sum(upstream * fcl_forward) for W, b, and the scores."""
    s = as_float_array(scores, "scores")
    up = as_float_array(upstream, "upstream")
    if up.shape != (m.n_targets,):
        raise ValidationError(
            f"upstream must have length {m.n_targets}, got shape {up.shape}",
            code="NON_FINITE_INPUT",
        )
    p = fcl_forward(s, m)
    dz = up * p * (1.0 - p)  # sigmoid backward
    w = m.linear.weight.detach().cpu().numpy().astype(np.float64)
    return {
        "weight": np.outer(dz, s),
        "bias": dz,
        "scores": w.T @ dz,
    }


def init_mapper(
    kind: MapperKind | str,
    k_src: int,
    n_targets: int,
    assignment: ManyToOneAssignment | None = None,
    seed: int = 0,
) -> nn.Module:
    kind = MapperKind(kind)
    if kind is MapperKind.MANY_TO_ONE:
        if assignment is None:
            raise ValidationError(
                "many-to-one mapping requires an assignment", code="EMPTY_ASSIGNMENT"
            )
        if assignment.k_src != k_src or assignment.n_targets != n_targets:
            raise ValidationError(
                f"assignment is {assignment.k_src}->{assignment.n_targets}, "
                f"model needs {k_src}->{n_targets}",
                code="INDEX_OUT_OF_RANGE",
            )
        return ManyToOneMapper(assignment)
    return FCLMapper(k_src, n_targets, seed=seed)
