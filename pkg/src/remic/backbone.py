"""Frozen scorers: spectrogram in, K_src pre-activation scores out, never updated.

Gradients may flow *through* a backbone to its input, but its parameters are
plain buffers that no optimizer ever sees, and ``fingerprint()`` hashes them
so the no-update guarantee is checkable bit-for-bit.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeMismatch, WeightsUnavailable
from .rng import Lcg64, derive_seed

PATCH = 16  # pooling tile size, mirroring the patch geometry of the real scorer


@runtime_checkable
class FrozenBackbone(Protocol):
    input_dims: tuple[int, int]
    k_src: int

    def score(self, x) -> np.ndarray: ...
    def score_batch(self, x: torch.Tensor) -> torch.Tensor: ...
    def backprop_input(self, x, upstream) -> np.ndarray: ...
    def fingerprint(self) -> str: ...


def fingerprint_tensors(named) -> str:
    """sha256 over (name, shape, float32 little-endian bytes) in name order."""
    h = hashlib.sha256()
    for name, tensor in sorted(named, key=lambda kv: kv[0]):
        h.update(name.encode("utf-8"))
        h.update(np.asarray(tensor.detach().cpu().numpy().shape, dtype="<i8").tobytes())
        h.update(tensor.detach().cpu().numpy().astype("<f4").tobytes())
    return h.hexdigest()


class _BackboneBase(torch.nn.Module):
    """Shared plumbing: shape checks, numpy adapters, input-gradient path."""

    input_dims: tuple[int, int]
    k_src: int

    def _check(self, x: torch.Tensor):
        if tuple(x.shape[-2:]) != tuple(self.input_dims):
            raise ShapeMismatch(
                f"backbone expects {self.input_dims} input, got {tuple(x.shape[-2:])}"
            )

    def score_batch(self, x: torch.Tensor) -> torch.Tensor:
        """Differentiable batched forward, (B, T, F) -> (B, k_src)."""
        self._check(x)
        return self.forward(x)

    def score(self, x) -> np.ndarray:
        t = torch.as_tensor(np.asarray(x, dtype=np.float64))
        if t.ndim != 2:
            raise ShapeMismatch(f"score expects a single (T, F) matrix, got {tuple(t.shape)}")
        self._check(t)
        with torch.no_grad():
            out = self.forward(t.unsqueeze(0).to(self._dtype()))
        return out.squeeze(0).detach().cpu().numpy().astype(np.float64)

    def backprop_input(self, x, upstream) -> np.ndarray:
        """Gradient of upstream . score(x) with respect to x; parameters untouched."""
        t = torch.as_tensor(np.asarray(x, dtype=np.float64)).to(self._dtype())
        if t.ndim != 2:
            raise ShapeMismatch(f"backprop_input expects (T, F), got {tuple(t.shape)}")
        self._check(t)
        up = torch.as_tensor(np.asarray(upstream, dtype=np.float64)).to(self._dtype())
        if up.shape != (self.k_src,):
            raise ShapeMismatch(f"upstream must have length {self.k_src}, got {tuple(up.shape)}")
        t = t.clone().requires_grad_(True)
        out = self.forward(t.unsqueeze(0)).squeeze(0)
        (out * up).sum().backward()
        return t.grad.detach().cpu().numpy().astype(np.float64)

    def fingerprint(self) -> str:
        named = list(self.named_buffers()) + list(self.named_parameters())
        return fingerprint_tensors(named)

    def _dtype(self):
        return next(iter(self.buffers())).dtype


class ToyBackbone(_BackboneBase):
    """Deterministic desk-scale stand-in for a pretrained scorer.

    Two stages: average pooling over 16x16 tiles, then a fixed random affine
    map to k_src units, a tanh, and a fixed random mixing layer emitting
    pre-activation scores. All weights come from the documented 64-bit linear
    generator, so construction is reproducible across platforms.

    The default gains put raw log-mel-scale inputs deep in the tanh's
    saturated region: a scorer "pretrained" for a different input regime,
    which is exactly the mismatch input reprogramming exists to bridge.
    """

    def __init__(
        self,
        frames: int,
        mels: int,
        k_src: int = 64,
        seed: int = 3,
        input_gain: float = 1.0,
        bias_span: float = 2.0,
        mix_gain: float = 1.0,
    ):
        super().__init__()
        if frames % PATCH or mels % PATCH:
            raise ShapeMismatch(
                f"toy backbone needs dims divisible by {PATCH}, got ({frames}, {mels})"
            )
        self.input_dims = (frames, mels)
        self.k_src = k_src
        self.seed = seed
        d = (frames // PATCH) * (mels // PATCH)
        gen = Lcg64(derive_seed(seed, "toy_backbone"))
        scale_in = input_gain / np.sqrt(d)
        scale_mix = mix_gain / np.sqrt(k_src)
        self.register_buffer(
            "w_in", torch.tensor(gen.uniform((k_src, d), -scale_in, scale_in), dtype=torch.float32)
        )
        self.register_buffer(
            "b_in", torch.tensor(gen.uniform(k_src, -bias_span, bias_span), dtype=torch.float32)
        )
        self.register_buffer(
            "w_mix",
            torch.tensor(gen.uniform((k_src, k_src), -scale_mix, scale_mix), dtype=torch.float32),
        )
        self.register_buffer("b_mix", torch.tensor(gen.uniform(k_src, -0.5, 0.5), dtype=torch.float32))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = F.avg_pool2d(x.unsqueeze(1), PATCH).flatten(1)
        hidden = torch.tanh(pooled @ self.w_in.T + self.b_in)
        return hidden @ self.w_mix.T + self.b_mix


class ASTAdapter(_BackboneBase):
    """Thin frozen boundary around an externally supplied pretrained scorer.

    The wrapped module must map (B, 1024, 128) spectrogram batches to
    (B, 527) pre-activation scores, i.e. with its final activation removed.
    Construction fails loudly when the weights are absent; there is no
    silent fallback.
    """

    def __init__(
        self,
        weights: str | Path | None = None,
        module: torch.nn.Module | None = None,
        loader=None,
        input_dims: tuple[int, int] = (1024, 128),
        k_src: int = 527,
    ):
        super().__init__()
        self.input_dims = tuple(input_dims)
        self.k_src = k_src
        if module is None:
            if weights is None:
                raise WeightsUnavailable("no pretrained weights locator given")
            path = Path(weights)
            if not path.exists():
                raise WeightsUnavailable(f"pretrained weights not found at {path}")
            if loader is None:
                raise WeightsUnavailable(
                    "a loader callable (path -> torch.nn.Module mapping "
                    "(B, T, F) spectrograms to (B, k_src) scores) is required "
                    "to materialize external weights"
                )
            module = loader(path)
        module = module.eval()
        for p in module.parameters():
            p.requires_grad_(False)
        self._module = module

    @classmethod
    def from_module(cls, module: torch.nn.Module, input_dims=(1024, 128), k_src=527):
        return cls(module=module, input_dims=input_dims, k_src=k_src)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._module(x)

    def fingerprint(self) -> str:
        named = list(self._module.named_parameters()) + list(self._module.named_buffers())
        return fingerprint_tensors(named)

    def _dtype(self):
        try:
            return next(iter(self._module.parameters())).dtype
        except StopIteration:
            return torch.float32
