"""Trainable input transforms applied to spectrograms before the frozen scorer.

Three families, all shape-preserving:

* additive noise: x + N with one trainable matrix shared by every input,
* a two-layer 3x3 convolution stack,
* a three-level U-Net (conv/BN/ReLU blocks, 2x2 max-pool contraction,
  bilinear-upsample expansion, channel-concatenated skips).

Initialization draws from the package LCG so equal seeds give bitwise-equal
parameters; the noise matrix starts at zero, making a fresh noise model
exactly the identity baseline.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeMismatch, ValidationError
from .rng import Lcg64, derive_seed

DEFAULT_CNN_CHANNELS = 96
DEFAULT_UNET_WIDTHS = (4, 8, 16)


class ReprogrammerKind(str, Enum):
    NONE = "none"
    NOISE = "noise"
    CNN = "cnn"
    UNET = "unet"


class _ReprogrammerBase(nn.Module):
    kind: ReprogrammerKind
    dims: tuple[int, int]

    def _check(self, x: torch.Tensor):
        if tuple(x.shape[-2:]) != tuple(self.dims):
            raise ShapeMismatch(
                f"{self.kind.value} reprogrammer expects {self.dims}, got {tuple(x.shape[-2:])}"
            )

    def transform(self, x) -> np.ndarray:
        """Single-matrix convenience wrapper around the batched forward.

        Runs in double precision (float32 parameters widen losslessly and are
        restored afterwards) with batch-norm in evaluation mode.
        """
        t = torch.as_tensor(np.asarray(x, dtype=np.float64))
        if t.ndim != 2:
            raise ShapeMismatch(f"transform expects (T, F), got {tuple(t.shape)}")
        self._check(t)
        orig_dtype = next((p.dtype for p in self.parameters()), None)
        was_training = self.training
        self.eval()
        self.to(torch.float64)
        try:
            with torch.no_grad():
                out = self.forward(t.unsqueeze(0))
        finally:
            if orig_dtype is not None:
                self.to(orig_dtype)
            self.train(was_training)
        return out.squeeze(0).detach().cpu().numpy()

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def gradients(self, x, upstream) -> dict[str, np.ndarray]:
        """Exact gradients of sum(upstream * forward(x)) for every parameter."""
        t = torch.as_tensor(np.asarray(x, dtype=np.float64))
        if t.ndim == 2:
            t = t.unsqueeze(0)
        self._check(t)
        up = torch.as_tensor(np.asarray(upstream, dtype=np.float64))
        if up.ndim == 2:
            up = up.unsqueeze(0)
        if up.shape != t.shape:
            raise ShapeMismatch(
                f"upstream shape {tuple(up.shape)} must match input shape {tuple(t.shape)}"
            )
        dtype = next(self.parameters(), torch.tensor(0.0)).dtype
        self.zero_grad()
        out = self.forward(t.to(dtype))
        (out * up.to(dtype)).sum().backward()
        grads = {}
        for name, p in self.named_parameters():
            grads[name] = (
                p.grad.detach().cpu().numpy().astype(np.float64)
                if p.grad is not None
                else np.zeros(p.shape)
            )
        return grads


class IdentityReprogrammer(_ReprogrammerBase):
    kind = ReprogrammerKind.NONE

    def __init__(self, dims: tuple[int, int]):
        super().__init__()
        self.dims = tuple(dims)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        return x


class NoiseReprogrammer(_ReprogrammerBase):
    """x + N with a trainable perturbation independent of the input."""

    kind = ReprogrammerKind.NOISE

    def __init__(self, dims: tuple[int, int]):
        super().__init__()
        self.dims = tuple(dims)
        self.noise = nn.Parameter(torch.zeros(dims))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        return x + self.noise


def _init_conv(conv: nn.Conv2d, gen: Lcg64):
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    bound = 1.0 / np.sqrt(fan_in)
    with torch.no_grad():
        conv.weight.copy_(torch.tensor(gen.uniform(tuple(conv.weight.shape), -bound, bound)))
        if conv.bias is not None:
            conv.bias.zero_()


class CNNReprogrammer(_ReprogrammerBase):
    """Two 3x3 convolutions (stride 1, padding 1), optional ReLU between them.

    No pooling, so the output grid matches the input; no activation after the
    second conv, which would clip the negative range of log-mel values.
    """

    kind = ReprogrammerKind.CNN

    def __init__(self, dims: tuple[int, int], channels: int = DEFAULT_CNN_CHANNELS,
                 relu_between: bool = True, seed: int = 0):
        super().__init__()
        self.dims = tuple(dims)
        self.relu_between = relu_between
        self.conv1 = nn.Conv2d(1, channels, 3, stride=1, padding=1)
        self.conv2 = nn.Conv2d(channels, 1, 3, stride=1, padding=1)
        gen = Lcg64(derive_seed(seed, "reprogrammer.cnn"))
        _init_conv(self.conv1, gen)
        _init_conv(self.conv2, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        h = self.conv1(x.unsqueeze(1))
        if self.relu_between:
            h = F.relu(h)
        return self.conv2(h).squeeze(1)


class _DownBlock(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=1, padding=1)
        self.bn = nn.BatchNorm2d(c_out)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class _UpBlock(nn.Module):
    def __init__(self, c_in, c_out, final: bool = False):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=1, padding=1)
        self.bn = nn.BatchNorm2d(c_out)
        self.final = final

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.bn(self.conv(torch.cat([x, skip], dim=1)))
        return x if self.final else F.relu(x)


class UNetReprogrammer(_ReprogrammerBase):
    """Three conv blocks down, three up, skip-concatenation at matched levels.

    Contraction block: conv 3x3 -> batch-norm -> ReLU -> 2x2 max-pool.
    Expansion block: bilinear upsample x2 -> concat skip -> conv 3x3 ->
    batch-norm -> ReLU (no ReLU after the last block, which emits the
    reprogrammed spectrogram). Requires both dims divisible by 8.
    """

    kind = ReprogrammerKind.UNET

    def __init__(self, dims: tuple[int, int], widths=DEFAULT_UNET_WIDTHS, seed: int = 0):
        super().__init__()
        if dims[0] % 8 or dims[1] % 8:
            raise ValidationError(
                f"u-net needs dims divisible by 8, got {tuple(dims)}", code="BAD_DIMS"
            )
        if len(widths) != 3 or any(w < 1 for w in widths):
            raise ValidationError(f"need 3 positive level widths, got {widths}", code="BAD_DIMS")
        self.dims = tuple(dims)
        self.widths = tuple(int(w) for w in widths)
        w1, w2, w3 = self.widths
        self.enc1 = _DownBlock(1, w1)
        self.enc2 = _DownBlock(w1, w2)
        self.enc3 = _DownBlock(w2, w3)
        self.dec3 = _UpBlock(2 * w3, w2)
        self.dec2 = _UpBlock(2 * w2, w1)
        self.dec1 = _UpBlock(2 * w1, 1, final=True)
        gen = Lcg64(derive_seed(seed, "reprogrammer.unet"))
        for block in (self.enc1, self.enc2, self.enc3, self.dec3, self.dec2, self.dec1):
            _init_conv(block.conv, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        s1 = self.enc1(x.unsqueeze(1))
        s2 = self.enc2(F.max_pool2d(s1, 2))
        s3 = self.enc3(F.max_pool2d(s2, 2))
        bottom = F.max_pool2d(s3, 2)
        u3 = self.dec3(bottom, s3)
        u2 = self.dec2(u3, s2)
        return self.dec1(u2, s1).squeeze(1)


def init_reprogrammer(
    kind: ReprogrammerKind | str,
    dims: tuple[int, int],
    *,
    cnn_channels: int = DEFAULT_CNN_CHANNELS,
    cnn_relu: bool = True,
    unet_widths=DEFAULT_UNET_WIDTHS,
    seed: int = 0,
) -> _ReprogrammerBase:
    """Build a reprogrammer with deterministic parameters for the given seed."""
    kind = ReprogrammerKind(kind)
    if dims[0] < 1 or dims[1] < 1:
        raise ValidationError(f"dims must be positive, got {tuple(dims)}", code="BAD_DIMS")
    if kind is ReprogrammerKind.NONE:
        return IdentityReprogrammer(dims)
    if kind is ReprogrammerKind.NOISE:
        return NoiseReprogrammer(dims)
    if kind is ReprogrammerKind.CNN:
        return CNNReprogrammer(dims, channels=cnn_channels, relu_between=cnn_relu, seed=seed)
    return UNetReprogrammer(dims, widths=unet_widths, seed=seed)


def param_count(r: _ReprogrammerBase) -> int:
    """Exact number of trainable scalars."""
    return r.param_count()
