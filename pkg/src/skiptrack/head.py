"""Convolutional prediction head: score, sub-cell offset and box size maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import DTYPE, relu, sigmoid

BRANCHES = {"score": 1, "offset": 2, "size": 2}


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-padded stride-1 3x3 convolution. ``x`` is C x H x W, ``w`` is O x C x 3 x 3."""
    c, h, wd = x.shape
    if w.shape[1:] != (c, 3, 3):
        raise ShapeError(f"kernel {w.shape} does not fit a {c}-channel input")
    p = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 3, 3, h, wd), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = p[:, dy:dy + h, dx:dx + wd]
    out = w.reshape(w.shape[0], -1) @ cols.reshape(c * 9, h * wd)
    return (out + b[:, None]).reshape(w.shape[0], h, wd).astype(DTYPE, copy=False)


@dataclass
class ConvBranch:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return conv3x3(relu(conv3x3(x, self.conv1_w, self.conv1_b)), self.conv2_w, self.conv2_b)


@dataclass
class HeadWeights:
    score: ConvBranch
    offset: ConvBranch
    size: ConvBranch

    def named(self, prefix: str = "head") -> dict[str, np.ndarray]:
        return {f"{prefix}/{br}/{k}": v for br in BRANCHES for k, v in vars(getattr(self, br)).items()}

    @classmethod
    def from_named(cls, tensors, prefix: str = "head") -> "HeadWeights":
        keys = ("conv1_w", "conv1_b", "conv2_w", "conv2_b")
        return cls(**{br: ConvBranch(**{k: tensors[f"{prefix}/{br}/{k}"] for k in keys}) for br in BRANCHES})

    @classmethod
    def zeros(cls, channels: int, hidden: int) -> "HeadWeights":
        def branch(out):
            return ConvBranch(np.zeros((hidden, channels, 3, 3), DTYPE), np.zeros(hidden, DTYPE),
                              np.zeros((out, hidden, 3, 3), DTYPE), np.zeros(out, DTYPE))
        return cls(**{br: branch(out) for br, out in BRANCHES.items()})


def head_shapes(channels: int, hidden: int, prefix: str = "head") -> dict[str, tuple[int, ...]]:
    shapes = {}
    for br, out in BRANCHES.items():
        shapes[f"{prefix}/{br}/conv1_w"] = (hidden, channels, 3, 3)
        shapes[f"{prefix}/{br}/conv1_b"] = (hidden,)
        shapes[f"{prefix}/{br}/conv2_w"] = (out, hidden, 3, 3)
        shapes[f"{prefix}/{br}/conv2_b"] = (out,)
    return shapes


def init_head(channels: int, hidden: int, rng: np.random.Generator) -> HeadWeights:
    w = HeadWeights.zeros(channels, hidden)
    for br in BRANCHES:
        b = getattr(w, br)
        s1, s2 = 1.0 / np.sqrt(9 * channels), 1.0 / np.sqrt(9 * hidden)
        b.conv1_w = rng.uniform(-s1, s1, size=b.conv1_w.shape).astype(DTYPE)
        b.conv2_w = rng.uniform(-s2, s2, size=b.conv2_w.shape).astype(DTYPE)
    return w


def head_forward(fmap: np.ndarray, w: HeadWeights):
    """Return ``(score H x W, offset 2 x H x W in (-0.5, 0.5), size 2 x H x W in (0, 1))``.

    Offset channel 0 is x, channel 1 is y; size channel 0 is width, 1 is height.
    """
    score = w.score(fmap)[0]
    offset = (0.5 * np.tanh(w.offset(fmap))).astype(DTYPE)
    size = sigmoid(w.size(fmap))
    return score, offset, size
