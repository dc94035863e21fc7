"""Global-Grouped Coordinate Attention.

The channel axis is split into ``G`` groups. Each group is pooled along
height and width (average and/or max), every pooled descriptor goes
through one shared 1x1 bottleneck, the branch outputs are summed and
squashed by a sigmoid, and the two directional gates rescale the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import GgcaConfig
from .errors import ConfigError, ShapeError
from .tensor import DTYPE, relu, sigmoid

BN_EPS = 1e-5


@dataclass
class GgcaWeights:
    """One parameter set shared by every group and every pooled branch."""

    u1_w: np.ndarray  # c_mid x c_g
    u1_b: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    u2_w: np.ndarray  # c_g x c_mid
    u2_b: np.ndarray

    def __post_init__(self):
        if np.any(self.bn_var < 0):
            raise ValueError("batch-norm running variance must be non-negative")

    @property
    def group_width(self) -> int:
        return self.u1_w.shape[1]

    @property
    def mid_width(self) -> int:
        return self.u1_w.shape[0]

    def named(self, prefix: str = "ggca") -> dict[str, np.ndarray]:
        return {f"{prefix}/{k}": v for k, v in vars(self).items()}

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray], prefix: str = "ggca") -> "GgcaWeights":
        names = ("u1_w", "u1_b", "bn_gamma", "bn_beta", "bn_mean", "bn_var", "u2_w", "u2_b")
        return cls(**{n: tensors[f"{prefix}/{n}"] for n in names})

    @classmethod
    def zeros(cls, c_g: int, c_mid: int) -> "GgcaWeights":
        """Zero projections with identity batch norm; the gates become exactly 0.5."""
        z = lambda *s: np.zeros(s, DTYPE)  # noqa: E731
        return cls(z(c_mid, c_g), z(c_mid), np.ones(c_mid, DTYPE), z(c_mid),
                   z(c_mid), np.ones(c_mid, DTYPE), z(c_g, c_mid), z(c_g))


def ggca_shapes(channels: int, cfg: GgcaConfig, prefix: str = "ggca") -> dict[str, tuple[int, ...]]:
    c_g, c_mid = cfg.group_width(channels), cfg.mid_width(channels)
    return {
        f"{prefix}/u1_w": (c_mid, c_g), f"{prefix}/u1_b": (c_mid,),
        f"{prefix}/bn_gamma": (c_mid,), f"{prefix}/bn_beta": (c_mid,),
        f"{prefix}/bn_mean": (c_mid,), f"{prefix}/bn_var": (c_mid,),
        f"{prefix}/u2_w": (c_g, c_mid), f"{prefix}/u2_b": (c_g,),
    }


def init_ggca(channels: int, cfg: GgcaConfig, rng: np.random.Generator, scale: float | None = None) -> GgcaWeights:
    """Random projections (uniform, fan-in scaled by default), zero biases, identity BN."""
    c_g, c_mid = cfg.group_width(channels), cfg.mid_width(channels)
    s1 = scale if scale is not None else 1.0 / np.sqrt(c_g)
    s2 = scale if scale is not None else 1.0 / np.sqrt(c_mid)
    w = GgcaWeights.zeros(c_g, c_mid)
    w.u1_w = rng.uniform(-s1, s1, size=(c_mid, c_g)).astype(DTYPE)
    w.u2_w = rng.uniform(-s2, s2, size=(c_g, c_mid)).astype(DTYPE)
    return w


def tokens_to_map(tokens: np.ndarray) -> np.ndarray:
    """N_s x D search tokens to a D x H x W map (token ``i*W + j`` lands at ``(i, j)``)."""
    n, d = tokens.shape
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise ShapeError(f"{n} tokens do not form a square grid")
    return np.ascontiguousarray(tokens.T.reshape(d, side, side))


def map_to_tokens(fmap: np.ndarray) -> np.ndarray:
    c, h, w = fmap.shape
    return np.ascontiguousarray(fmap.reshape(c, h * w).T)


def grouped_dual_pool(fmap: np.ndarray, groups: int):
    """Directional pooling per group.

    Returns ``(h_avg, h_max, w_avg, w_max)``; the ``h_*`` arrays are
    G x c_g x H (pooled over width) and the ``w_*`` arrays G x c_g x W
    (pooled over height).
    """
    c, h, w = fmap.shape
    if c % groups:
        raise ConfigError(f"{c} channels are not divisible into {groups} groups")
    x = fmap.reshape(groups, c // groups, h, w)
    return x.mean(axis=3, dtype=DTYPE), x.max(axis=3), x.mean(axis=2, dtype=DTYPE), x.max(axis=2)


def shared_transform(pooled: np.ndarray, w: GgcaWeights) -> np.ndarray:
    """``U2 . ReLU(BN(U1 . p + b1)) + b2`` for every channel vector ``p = pooled[g, :, t]``."""
    if pooled.ndim != 3 or pooled.shape[1] != w.group_width:
        raise ShapeError(f"pooled descriptor {pooled.shape} does not match group width {w.group_width}")
    hid = np.einsum("mc,gct->gmt", w.u1_w, pooled) + w.u1_b[None, :, None]
    scale = w.bn_gamma / np.sqrt(w.bn_var + DTYPE(BN_EPS))
    hid = (hid - w.bn_mean[None, :, None]) * scale[None, :, None] + w.bn_beta[None, :, None]
    out = np.einsum("cm,gmt->gct", w.u2_w, relu(hid)) + w.u2_b[None, :, None]
    return out.astype(DTYPE, copy=False)


def attention_weights(y_avg: np.ndarray | None, y_max: np.ndarray | None) -> np.ndarray:
    """``sigmoid(y_avg + y_max)``; pass ``None`` for a branch that is switched off."""
    if y_avg is None and y_max is None:
        raise ValueError("at least one pooling branch is required")
    if y_avg is not None and y_max is not None and y_avg.shape != y_max.shape:
        raise ShapeError(f"branch shapes differ: {y_avg.shape} vs {y_max.shape}")
    if y_avg is None:
        return sigmoid(y_max)
    if y_max is None:
        return sigmoid(y_avg)
    return sigmoid(y_avg + y_max)


def directional_gates(fmap: np.ndarray, cfg: GgcaConfig, w: GgcaWeights):
    """Height gate (G x c_g x H) and width gate (G x c_g x W)."""
    h_avg, h_max, w_avg, w_max = grouped_dual_pool(fmap, cfg.groups)
    use_avg = cfg.pooling in ("avg", "avg_max")
    use_max = cfg.pooling in ("max", "avg_max")
    a_h = attention_weights(shared_transform(h_avg, w) if use_avg else None,
                            shared_transform(h_max, w) if use_max else None)
    a_w = attention_weights(shared_transform(w_avg, w) if use_avg else None,
                            shared_transform(w_max, w) if use_max else None)
    return a_h, a_w


def ggca_forward(fmap: np.ndarray, cfg: GgcaConfig, w: GgcaWeights) -> np.ndarray:
    c, h, wd = fmap.shape
    c_g = cfg.group_width(c)
    if c_g != w.group_width:
        raise ShapeError(f"weights expect group width {w.group_width}, map gives {c_g}")
    a_h, a_w = directional_gates(fmap, cfg, w)
    x = fmap.reshape(cfg.groups, c_g, h, wd)
    out = x * a_h[:, :, :, None] * a_w[:, :, None, :]
    return out.reshape(c, h, wd)


def ggca_param_count(channels: int, cfg: GgcaConfig) -> int:
    c_g, c_mid = cfg.group_width(channels), cfg.mid_width(channels)
    return 2 * c_g * c_mid + c_g + c_mid + 4 * c_mid
