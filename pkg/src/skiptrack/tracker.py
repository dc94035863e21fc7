"""Single-frame tracking pipeline.

crop -> joint embedding (template tokens cached) -> blocks 1..l_star ->
selector -> one deep block -> GGCA on the search tokens -> head ->
window penalty -> box decode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backbone import LayerFeatures, apply_block, embed_search, embed_template, forward_prefix
from .errors import ShapeError
from .ggca import ggca_forward, map_to_tokens, tokens_to_map
from .head import head_forward
from .model import Model
from .selector import decide, select_layer, selector_logits
from .tensor import DTYPE, window_2d

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
PENALTY_FLOOR = 1e-6


@dataclass(frozen=True)
class TrackerSettings:
    search_factor: float = 4.0
    template_factor: float = 2.0
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    window: str = "hann"


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals) or self.w <= 0 or self.h <= 0:
            raise ValueError(f"invalid box {vals}")


@dataclass(frozen=True)
class CropParams:
    """Maps crop pixel ``(u, v)`` to frame point ``(x0 + u * scale, y0 + v * scale)``."""

    x0: float
    y0: float
    scale: float
    frame_w: int | None = None
    frame_h: int | None = None

    @classmethod
    def around(cls, center, side: float, out_side: int, frame_shape=None) -> "CropParams":
        fh, fw = (frame_shape[0], frame_shape[1]) if frame_shape is not None else (None, None)
        return cls(center[0] - side / 2.0, center[1] - side / 2.0, side / out_side, fw, fh)


def crop_resize(frame: np.ndarray, center, side: float, out_side: int, normalize: bool = True,
                mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """Square crop of an H x W x 3 uint8 frame, bilinearly resampled to 3 x out x out.

    Crop pixel ``u`` samples frame coordinate ``x0 + (u + 0.5) * s - 0.5``
    with ``s = side / out_side``. Samples outside the frame use the frame's
    per-channel mean. With ``normalize`` the result is scaled to [0, 1] and
    standardized; otherwise raw pixel values are returned.
    """
    if side <= 0 or out_side <= 0:
        raise ValueError("crop side and output side must be positive")
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ShapeError(f"frame must be H x W x 3, got {frame.shape}")
    fh, fw, _ = frame.shape
    img = frame.astype(np.float64)
    fill = img.reshape(-1, 3).mean(axis=0)

    s = side / out_side
    x0, y0 = center[0] - side / 2.0, center[1] - side / 2.0
    u = np.arange(out_side)
    xs = x0 + (u + 0.5) * s - 0.5
    ys = y0 + (u + 0.5) * s - 0.5
    xf, yf = np.floor(xs), np.floor(ys)
    ax, ay = xs - xf, ys - yf
    xi, yi = xf.astype(np.int64), yf.astype(np.int64)

    def gather(r, c):
        inside = ((r >= 0) & (r < fh))[:, None] & ((c >= 0) & (c < fw))[None, :]
        vals = img[np.clip(r, 0, fh - 1)[:, None], np.clip(c, 0, fw - 1)[None, :]]
        return np.where(inside[..., None], vals, fill)

    top = gather(yi, xi) * (1 - ax)[None, :, None] + gather(yi, xi + 1) * ax[None, :, None]
    bot = gather(yi + 1, xi) * (1 - ax)[None, :, None] + gather(yi + 1, xi + 1) * ax[None, :, None]
    out = top * (1 - ay)[:, None, None] + bot * ay[:, None, None]
    if normalize:
        out = (out / 255.0 - np.asarray(mean)) / np.asarray(std)
    return np.ascontiguousarray(out.transpose(2, 0, 1), dtype=DTYPE)


def hanning_penalty(score: np.ndarray, kind: str = "hann") -> np.ndarray:
    """Shift scores to be non-negative, then multiply by the 2-D window.

    A small floor is added after the shift so a constant map still ranks by
    the window instead of collapsing to zeros.
    """
    shifted = score - score.min() + DTYPE(PENALTY_FLOOR)
    return (shifted * window_2d(*score.shape, kind)).astype(DTYPE)


def decode_box(score: np.ndarray, offset: np.ndarray, size: np.ndarray, crop: CropParams,
               search_side: int) -> BoundingBox:
    """Box at the highest-scoring cell (first in row-major order on ties), in frame coordinates."""
    h, w = score.shape
    i, j = np.unravel_index(int(np.argmax(score)), score.shape)
    cx_s = (j + 0.5 + float(offset[0, i, j])) / w * search_side
    cy_s = (i + 0.5 + float(offset[1, i, j])) / h * search_side
    bw_s = float(size[0, i, j]) * search_side
    bh_s = float(size[1, i, j]) * search_side
    cx, cy = crop.x0 + cx_s * crop.scale, crop.y0 + cy_s * crop.scale
    bw, bh = bw_s * crop.scale, bh_s * crop.scale
    if crop.frame_w is not None:
        cx, bw = _clip_span(cx, bw, crop.frame_w)
    if crop.frame_h is not None:
        cy, bh = _clip_span(cy, bh, crop.frame_h)
    return BoundingBox(cx, cy, bw, bh)


def _clip_span(center: float, length: float, limit: int) -> tuple[float, float]:
    center = min(max(center, 0.0), float(limit))
    lo, hi = max(center - length / 2.0, 0.0), min(center + length / 2.0, float(limit))
    if hi <= lo:
        # degenerate after clipping; keep a 1px box at the boundary
        lo, hi = (lo - 1.0, lo) if lo >= limit else (hi, hi + 1.0)
    return (lo + hi) / 2.0, hi - lo


@dataclass
class StepInfo:
    chosen_k: int
    score_max: float
    blocks_executed: list[int]
    tie_broken: bool


@dataclass
class TrackState:
    box: BoundingBox
    template_tokens: np.ndarray = field(repr=False)
    last_crop: CropParams | None = None
    frame_index: int = 0
    last_step: StepInfo | None = None


def init_track(frame: np.ndarray, box: BoundingBox, model: Model,
               settings: TrackerSettings = TrackerSettings()) -> TrackState:
    cfg = model.cfg
    side = settings.template_factor * math.sqrt(box.w * box.h)
    Z = crop_resize(frame, (box.cx, box.cy), side, cfg.template_side, mean=settings.mean, std=settings.std)
    tokens = embed_template(Z, cfg, model.backbone)
    tokens.setflags(write=False)
    return TrackState(box, tokens)


def run_search(state: TrackState, S: np.ndarray, model: Model, crop: CropParams,
               settings: TrackerSettings = TrackerSettings(), forced_k: int | None = None):
    """Everything after cropping; returns ``(box, StepInfo)``."""
    cfg = model.cfg
    trace: list[int] = []
    x0 = LayerFeatures(0, np.concatenate([state.template_tokens, embed_search(S, cfg, model.backbone)]))
    sat = forward_prefix(x0, cfg, model.backbone, cfg.l_star, trace)
    if forced_k is None:
        decision = select_layer(sat.tokens[0], model.selector)
    else:
        decision = decide(selector_logits(sat.tokens[0], model.selector))
        decision.chosen_k, decision.tie_broken = forced_k, False
    out = apply_block(sat, cfg.l_star + decision.chosen_k, cfg, model.backbone, trace)

    fmap = tokens_to_map(out.tokens[cfg.n_template:])
    enhanced = ggca_forward(fmap, cfg.ggca, model.ggca)
    score, offset, size = head_forward(enhanced, model.head)
    box = decode_box(hanning_penalty(score, settings.window), offset, size, crop, cfg.search_side)
    return box, StepInfo(decision.chosen_k, float(score.max()), trace, decision.tie_broken)


def track_step(state: TrackState, frame: np.ndarray, model: Model,
               settings: TrackerSettings = TrackerSettings(), forced_k: int | None = None):
    """Track one frame; returns ``(new_state, box)``. ``new_state.last_step`` holds diagnostics."""
    cfg = model.cfg
    b = state.box
    side = settings.search_factor * math.sqrt(b.w * b.h)
    crop = CropParams.around((b.cx, b.cy), side, cfg.search_side, frame.shape)
    S = crop_resize(frame, (b.cx, b.cy), side, cfg.search_side, mean=settings.mean, std=settings.std)
    box, info = run_search(state, S, model, crop, settings, forced_k)
    new = TrackState(box, state.template_tokens, crop, state.frame_index + 1, info)
    return new, box


def enhance_search_tokens(tokens: np.ndarray, model: Model) -> np.ndarray:
    """GGCA on the search tokens only; template tokens pass through untouched."""
    cfg = model.cfg
    fmap = tokens_to_map(tokens[cfg.n_template:])
    out = map_to_tokens(ggca_forward(fmap, cfg.ggca, model.ggca))
    return np.concatenate([tokens[:cfg.n_template], out])
