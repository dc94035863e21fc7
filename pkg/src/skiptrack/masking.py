"""Block occlusion masks for template images.

Two generators are provided. ``uniform`` draws an i.i.d. score per block and
keeps the K highest-scoring blocks (MAE-style random masking, fixed masked
count). ``cox`` simulates a Poisson point process with a bell-shaped
intensity over the block grid by thinning a homogeneous process, and masks
every block hit by at least one accepted point; the intensity is scaled so
the expected masked count equals the uniform generator's.

Randomness comes from :class:`SplitMix64`, so a seed reproduces the same
pattern bit-for-bit on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backbone import BackboneWeights, forward_prefix, patch_embed
from .config import ModelConfig
from .errors import ConfigError, ShapeError

MASK_MODES = ("uniform", "cox")
SATURATED_INTENSITY = 50.0

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    """SplitMix64 generator.

    Output ``i`` (1-based) is ``mix(seed + i * 0x9E3779B97F4A7C15 mod 2^64)``,
    which lets :meth:`next_u64` be vectorized without changing the stream.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & 0xFFFFFFFFFFFFFFFF

    def next_u64(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + _GAMMA * np.arange(1, n + 1, dtype=np.uint64)
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        return z

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) built from the top 53 bits of each output."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class MaskConfig:
    block_side: int = 16
    mask_ratio: float = 0.25
    mode: str = "cox"
    cox_bandwidth_frac: float = 0.25
    seed: int = 0
    grid_h: int = 8
    grid_w: int = 8

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if self.mode not in MASK_MODES:
            raise ConfigError(f"mode must be one of {MASK_MODES}")
        if self.block_side < 1 or self.grid_h < 1 or self.grid_w < 1:
            raise ConfigError("block_side and grid sides must be positive")
        if self.cox_bandwidth_frac <= 0:
            raise ConfigError("cox_bandwidth_frac must be positive")

    @classmethod
    def for_template(cls, template_side: int, block_side: int = 16, **kw) -> "MaskConfig":
        if template_side % block_side:
            raise ConfigError(f"template side {template_side} is not divisible by block side {block_side}")
        g = template_side // block_side
        return cls(block_side=block_side, grid_h=g, grid_w=g, **kw)

    @property
    def cells(self) -> int:
        return self.grid_h * self.grid_w


@dataclass
class MaskPattern:
    grid: np.ndarray  # uint8, 1 = masked
    mode: str
    seed: int

    @property
    def realized_masked_count(self) -> int:
        return int(self.grid.sum())


@dataclass
class IntensityField:
    lam: np.ndarray
    expected_masked: float
    saturated: bool = False


def nearest_int(x: float) -> int:
    """Round half up, so 2.5 -> 3 (unlike Python's banker's rounding)."""
    return int(math.floor(x + 0.5))


def kept_block_count(cells: int, ratio: float) -> int:
    return nearest_int((1.0 - ratio) * cells)


def uniform_mask(cfg: MaskConfig, rng: SplitMix64 | None = None) -> MaskPattern:
    """Keep the K blocks with the largest uniform scores, mask the rest."""
    rng = rng or SplitMix64(cfg.seed)
    scores = rng.uniform(cfg.cells)
    keep = kept_block_count(cfg.cells, cfg.mask_ratio)
    order = np.argsort(-scores, kind="stable")
    grid = np.ones(cfg.cells, dtype=np.uint8)
    grid[order[:keep]] = 0
    return MaskPattern(grid.reshape(cfg.grid_h, cfg.grid_w), "uniform", cfg.seed)


def _bell(grid_h: int, grid_w: int, bandwidth_frac: float) -> np.ndarray:
    sigma = bandwidth_frac * min(grid_h, grid_w)
    i = np.arange(grid_h)[:, None] - (grid_h - 1) / 2.0
    j = np.arange(grid_w)[None, :] - (grid_w - 1) / 2.0
    return np.exp(-(i * i + j * j) / (2.0 * sigma * sigma))


def cox_intensity(grid_h: int, grid_w: int, ratio: float, bandwidth_frac: float = 0.25,
                  tol: float = 1e-9) -> IntensityField:
    """Gaussian-shaped per-cell intensity scaled so ``sum(1 - exp(-lam)) = ratio * cells``.

    ``1 - exp(-lam[i, j])`` is the probability that a cell receives at least
    one point, so the expected masked count matches uniform masking. The
    scale is found by bisection. At ``ratio == 1`` no finite scale reaches
    the target and every cell is set to ``SATURATED_INTENSITY``.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"ratio must lie in [0, 1], got {ratio}")
    cells = grid_h * grid_w
    target = ratio * cells
    if ratio == 0.0:
        return IntensityField(np.zeros((grid_h, grid_w)), 0.0)
    if ratio == 1.0:
        lam = np.full((grid_h, grid_w), SATURATED_INTENSITY)
        return IntensityField(lam, float(np.sum(-np.expm1(-lam))), saturated=True)

    shape = _bell(grid_h, grid_w, bandwidth_frac)

    def occupied(alpha):
        return float(np.sum(-np.expm1(-alpha * shape)))

    lo, hi = 0.0, 1.0
    while occupied(hi) < target:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if occupied(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    alpha = 0.5 * (lo + hi)
    return IntensityField(alpha * shape, occupied(alpha))


def _poisson_count(rate: float, area: float, rng: SplitMix64) -> int:
    """Number of arrivals of a rate-``rate`` process on [0, area] via exponential spacings."""
    if rate <= 0.0:
        return 0
    mean = rate * area
    total, count = 0.0, 0
    while True:
        chunk = int(mean + 4.0 * math.sqrt(mean) + 16)
        gaps = -np.log1p(-rng.uniform(chunk)) / rate
        arrivals = total + np.cumsum(gaps)
        inside = int(np.searchsorted(arrivals, area, side="right"))
        count += inside
        if inside < chunk:
            return count
        total = float(arrivals[-1])


def thinned_points(field: IntensityField, rng: SplitMix64) -> np.ndarray:
    """Sample the inhomogeneous process on the grid rectangle by thinning.

    Candidate points come from a homogeneous process with rate ``max(lam)``;
    each is kept with probability ``lam(cell) / max(lam)``. Returns an
    (n, 2) array of accepted ``(row, col)`` coordinates in cell units.
    """
    lam = field.lam
    gh, gw = lam.shape
    lam_max = float(lam.max())
    n = _poisson_count(lam_max, float(gh * gw), rng)
    if n == 0:
        return np.zeros((0, 2))
    u = rng.uniform(3 * n).reshape(n, 3)
    rows, cols = u[:, 0] * gh, u[:, 1] * gw
    ri = np.minimum(rows.astype(np.int64), gh - 1)
    ci = np.minimum(cols.astype(np.int64), gw - 1)
    accept = u[:, 2] * lam_max < lam[ri, ci]
    return np.stack([rows[accept], cols[accept]], axis=1)


def rasterize(points: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    grid = np.zeros((grid_h, grid_w), dtype=np.uint8)
    if len(points):
        ri = np.minimum(points[:, 0].astype(np.int64), grid_h - 1)
        ci = np.minimum(points[:, 1].astype(np.int64), grid_w - 1)
        grid[ri, ci] = 1
    return grid


def cox_mask(cfg: MaskConfig, rng: SplitMix64 | None = None, field: IntensityField | None = None) -> MaskPattern:
    rng = rng or SplitMix64(cfg.seed)
    field = field or cox_intensity(cfg.grid_h, cfg.grid_w, cfg.mask_ratio, cfg.cox_bandwidth_frac)
    pts = thinned_points(field, rng)
    return MaskPattern(rasterize(pts, cfg.grid_h, cfg.grid_w), "cox", cfg.seed)


def generate_mask(cfg: MaskConfig, rng: SplitMix64 | None = None) -> MaskPattern:
    if cfg.mode == "uniform":
        return uniform_mask(cfg, rng)
    return cox_mask(cfg, rng)


def apply_mask(Z: np.ndarray, pattern: MaskPattern, block_side: int) -> np.ndarray:
    """Zero every pixel of the masked blocks in all channels; kept pixels are copied unchanged."""
    _, h, w = Z.shape
    gh, gw = pattern.grid.shape
    if h != gh * block_side or w != gw * block_side:
        raise ShapeError(f"{gh}x{gw} grid of {block_side}px blocks does not cover a {h}x{w} image")
    pixel_mask = np.kron(pattern.grid, np.ones((block_side, block_side), dtype=np.uint8)).astype(bool)
    return np.where(pixel_mask[None], np.zeros((), Z.dtype), Z)


def orr_loss(t_unmasked: np.ndarray, t_masked: np.ndarray) -> float:
    """Mean squared difference between template-token representations."""
    if t_unmasked.shape != t_masked.shape:
        raise ShapeError(f"shape mismatch: {t_unmasked.shape} vs {t_masked.shape}")
    d = t_unmasked.astype(np.float64) - t_masked.astype(np.float64)
    return float(np.mean(d * d))


def orr_diagnostic(Z: np.ndarray, S: np.ndarray, pattern: MaskPattern, cfg: ModelConfig,
                   w: BackboneWeights, block_side: int) -> float:
    """Occlusion consistency of a frozen backbone.

    Runs ``(Z, S)`` and ``(masked Z, S)`` through all blocks and compares the
    template tokens of the last layer. Nothing is trained here.
    """
    clean = forward_prefix(patch_embed(Z, S, cfg, w), cfg, w, cfg.depth)
    occluded = forward_prefix(patch_embed(apply_mask(Z, pattern, block_side), S, cfg, w), cfg, w, cfg.depth)
    n = cfg.n_template
    return orr_loss(clean.tokens[:n], occluded.tokens[:n])


@dataclass
class MaskStatistics:
    mean_masked: float
    std_masked: float
    per_cell_frequency: np.ndarray  # fraction of trials in which each cell was masked
    trials: int
    first_pattern: MaskPattern


def mask_statistics(cfg: MaskConfig, trials: int) -> MaskStatistics:
    """Monte-Carlo summary over seeds ``cfg.seed, cfg.seed + 1, ...``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    field = None
    if cfg.mode == "cox":
        field = cox_intensity(cfg.grid_h, cfg.grid_w, cfg.mask_ratio, cfg.cox_bandwidth_frac)
    counts = np.zeros(trials)
    hits = np.zeros((cfg.grid_h, cfg.grid_w), dtype=np.int64)
    first = None
    for t in range(trials):
        rng = SplitMix64(cfg.seed + t)
        if cfg.mode == "uniform":
            pat = uniform_mask(cfg, rng)
        else:
            pat = cox_mask(cfg, rng, field)
        pat.seed = cfg.seed + t
        first = first or pat
        counts[t] = pat.realized_masked_count
        hits += pat.grid
    return MaskStatistics(float(counts.mean()), float(counts.std()), hits / trials, trials, first)
