"""Joint patch embedding and the ViT block stack with skip composition."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .config import ModelConfig
from .errors import ShapeError
from .tensor import DTYPE, gelu, layer_norm, matmul, rowwise_softmax

LN_EPS = 1e-6
INIT_SCALE = 0.02


@dataclass
class LayerFeatures:
    """Token matrix emitted by block ``layer_index`` (0 is the embedding output)."""

    layer_index: int
    tokens: np.ndarray

    def __post_init__(self):
        if self.layer_index < 0:
            raise ValueError("layer_index must be non-negative")
        if self.tokens.ndim != 2:
            raise ShapeError(f"tokens must be N x D, got {self.tokens.shape}")


@dataclass
class BlockWeights:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    qkv_w: np.ndarray  # D x 3D, columns ordered q | k | v
    qkv_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    fc1_w: np.ndarray  # D x rD
    fc1_b: np.ndarray
    fc2_w: np.ndarray  # rD x D
    fc2_b: np.ndarray


@dataclass
class BackboneWeights:
    patch_w: np.ndarray  # 3*p*p x D, rows ordered (channel, row, col)
    patch_b: np.ndarray
    pos_template: np.ndarray  # N_z x D
    pos_search: np.ndarray  # N_s x D
    blocks: list[BlockWeights]  # blocks[i - 1] realizes block i

    def named(self, prefix: str = "backbone") -> dict[str, np.ndarray]:
        out = {
            f"{prefix}/patch_w": self.patch_w,
            f"{prefix}/patch_b": self.patch_b,
            f"{prefix}/pos_template": self.pos_template,
            f"{prefix}/pos_search": self.pos_search,
        }
        for i, blk in enumerate(self.blocks, start=1):
            for f in fields(BlockWeights):
                out[f"{prefix}/blocks/{i}/{f.name}"] = getattr(blk, f.name)
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray], cfg: ModelConfig, prefix: str = "backbone"):
        blocks = [
            BlockWeights(**{f.name: tensors[f"{prefix}/blocks/{i}/{f.name}"] for f in fields(BlockWeights)})
            for i in range(1, cfg.depth + 1)
        ]
        w = cls(
            patch_w=tensors[f"{prefix}/patch_w"],
            patch_b=tensors[f"{prefix}/patch_b"],
            pos_template=tensors[f"{prefix}/pos_template"],
            pos_search=tensors[f"{prefix}/pos_search"],
            blocks=blocks,
        )
        w.check(cfg)
        return w

    def check(self, cfg: ModelConfig) -> None:
        expected = backbone_shapes(cfg)
        for name, arr in self.named().items():
            if arr.shape != expected[name]:
                raise ShapeError(f"{name}: expected {expected[name]}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


def backbone_shapes(cfg: ModelConfig, prefix: str = "backbone") -> dict[str, tuple[int, ...]]:
    d, hidden = cfg.embed_dim, cfg.mlp_ratio * cfg.embed_dim
    block = {
        "ln1_gamma": (d,), "ln1_beta": (d,),
        "qkv_w": (d, 3 * d), "qkv_b": (3 * d,),
        "proj_w": (d, d), "proj_b": (d,),
        "ln2_gamma": (d,), "ln2_beta": (d,),
        "fc1_w": (d, hidden), "fc1_b": (hidden,),
        "fc2_w": (hidden, d), "fc2_b": (d,),
    }
    shapes = {
        f"{prefix}/patch_w": (3 * cfg.patch ** 2, d),
        f"{prefix}/patch_b": (d,),
        f"{prefix}/pos_template": (cfg.n_template, d),
        f"{prefix}/pos_search": (cfg.n_search, d),
    }
    for i in range(1, cfg.depth + 1):
        for name, shape in block.items():
            shapes[f"{prefix}/blocks/{i}/{name}"] = shape
    return shapes


def init_backbone(cfg: ModelConfig, rng: np.random.Generator) -> BackboneWeights:
    """Uniform(-0.02, 0.02) matrices and positional embeddings, zero biases, unit norms."""
    d = cfg.embed_dim

    def u(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(DTYPE)

    def zeros(n):
        return np.zeros(n, dtype=DTYPE)

    blocks = []
    for _ in range(cfg.depth):
        hidden = cfg.mlp_ratio * d
        blocks.append(BlockWeights(
            ln1_gamma=np.ones(d, DTYPE), ln1_beta=zeros(d),
            qkv_w=u(d, 3 * d), qkv_b=zeros(3 * d),
            proj_w=u(d, d), proj_b=zeros(d),
            ln2_gamma=np.ones(d, DTYPE), ln2_beta=zeros(d),
            fc1_w=u(d, hidden), fc1_b=zeros(hidden),
            fc2_w=u(hidden, d), fc2_b=zeros(d),
        ))
    return BackboneWeights(
        patch_w=u(3 * cfg.patch ** 2, d),
        patch_b=zeros(d),
        pos_template=u(cfg.n_template, d),
        pos_search=u(cfg.n_search, d),
        blocks=blocks,
    )


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """Split a 3 x H x W image into row-major non-overlapping patches.

    Returns an array of shape (H/p * W/p, 3*p*p); each row is the patch
    flattened in (channel, row, col) order.
    """
    c, h, w = img.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {img.shape} is not tiled by {patch}x{patch} patches")
    gh, gw = h // patch, w // patch
    x = img.reshape(c, gh, patch, gw, patch).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(x.reshape(gh * gw, c * patch * patch), dtype=DTYPE)


def embed_image(img: np.ndarray, w: BackboneWeights, pos: np.ndarray, patch: int) -> np.ndarray:
    return matmul(patchify(img, patch), w.patch_w) + w.patch_b + pos


def embed_template(Z: np.ndarray, cfg: ModelConfig, w: BackboneWeights) -> np.ndarray:
    if Z.shape != (3, cfg.template_side, cfg.template_side):
        raise ShapeError(f"template must be 3x{cfg.template_side}x{cfg.template_side}, got {Z.shape}")
    return embed_image(Z, w, w.pos_template, cfg.patch)


def embed_search(S: np.ndarray, cfg: ModelConfig, w: BackboneWeights) -> np.ndarray:
    if S.shape != (3, cfg.search_side, cfg.search_side):
        raise ShapeError(f"search image must be 3x{cfg.search_side}x{cfg.search_side}, got {S.shape}")
    return embed_image(S, w, w.pos_search, cfg.patch)


def patch_embed(Z: np.ndarray, S: np.ndarray, cfg: ModelConfig, w: BackboneWeights) -> LayerFeatures:
    """Embed template and search images into one token sequence, template first."""
    tokens = np.concatenate([embed_template(Z, cfg, w), embed_search(S, cfg, w)], axis=0)
    return LayerFeatures(0, tokens)


def attention(x: np.ndarray, blk: BlockWeights, heads: int) -> np.ndarray:
    n, d = x.shape
    dh = d // heads
    qkv = matmul(x, blk.qkv_w) + blk.qkv_b
    qkv = qkv.reshape(n, 3, heads, dh).transpose(1, 2, 0, 3)  # 3 x heads x N x dh
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = np.matmul(q, k.transpose(0, 2, 1)) * DTYPE(1.0 / np.sqrt(dh))
    out = np.matmul(rowwise_softmax(scores), v)  # heads x N x dh
    out = out.transpose(1, 0, 2).reshape(n, d)
    return matmul(out, blk.proj_w) + blk.proj_b


def transformer_block(x: np.ndarray, blk: BlockWeights, heads: int) -> np.ndarray:
    """Pre-norm block: ``x + MHSA(LN(x))`` followed by ``+ MLP(LN(.))`` with GELU."""
    if x.shape[1] % heads:
        raise ShapeError(f"embed dim {x.shape[1]} is not divisible by {heads} heads")
    x = x + attention(layer_norm(x, blk.ln1_gamma, blk.ln1_beta, LN_EPS), blk, heads)
    h = layer_norm(x, blk.ln2_gamma, blk.ln2_beta, LN_EPS)
    h = gelu(matmul(h, blk.fc1_w) + blk.fc1_b)
    return x + matmul(h, blk.fc2_w) + blk.fc2_b


def apply_block(x: LayerFeatures, index: int, cfg: ModelConfig, w: BackboneWeights,
                trace: list[int] | None = None) -> LayerFeatures:
    """Apply block ``index`` (1-based) to ``x``; the result is tagged with ``index``."""
    if not 1 <= index <= cfg.depth:
        raise ValueError(f"block index {index} outside 1..{cfg.depth}")
    if trace is not None:
        trace.append(index)
    return LayerFeatures(index, transformer_block(x.tokens, w.blocks[index - 1], cfg.heads))


def forward_prefix(x0: LayerFeatures, cfg: ModelConfig, w: BackboneWeights, stop: int,
                   trace: list[int] | None = None) -> LayerFeatures:
    """Run blocks ``1..stop`` sequentially."""
    if x0.layer_index != 0:
        raise ValueError("forward passes start from the embedding output (layer_index 0)")
    x = x0
    for i in range(1, stop + 1):
        x = apply_block(x, i, cfg, w, trace)
    return x


def forward_all(x0: LayerFeatures, cfg: ModelConfig, w: BackboneWeights,
                trace: list[int] | None = None) -> list[LayerFeatures]:
    """Sequential pass through all blocks, returning ``[X^1, ..., X^L]``."""
    if x0.layer_index != 0:
        raise ValueError("forward passes start from the embedding output (layer_index 0)")
    out = []
    x = x0
    for i in range(1, cfg.depth + 1):
        x = apply_block(x, i, cfg, w, trace)
        out.append(x)
    return out


def forward_skip(x0: LayerFeatures, cfg: ModelConfig, w: BackboneWeights, k: int,
                 trace: list[int] | None = None) -> LayerFeatures:
    """Blocks ``1..l_star`` then block ``l_star + k`` applied directly to ``X^{l_star}``.

    Exactly ``l_star + 1`` blocks execute; pass a list as ``trace`` to
    record which.
    """
    if not 1 <= k <= cfg.k_choices:
        raise ValueError(f"k={k} outside 1..{cfg.k_choices}")
    sat = forward_prefix(x0, cfg, w, cfg.l_star, trace)
    return apply_block(sat, cfg.l_star + k, cfg, w, trace)


def direct_candidates(saturated: LayerFeatures, cfg: ModelConfig, w: BackboneWeights) -> list[LayerFeatures]:
    """``T^{l_star+k}(X^{l_star})`` for every ``k`` in ``1..K``."""
    if saturated.layer_index != cfg.l_star:
        raise ValueError(f"expected features of layer {cfg.l_star}, got {saturated.layer_index}")
    return [apply_block(saturated, cfg.l_star + k, cfg, w) for k in range(1, cfg.k_choices + 1)]


def block_param_count(cfg: ModelConfig) -> int:
    d, hidden = cfg.embed_dim, cfg.mlp_ratio * cfg.embed_dim
    return 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * hidden + hidden) + (hidden * d + d)


def param_count(cfg: ModelConfig) -> int:
    """Number of scalar parameters in the backbone (embedding + all blocks)."""
    d = cfg.embed_dim
    embed = 3 * cfg.patch ** 2 * d + d + cfg.n_tokens * d
    return embed + cfg.depth * block_param_count(cfg)


def block_flops(cfg: ModelConfig) -> int:
    n, d = cfg.n_tokens, cfg.embed_dim
    return 8 * n * d * d + 4 * n * n * d + 4 * cfg.mlp_ratio * n * d * d


def embed_flops(cfg: ModelConfig) -> int:
    return 2 * cfg.n_tokens * 3 * cfg.patch ** 2 * cfg.embed_dim


def selector_flops(cfg: ModelConfig) -> int:
    hid = cfg.selector_hidden
    return 2 * (hid * cfg.embed_dim + hid * hid + cfg.k_choices * hid)


def flop_estimate(cfg: ModelConfig, mode: str = "full") -> int:
    """Analytic FLOPs of one backbone forward (a multiply-accumulate counts as 2)."""
    if mode == "full":
        return embed_flops(cfg) + cfg.depth * block_flops(cfg)
    if mode == "skip":
        return embed_flops(cfg) + (cfg.l_star + 1) * block_flops(cfg) + selector_flops(cfg)
    raise ValueError(f"unknown mode {mode!r}")
