"""Bundle of every parameter the tracker needs, with flat name mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneWeights, backbone_shapes, init_backbone
from .config import ModelConfig
from .errors import ShapeError
from .ggca import GgcaWeights, ggca_shapes, init_ggca
from .head import HeadWeights, head_shapes, init_head
from .selector import SelectorMlp, init_selector, selector_shapes


@dataclass
class Model:
    cfg: ModelConfig
    backbone: BackboneWeights
    ggca: GgcaWeights
    selector: SelectorMlp
    head: HeadWeights

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.backbone.named())
        out.update(self.ggca.named())
        out.update(self.selector.named())
        out.update(self.head.named())
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray], cfg: ModelConfig) -> "Model":
        expected = required_shapes(cfg)
        missing = sorted(set(expected) - set(tensors))
        if missing:
            raise ShapeError(f"weight set lacks {len(missing)} tensors, e.g. {missing[:3]}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {tensors[name].shape}")
        return cls(
            cfg=cfg,
            backbone=BackboneWeights.from_named(tensors, cfg),
            ggca=GgcaWeights.from_named(tensors),
            selector=SelectorMlp.from_named(tensors),
            head=HeadWeights.from_named(tensors),
        )


def required_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = backbone_shapes(cfg)
    shapes.update(ggca_shapes(cfg.embed_dim, cfg.ggca))
    shapes.update(selector_shapes(cfg.embed_dim, cfg.k_choices, cfg.selector_hidden))
    shapes.update(head_shapes(cfg.embed_dim, cfg.head_channels))
    return shapes


def init_model(cfg: ModelConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    return Model(
        cfg=cfg,
        backbone=init_backbone(cfg, rng),
        ggca=init_ggca(cfg.embed_dim, cfg.ggca, rng),
        selector=init_selector(cfg.embed_dim, cfg.k_choices, rng, cfg.selector_hidden),
        head=init_head(cfg.embed_dim, cfg.head_channels, rng),
    )
