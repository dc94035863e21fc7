"""Architecture hyperparameters and their JSON form."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError

POOLING_MODES = ("avg", "max", "avg_max")


@dataclass(frozen=True)
class GgcaConfig:
    groups: int = 4
    reduction: int = 8
    pooling: str = "avg_max"
    min_mid_channels: int = 4

    def __post_init__(self):
        if self.groups < 1 or self.reduction < 1 or self.min_mid_channels < 1:
            raise ConfigError("groups, reduction and min_mid_channels must be positive")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")

    def group_width(self, channels: int) -> int:
        if channels % self.groups:
            raise ConfigError(f"{channels} channels are not divisible into {self.groups} groups")
        return channels // self.groups

    def mid_width(self, channels: int) -> int:
        return max(self.min_mid_channels, self.group_width(channels) // self.reduction)


@dataclass(frozen=True)
class ModelConfig:
    """Backbone, selector, GGCA and head dimensions.

    ``l_star`` is 1-based: blocks ``1..l_star`` always run and one of the
    ``K = depth - l_star`` remaining blocks is applied afterwards.
    """

    depth: int = 12
    l_star: int = 8
    embed_dim: int = 192
    heads: int = 3
    patch: int = 16
    template_side: int = 128
    search_side: int = 256
    mlp_ratio: int = 4
    selector_hidden: int = 160
    head_channels: int = 32
    ggca: GgcaConfig = field(default_factory=GgcaConfig)

    def __post_init__(self):
        if isinstance(self.ggca, dict):
            object.__setattr__(self, "ggca", GgcaConfig(**self.ggca))
        if not 1 <= self.l_star < self.depth:
            raise ConfigError(f"need 1 <= l_star < depth, got l_star={self.l_star}, depth={self.depth}")
        if self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")
        for side in (self.template_side, self.search_side):
            if side <= 0 or side % self.patch:
                raise ConfigError(f"image side {side} is not a positive multiple of patch {self.patch}")
        if self.mlp_ratio < 1 or self.selector_hidden < 1 or self.head_channels < 1:
            raise ConfigError("mlp_ratio, selector_hidden and head_channels must be positive")
        if self.search_grid ** 2 != self.n_search:
            raise ConfigError("search token grid must be square")
        self.ggca.group_width(self.embed_dim)

    @property
    def n_template(self) -> int:
        return (self.template_side // self.patch) ** 2

    @property
    def n_search(self) -> int:
        return (self.search_side // self.patch) ** 2

    @property
    def n_tokens(self) -> int:
        return self.n_template + self.n_search

    @property
    def search_grid(self) -> int:
        return self.search_side // self.patch

    @property
    def template_grid(self) -> int:
        return self.template_side // self.patch

    @property
    def k_choices(self) -> int:
        return self.depth - self.l_star

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "ggca" in d and isinstance(d["ggca"], dict):
                d["ggca"] = GgcaConfig(**d["ggca"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path | None) -> "ModelConfig":
        if path is None:
            return cls()
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
