"""Wall-clock comparison of the full block stack against the skip path."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .backbone import apply_block, flop_estimate, forward_prefix, patch_embed
from .config import ModelConfig
from .model import Model
from .selector import select_layer
from .tensor import DTYPE


@dataclass
class BenchReport:
    mode: str
    iterations: int
    warmup: int
    mean_us: float
    median_us: float
    p95_us: float
    flops: int
    throughput_fps: float
    config_fingerprint: str
    chosen_k: int | None

    def to_json(self) -> dict:
        return asdict(self)


def bench_inputs(cfg: ModelConfig, seed: int):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((3, cfg.template_side, cfg.template_side)).astype(DTYPE)
    S = rng.standard_normal((3, cfg.search_side, cfg.search_side)).astype(DTYPE)
    return Z, S


def forward_once(Z, S, model: Model, mode: str):
    """One backbone pass; returns ``(final features, chosen_k or None, executed block indices)``."""
    cfg, w = model.cfg, model.backbone
    trace: list[int] = []
    x0 = patch_embed(Z, S, cfg, w)
    if mode == "full":
        return forward_prefix(x0, cfg, w, cfg.depth, trace), None, trace
    if mode == "skip":
        sat = forward_prefix(x0, cfg, w, cfg.l_star, trace)
        k = select_layer(sat.tokens[0], model.selector).chosen_k
        return apply_block(sat, cfg.l_star + k, cfg, w, trace), k, trace
    raise ValueError(f"unknown mode {mode!r}")


def bench_forward(model: Model, mode: str = "skip", iters: int = 200, warmup: int = 10,
                  seed: int = 0, threads: int = 1) -> BenchReport:
    """Time ``iters`` forwards on a fixed seeded input after ``warmup`` untimed ones."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    cfg = model.cfg
    Z, S = bench_inputs(cfg, seed)
    samples = np.empty(iters)
    k = None
    with threadpool_limits(limits=threads):
        for _ in range(warmup):
            forward_once(Z, S, model, mode)
        for i in range(iters):
            t0 = time.perf_counter_ns()
            _, k, _ = forward_once(Z, S, model, mode)
            samples[i] = (time.perf_counter_ns() - t0) / 1e3
    mean = float(samples.mean())
    return BenchReport(
        mode=mode,
        iterations=iters,
        warmup=warmup,
        mean_us=mean,
        median_us=float(np.median(samples)),
        p95_us=float(np.percentile(samples, 95)),
        flops=flop_estimate(cfg, mode),
        throughput_fps=1e6 / mean,
        config_fingerprint=cfg.fingerprint(),
        chosen_k=k,
    )


def interleaved_throughput(models: dict, mode: str = "skip", iters: int = 200, warmup: int = 10,
                           rounds: int = 10, seed: int = 0, threads: int = 1) -> dict:
    """Frames per second for several models, timed in alternating rounds.

    Each round runs ``iters // rounds`` timed forwards per model, so slow drift
    in machine speed is shared by every model instead of biasing whichever
    happened to run last.
    """
    if rounds < 1 or iters < rounds:
        raise ValueError("need rounds >= 1 and iters >= rounds")
    per_round = iters // rounds
    inputs = {key: bench_inputs(m.cfg, seed) for key, m in models.items()}
    totals = {key: 0.0 for key in models}
    with threadpool_limits(limits=threads):
        for key, m in models.items():
            for _ in range(warmup):
                forward_once(*inputs[key], m, mode)
        for _ in range(rounds):
            for key, m in models.items():
                for _ in range(per_round):
                    t0 = time.perf_counter_ns()
                    forward_once(*inputs[key], m, mode)
                    totals[key] += (time.perf_counter_ns() - t0) / 1e3
    n = per_round * rounds
    return {key: 1e6 / (totals[key] / n) for key in models}
