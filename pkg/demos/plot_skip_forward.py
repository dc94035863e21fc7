"""
Full versus skip forward
========================

Runs one input through the whole block stack and through the skip path
(the first ``l_star`` blocks followed by the single block the selector picks),
then compares block traces, analytic FLOPs and wall-clock time.
"""

# %%
# Build a seeded model at the default configuration.
import numpy as np

from skiptrack import ModelConfig, init_model
from skiptrack.backbone import flop_estimate
from skiptrack.bench import bench_inputs, forward_once, interleaved_throughput

cfg = ModelConfig()
model = init_model(cfg, seed=0)
Z, S = bench_inputs(cfg, seed=0)
print(f"{cfg.depth} blocks, l_star={cfg.l_star}, {cfg.n_tokens} tokens of width {cfg.embed_dim}")

# %%
# Block traces. The skip path runs ``l_star + 1`` blocks.
full_out, _, full_trace = forward_once(Z, S, model, "full")
skip_out, k, skip_trace = forward_once(Z, S, model, "skip")
print("full:", full_trace)
print(f"skip: {skip_trace}  (selector chose k={k})")

# %%
# Analytic cost. The embedding and final norm are shared, so the overall
# ratio sits a little above the block ratio of 9/12.
full_flops, skip_flops = flop_estimate(cfg, "full"), flop_estimate(cfg, "skip")
print(f"FLOPs full {full_flops:,}  skip {skip_flops:,}  ratio {skip_flops / full_flops:.4f}")

# %%
# The two outputs differ: with untrained weights nothing makes the skipped
# blocks redundant, so this only shows the paths really are different.
diff = np.abs(full_out.tokens - skip_out.tokens)
print(f"max |full - skip| = {diff.max():.3f}")

# %%
# Timing, single-threaded, with the two modes alternating.
fps = {}
for mode in ("full", "skip"):
    fps[mode] = interleaved_throughput({mode: model}, mode, iters=20, warmup=2, rounds=2)[mode]
print(f"full {fps['full']:.1f} fps, skip {fps['skip']:.1f} fps, speedup {fps['skip'] / fps['full']:.2f}x")
