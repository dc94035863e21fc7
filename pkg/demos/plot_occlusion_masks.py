"""
Occlusion masks for template images
===================================

Compares uniformly placed block masks with the clustered masks drawn from a
Cox process, then measures how much a frozen backbone's template tokens move
when the template is occluded.
"""

# %%
import numpy as np

from skiptrack import MaskConfig, ModelConfig, init_model, mask_statistics, orr_diagnostic
from skiptrack.masking import cox_intensity, generate_mask
from skiptrack.bench import bench_inputs


def show(grid):
    for row in grid:
        print("".join("#" if v else "." for v in row))


# %%
# One pattern of each kind on the 8x8 block grid of a 128px template.
for mode in ("uniform", "cox"):
    pattern = generate_mask(MaskConfig(mode=mode, mask_ratio=0.25, seed=3))
    print(f"{mode}: {pattern.realized_masked_count} of 64 blocks masked")
    show(pattern.grid)
    print()

# %%
# The Cox intensity is a bell centred on the template, scaled so that the
# expected masked count matches the requested ratio.
field = cox_intensity(8, 8, 0.25)
print(f"expected masked blocks {field.expected_masked:.2f}")
print(np.array2string(field.lam, precision=2, max_line_width=120))

# %%
# Empirical per-cell frequencies over many draws.
stats = mask_statistics(MaskConfig(mode="cox", seed=0), trials=2000)
print(f"mean {stats.mean_masked:.2f}, std {stats.std_masked:.2f}")
print(np.array2string(stats.per_cell_frequency, precision=2, max_line_width=120))

# %%
# Occlusion consistency of a frozen, untrained backbone: zero for an empty
# mask and growing with the masked fraction.
cfg = ModelConfig()
model = init_model(cfg, seed=0)
Z, S = bench_inputs(cfg, seed=1)
for ratio in (0.0, 0.25, 0.5):
    pattern = generate_mask(MaskConfig.for_template(cfg.template_side, mode="cox", mask_ratio=ratio, seed=1))
    loss = orr_diagnostic(Z, S, pattern, cfg, model.backbone, 16)
    print(f"ratio {ratio:.2f}: {pattern.realized_masked_count:2d} blocks, loss {loss:.4f}")
