"""
Training the layer selector
===========================

The selector is a three-layer perceptron with hand-written backpropagation.
This script checks its gradients against finite differences and trains it on
a synthetic task whose labels are linearly separable.
"""

# %%
import numpy as np

from skiptrack.selector import (init_selector, random_gradcheck, selection_accuracy,
                                synthetic_selection_task, train_selector)

# %%
# Gradient check in double precision at a handful of random points.
check = random_gradcheck(seed=0, points=10)
print(f"max relative error {check.max_rel_error:.2e}")
for name, err in check.per_param.items():
    print(f"  {name}: {err:.2e}")

# %%
# Synthetic task: 16-d inputs, the label is the argmax of a fixed random
# linear map with 4 outputs.
train, held_out = synthetic_selection_task(seed=0)
mlp = init_selector(16, 4, np.random.default_rng(0))
print(f"accuracy before training {selection_accuracy(mlp, held_out):.3f}")

# %%
# Mini-batch descent on the mean absolute selection loss.
result = train_selector(train, mlp, lr=0.1, epochs=60, seed=0)
curve = result.loss_curve
for epoch in (0, 10, 20, 40, 60):
    print(f"epoch {epoch:3d}: loss {curve[epoch]:.4f}")
print(f"held-out accuracy {selection_accuracy(result.mlp, held_out):.3f}")
