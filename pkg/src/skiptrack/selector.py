"""Similarity-guided selection of the one deep block to run after ``l_star``.

Contents: the inter-layer cosine objective and its one-hot labels, the
3-layer selector MLP, the mean-absolute-error selection loss, hand-derived
backprop for that loss, a finite-difference checker, and a plain
gradient-descent trainer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import LayerFeatures
from .errors import DegenerateInputError, ShapeError
from .tensor import DTYPE, relu, sigmoid

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")
PRESET_LR_FULL_SCALE = 4e-5


@dataclass
class SelectorMlp:
    w1: np.ndarray  # hidden x D
    b1: np.ndarray
    w2: np.ndarray  # hidden x hidden
    b2: np.ndarray
    w3: np.ndarray  # K x hidden
    b3: np.ndarray

    @property
    def k_choices(self) -> int:
        return self.w3.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self, dtype=None) -> "SelectorMlp":
        return SelectorMlp(**{n: np.array(p, dtype=dtype or p.dtype) for n, p in self.params().items()})

    def named(self, prefix: str = "selector") -> dict[str, np.ndarray]:
        return {f"{prefix}/{n}": p for n, p in self.params().items()}

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray], prefix: str = "selector") -> "SelectorMlp":
        return cls(**{n: tensors[f"{prefix}/{n}"] for n in PARAM_NAMES})

    @classmethod
    def zeros(cls, in_dim: int, k: int, hidden: int = 160) -> "SelectorMlp":
        z = lambda *s: np.zeros(s, DTYPE)  # noqa: E731
        return cls(z(hidden, in_dim), z(hidden), z(hidden, hidden), z(hidden), z(k, hidden), z(k))


def selector_shapes(in_dim: int, k: int, hidden: int = 160, prefix: str = "selector"):
    return {
        f"{prefix}/w1": (hidden, in_dim), f"{prefix}/b1": (hidden,),
        f"{prefix}/w2": (hidden, hidden), f"{prefix}/b2": (hidden,),
        f"{prefix}/w3": (k, hidden), f"{prefix}/b3": (k,),
    }


HIDDEN_GAIN = 0.5
OUTPUT_GAIN = 10.0


def init_selector(in_dim: int, k: int, rng: np.random.Generator, hidden: int = 160,
                  hidden_gain: float = HIDDEN_GAIN, output_gain: float = OUTPUT_GAIN) -> SelectorMlp:
    """Uniform(-g/sqrt(fan_in), g/sqrt(fan_in)) weights and zero biases.

    The output layer gets a large gain. With a small one, the mean-absolute
    loss on sigmoid outputs first drives every logit negative (three of four
    targets are 0) and the sigmoid saturates before the hidden layers learn
    anything discriminative.
    """
    def u(rows, cols, gain):
        s = gain / np.sqrt(cols)
        return rng.uniform(-s, s, size=(rows, cols)).astype(DTYPE)
    mlp = SelectorMlp.zeros(in_dim, k, hidden)
    mlp.w1 = u(hidden, in_dim, hidden_gain)
    mlp.w2 = u(hidden, hidden, hidden_gain)
    mlp.w3 = u(k, hidden, output_gain)
    return mlp


@dataclass
class SelectionDecision:
    probabilities: np.ndarray
    chosen_k: int  # 1-based
    tie_broken: bool


@dataclass
class LabelVector:
    y: np.ndarray
    tie_broken: bool = False
    cosines: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return int(np.argmax(self.y)) + 1


def _argmax_first(v: np.ndarray) -> tuple[int, bool]:
    i = int(np.argmax(v))
    return i, bool(np.count_nonzero(v == v[i]) > 1)


# cosine objective and labels -------------------------------------------------

def layer_cosine(xa: LayerFeatures | np.ndarray, xb: LayerFeatures | np.ndarray, mode: str = "flatten") -> float:
    """Cosine similarity of two token matrices.

    ``flatten`` treats each N x D matrix as one vector; ``per_token_mean``
    averages the row-wise cosines.
    """
    a = np.asarray(getattr(xa, "tokens", xa), dtype=np.float64)
    b = np.asarray(getattr(xb, "tokens", xb), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"feature shapes differ: {a.shape} vs {b.shape}")
    if mode == "flatten":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            raise DegenerateInputError("cosine of an all-zero feature matrix is undefined")
        return float(np.clip(np.vdot(a, b) / (na * nb), -1.0, 1.0))
    if mode == "per_token_mean":
        na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
        if np.any(na == 0) or np.any(nb == 0):
            raise DegenerateInputError("a token has zero norm")
        return float(np.clip(np.mean(np.sum(a * b, axis=-1) / (na * nb)), -1.0, 1.0))
    raise ValueError(f"unknown cosine mode {mode!r}")


def similarity_labels(features: list[LayerFeatures], l_star: int, depth: int,
                      mode: str = "direct", cosine: str = "flatten") -> LabelVector:
    """One-hot label on the candidate most cosine-similar to ``X^{l_star}``.

    ``features`` must contain the reference (layer_index ``l_star``) and one
    candidate per layer ``l_star+1..depth``. In ``sequential`` mode the
    candidates are the ordinary forward-pass outputs; in ``direct`` mode they
    are each deep block applied straight to ``X^{l_star}`` (see
    :func:`skiptrack.backbone.direct_candidates`). Ties go to the smallest k.
    """
    if mode not in ("direct", "sequential"):
        raise ValueError(f"unknown label mode {mode!r}")
    by_index = {f.layer_index: f for f in features}
    missing = [i for i in range(l_star, depth + 1) if i not in by_index]
    if missing:
        raise ValueError(f"features for layers {missing} are missing")
    ref = by_index[l_star]
    cos = np.array([layer_cosine(ref, by_index[l_star + k], cosine) for k in range(1, depth - l_star + 1)])
    i, tie = _argmax_first(cos)
    y = np.zeros(len(cos), dtype=DTYPE)
    y[i] = 1
    return LabelVector(y, tie, cos)


# selector forward / loss ------------------------------------------------------

def _forward(z: np.ndarray, mlp: SelectorMlp):
    """Return intermediates (u1, h1, u2, h2, logits, probs); ``z`` may be a batch (B x D)."""
    u1 = z @ mlp.w1.T + mlp.b1
    h1 = relu(u1)
    u2 = h1 @ mlp.w2.T + mlp.b2
    h2 = relu(u2)
    logits = h2 @ mlp.w3.T + mlp.b3
    return u1, h1, u2, h2, logits, sigmoid(logits)


def selector_logits(z: np.ndarray, mlp: SelectorMlp) -> np.ndarray:
    return _forward(z, mlp)[4]


def selector_probs(z: np.ndarray, mlp: SelectorMlp) -> np.ndarray:
    return _forward(z, mlp)[5]


def decide(logits: np.ndarray) -> SelectionDecision:
    # sigmoid is monotone, so the argmax is taken on the logits where float32
    # saturation cannot manufacture ties
    i, tie = _argmax_first(logits)
    return SelectionDecision(sigmoid(logits), i + 1, tie)


def select_layer(z: np.ndarray, mlp: SelectorMlp) -> SelectionDecision:
    """Selection probabilities for the first-token embedding ``z`` and the chosen k."""
    if z.shape != (mlp.in_dim,):
        raise ShapeError(f"z must have shape ({mlp.in_dim},), got {z.shape}")
    return decide(selector_logits(z, mlp))


def sim_loss(y_hat: np.ndarray, y: np.ndarray | LabelVector) -> float:
    """Mean absolute difference between predicted and target selection vectors."""
    y = getattr(y, "y", y)
    y_hat = np.asarray(y_hat)
    if y_hat.shape[-1] != np.shape(y)[-1]:
        raise ValueError(f"length mismatch: {y_hat.shape} vs {np.shape(y)}")
    return float(np.mean(np.abs(y_hat.astype(np.float64) - y)))


# backprop ---------------------------------------------------------------------

def mlp_gradients(z: np.ndarray, mlp: SelectorMlp, y: np.ndarray | LabelVector) -> dict[str, np.ndarray]:
    """Gradients of the mean selection loss with respect to every MLP parameter.

    ``z``/``y`` may be single samples or batches (B x D / B x K); for a
    batch the loss is averaged over samples. The derivative of ``|u|`` is
    taken as ``sign(u)`` (0 at 0), and ReLU'(0) is 0.
    """
    y = np.asarray(getattr(y, "y", y), dtype=mlp.w1.dtype)
    single = z.ndim == 1
    Z = z[None, :] if single else z
    Y = y[None, :] if single else y
    bsz, k = Y.shape
    u1, h1, u2, h2, _, p = _forward(Z, mlp)

    d_logits = np.sign(p - Y) * p * (1 - p) / (k * bsz)
    g = {"w3": d_logits.T @ h2, "b3": d_logits.sum(axis=0)}
    d_u2 = (d_logits @ mlp.w3) * (u2 > 0)
    g["w2"], g["b2"] = d_u2.T @ h1, d_u2.sum(axis=0)
    d_u1 = (d_u2 @ mlp.w2) * (u1 > 0)
    g["w1"], g["b1"] = d_u1.T @ Z, d_u1.sum(axis=0)
    return {n: g[n].astype(mlp.w1.dtype, copy=False) for n in PARAM_NAMES}


# finite-difference check ------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float]
    checked: int
    skipped_nonsmooth: int


def _loss_and_flags(logits: np.ndarray, y: np.ndarray):
    p = sigmoid(logits)
    return np.mean(np.abs(p - y), axis=-1), p > y


def _perturbed_losses(z, mlp, y, name, delta):
    """Loss for each single-entry perturbation of parameter ``name`` by ``delta``.

    Every perturbed copy is evaluated in one vectorized pass that resumes
    the forward computation at the first affected pre-activation. Returns
    ``(losses, kink_crossed)`` flattened in the parameter's C order, where
    ``kink_crossed`` flags perturbations that flip any ReLU or the sign of
    ``p - y``.
    """
    u1, h1, u2, h2, logits, p = _forward(z, mlp)
    base_flags = p > y
    layer = name[1]
    w = getattr(mlp, "w" + layer)
    rows, cols = w.shape
    if name[0] == "w":
        idx = np.arange(rows * cols)
        unit, src = idx // cols, idx % cols
        inp = (z, h1, h2)[int(layer) - 1]
        shift = delta * inp[src]
    else:
        unit = np.arange(rows)
        shift = np.full(rows, delta)

    if layer == "3":
        Lg = np.repeat(logits[None, :], len(unit), axis=0)
        Lg[np.arange(len(unit)), unit] += shift
        loss, flags = _loss_and_flags(Lg, y)
        return loss, np.any(flags != base_flags, axis=1)
    if layer == "2":
        new_u = u2[unit] + shift
        dh = relu(new_u) - h2[unit]
        Lg = logits[None, :] + dh[:, None] * mlp.w3[:, unit].T
        loss, flags = _loss_and_flags(Lg, y)
        crossed = ((new_u > 0) != (u2[unit] > 0)) | np.any(flags != base_flags, axis=1)
        return loss, crossed
    new_u = u1[unit] + shift
    dh = relu(new_u) - h1[unit]
    U2 = u2[None, :] + dh[:, None] * mlp.w2[:, unit].T
    Lg = relu(U2) @ mlp.w3.T + mlp.b3
    loss, flags = _loss_and_flags(Lg, y)
    crossed = ((new_u > 0) != (u1[unit] > 0)) | np.any((U2 > 0) != (u2 > 0), axis=1) \
        | np.any(flags != base_flags, axis=1)
    return loss, crossed


def finite_difference_check(z: np.ndarray, mlp: SelectorMlp, y: np.ndarray, step: float = 1e-3) -> GradCheckResult:
    """Compare :func:`mlp_gradients` with central differences in float64.

    Entries whose +/- ``step`` perturbation crosses a ReLU or absolute-value
    kink are excluded, since the difference quotient is not a derivative
    there. The error per parameter is the norm-wise relative error
    ``|g - g_fd| / max(|g|, |g_fd|)`` over the remaining entries.
    """
    mlp64 = mlp.copy(np.float64)
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(getattr(y, "y", y), dtype=np.float64)
    analytic = mlp_gradients(z, mlp64, y)
    p = selector_probs(z, mlp64)

    per_param, checked, skipped = {}, 0, 0
    for name in PARAM_NAMES:
        lp, crossed_p = _perturbed_losses(z, mlp64, y, name, step)
        lm, crossed_m = _perturbed_losses(z, mlp64, y, name, -step)
        smooth = ~(crossed_p | crossed_m)
        # an exact tie p == y makes sign(0) = 0 the true subgradient, skip it too
        if np.any(p == y):
            smooth[:] = False
        numeric = (lp - lm) / (2 * step)
        a = analytic[name].ravel()[smooth]
        n = numeric[smooth]
        checked += int(smooth.sum())
        skipped += int((~smooth).sum())
        denom = max(np.linalg.norm(a), np.linalg.norm(n))
        per_param[name] = float(np.linalg.norm(a - n) / denom) if denom > 0 else 0.0
    return GradCheckResult(max(per_param.values()), per_param, checked, skipped)


def random_gradcheck(seed: int, points: int = 100, in_dim: int = 16, k: int = 4,
                     hidden: int = 160, step: float = 1e-3) -> GradCheckResult:
    """Run :func:`finite_difference_check` at ``points`` random (z, y, weights) draws."""
    rng = np.random.default_rng(seed)
    worst, per, checked, skipped = 0.0, {n: 0.0 for n in PARAM_NAMES}, 0, 0
    for _ in range(points):
        mlp = init_selector(in_dim, k, rng, hidden, hidden_gain=1.0, output_gain=1.0)
        mlp.b1 = rng.uniform(-0.1, 0.1, hidden).astype(DTYPE)
        mlp.b2 = rng.uniform(-0.1, 0.1, hidden).astype(DTYPE)
        mlp.b3 = rng.uniform(-0.5, 0.5, k).astype(DTYPE)
        z = rng.normal(size=in_dim)
        y = np.zeros(k)
        y[rng.integers(k)] = 1
        res = finite_difference_check(z, mlp, y, step)
        worst = max(worst, res.max_rel_error)
        per = {n: max(per[n], res.per_param[n]) for n in PARAM_NAMES}
        checked += res.checked
        skipped += res.skipped_nonsmooth
    return GradCheckResult(worst, per, checked, skipped)


# training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    mlp: SelectorMlp
    loss_curve: list[float]


def train_selector(dataset: list[tuple[np.ndarray, np.ndarray]], mlp: SelectorMlp, lr: float = 0.1,
                   epochs: int = 200, seed: int = 0, batch_size: int | None = 32) -> TrainResult:
    """Minibatch gradient descent on the mean selection loss.

    Samples are shuffled each epoch by a generator seeded with ``seed``;
    ``batch_size=None`` gives full-batch descent. The input ``mlp`` is left
    untouched. ``loss_curve[e]`` is the mean loss over the dataset at the
    start of epoch ``e``, with one extra entry for the final parameters.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    Z = np.stack([np.asarray(z, dtype=np.float64) for z, _ in dataset])
    Y = np.stack([np.asarray(getattr(y, "y", y), dtype=np.float64) for _, y in dataset])
    work = mlp.copy(np.float64)
    rng = np.random.default_rng(seed)
    n = len(Z)
    curve = []
    for _ in range(epochs):
        curve.append(sim_loss(selector_probs(Z, work), Y))
        if batch_size is None or batch_size >= n:
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
        for b in batches:
            grads = mlp_gradients(Z[b], work, Y[b])
            for name in PARAM_NAMES:
                getattr(work, name)[...] -= lr * grads[name]
    curve.append(sim_loss(selector_probs(Z, work), Y))
    return TrainResult(work.copy(mlp.w1.dtype), curve)


def synthetic_selection_task(seed: int, n_train: int = 2000, n_test: int = 500, in_dim: int = 16,
                             k: int = 4):
    """Linearly separable toy task: the label is ``argmax(A @ z)`` for a random ``A`` (k x in_dim).

    Returns ``(train, test)`` lists of ``(z, one-hot y)`` pairs.
    """
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(k, in_dim))
    Z = rng.normal(size=(n_train + n_test, in_dim))
    Y = np.eye(k)[np.argmax(Z @ A.T, axis=1)]
    pairs = list(zip(Z.astype(DTYPE), Y.astype(DTYPE)))
    return pairs[:n_train], pairs[n_train:]


def selection_accuracy(mlp: SelectorMlp, samples: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Fraction of samples whose argmax logit matches the label's argmax."""
    Z = np.stack([np.asarray(z) for z, _ in samples])
    Y = np.stack([np.asarray(getattr(y, "y", y)) for _, y in samples])
    return float(np.mean(np.argmax(selector_logits(Z, mlp), axis=1) == np.argmax(Y, axis=1)))
