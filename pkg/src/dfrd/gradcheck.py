"""Central finite-difference check of the analytic MLP gradients."""
from __future__ import annotations

import numpy as np

from .mlp import LabeledDataset, MlpConfig, MlpModel, init_mlp, loss_and_grad


def numeric_grad(model: MlpModel, batch: LabeledDataset, step: float = 1e-4) -> list:
    grads = []
    for p in model.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + step
            up, _ = loss_and_grad(model, batch)
            p[i] = orig - step
            down, _ = loss_and_grad(model, batch)
            p[i] = orig
            g[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a-b| / max(|a|, |b|, floor)."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _min_hidden_preactivation(model, x):
    h, smallest = x, np.inf
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = h @ w + b
        smallest = min(smallest, float(np.abs(z).min()))
        h = np.maximum(z, 0.0)
    return smallest


def random_problem(rng: np.random.Generator, max_dim: int = 8, max_classes: int = 5,
                   kink_margin: float = 1e-3):
    """Small random model and batch with no ReLU input within ``kink_margin`` of 0.

    Finite differences are meaningless across a kink, so such draws are redrawn.
    """
    while True:
        model, batch = _draw_problem(rng, max_dim, max_classes)
        if _min_hidden_preactivation(model, batch.x) > kink_margin:
            return model, batch


def _draw_problem(rng, max_dim, max_classes):
    in_dim = int(rng.integers(1, max_dim + 1))
    n_hidden = int(rng.integers(0, 3))
    hidden = tuple(int(h) for h in rng.integers(1, max_dim + 1, size=n_hidden))
    classes = int(rng.integers(2, max_classes + 1))
    model = init_mlp(MlpConfig(in_dim, classes, hidden), rng)
    for b in model.biases:
        b[...] = rng.normal(0, 0.1, size=b.shape)
    n = int(rng.integers(1, 7))
    batch = LabeledDataset(rng.normal(size=(n, in_dim)), rng.integers(0, classes, size=n))
    return model, batch


def check_random_models(count: int = 20, seed: int = 0, step: float = 1e-4) -> float:
    """Largest relative error between analytic and numeric gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        model, batch = random_problem(rng)
        _, analytic = loss_and_grad(model, batch)
        numeric = numeric_grad(model, batch, step)
        for a, n in zip(analytic, numeric):
            worst = max(worst, float(relative_error(a, n).max(initial=0.0)))
    return worst
