"""Mini-batch gradient descent with heavy-ball momentum, and a gradient checker."""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["TrainingError", "Objective", "gradient_descent", "grad_check", "spsa"]

# objective(theta, batch_indices or None) -> (loss, gradient)
Objective = Callable[[np.ndarray, "np.ndarray | None"], "tuple[float, np.ndarray]"]


class TrainingError(RuntimeError):
    pass


def gradient_descent(
    objective: Objective,
    theta0: np.ndarray,
    *,
    n_samples: int,
    lr: float,
    epochs: int,
    momentum: float = 0.9,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Minimize ``objective``; returns final parameters and per-epoch mean loss.

    ``batch_size=None`` means full-batch steps (one per epoch).
    """
    theta = np.array(theta0, dtype=float)
    velocity = np.zeros_like(theta)
    rng = rng or np.random.default_rng(0)
    curve = []
    for _ in range(epochs):
        if batch_size is None or batch_size >= n_samples:
            batches = [None]
        else:
            order = rng.permutation(n_samples)
            batches = [order[i:i + batch_size] for i in range(0, n_samples, batch_size)]
        total = 0.0
        for idx in batches:
            loss, grad = objective(theta, idx)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingError("loss diverged (non-finite value)")
            velocity = momentum * velocity - lr * grad
            theta = theta + velocity
            total += loss * (n_samples if idx is None else len(idx))
        curve.append(total / n_samples)
    final, _ = objective(theta, None)
    if not np.isfinite(final):
        raise TrainingError("loss diverged (non-finite value)")
    return theta, curve


def grad_check(net, objective: Objective, step: float = 1e-5, theta=None) -> float:
    """Max coordinate-wise relative error between analytic and central-difference gradients.

    ``net`` is anything with ``get_params``; ``objective`` is evaluated on the
    full batch. The denominator is ``max(|a|, |b|, 1e-8)``.
    """
    theta = np.array(net.get_params() if theta is None else theta, dtype=float)
    if theta.size == 0:
        return 0.0
    _, analytic = objective(theta, None)
    worst = 0.0
    for j in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[j] += step
        minus[j] -= step
        numeric = (objective(plus, None)[0] - objective(minus, None)[0]) / (2 * step)
        a = analytic[j]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def spsa(
    loss: Callable[[np.ndarray], float],
    theta0: np.ndarray,
    *,
    iterations: int,
    a: float = 0.05,
    c: float = 0.05,
    alpha: float = 0.602,
    gamma: float = 0.101,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Simultaneous-perturbation descent for rollout losses without gradients.

    The gain is calibrated on the first gradient estimate so that ``a`` is
    the size of the first step in parameter units. Returns the best iterate
    seen and the best-so-far loss curve, starting with the loss at ``theta0``.
    """
    rng = rng or np.random.default_rng(0)
    theta = np.array(theta0, dtype=float)
    best, best_loss = theta.copy(), loss(theta)
    curve = [best_loss]
    gain = None
    for k in range(iterations):
        ck = c / (k + 1) ** gamma
        delta = rng.choice([-1.0, 1.0], size=theta.size)
        lp, lm = loss(theta + ck * delta), loss(theta - ck * delta)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise TrainingError("rollout loss is not finite")
        g = (lp - lm) / (2 * ck) * delta
        if gain is None:
            gain = a / max(float(np.max(np.abs(g))), 1e-12)
        theta = theta - gain / (k + 1) ** alpha * g
        current = loss(theta)
        if current < best_loss:
            best, best_loss = theta.copy(), current
        curve.append(best_loss)
    return best, curve
