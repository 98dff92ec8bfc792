"""Image-domain optimizers: Adam and L-BFGS over raw pixel arrays.

Objectives are callbacks ``f(x) -> (value, grad)`` on arrays of any shape.
Both optimizers record the loss at every evaluation point and are fully
deterministic for a given starting point.  An optional ``project`` callback
clamps iterates back into a feasible box after each accepted step (used to
keep pixels inside the displayable range).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import OptimizationError

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


def init_image(
    mode: str,
    shape: Sequence[int],
    rng: np.random.Generator | int | None = None,
    sigma: float = 50.0,
    mean: float | Sequence[float] = 0.0,
    content: np.ndarray | None = None,
) -> np.ndarray:
    """Starting iterate: channel-wise Gaussian noise or a copy of the content.

    Noise is i.i.d. with per-channel mean ``mean`` (the preprocessing mean in
    the NST pipeline, where images live in mean-subtracted 0-255 units) and
    standard deviation ``sigma``.
    """
    if mode == "content":
        if content is None:
            raise ValueError("content init requires the content tensor")
        return np.array(content, dtype=np.float64, copy=True)
    if mode != "noise":
        raise ValueError(f"unknown init mode {mode!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    shape = tuple(int(s) for s in shape)
    mean_arr = np.broadcast_to(np.asarray(mean, dtype=np.float64), (shape[0],))
    noise = rng.standard_normal(shape) * sigma
    return noise + mean_arr.reshape(-1, *([1] * (len(shape) - 1)))


def run_adam(
    objective: Objective,
    init: np.ndarray,
    iters: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Bias-corrected Adam; returns the final iterate and the loss trace."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = np.array(init, dtype=np.float64, copy=True)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trace: list[float] = []
    for k in range(1, iters + 1):
        value, grad = objective(x)
        if not np.isfinite(value):
            raise OptimizationError(f"non-finite loss {value!r} at iteration {k - 1}")
        trace.append(float(value))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**k)
        v_hat = v / (1.0 - beta2**k)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
        if project is not None:
            x = project(x)
    final_value, _ = objective(x)
    trace.append(float(final_value))
    return x, trace


def _two_loop(grad, s_list, y_list):
    """L-BFGS two-loop recursion with H0 = (s'y / y'y) * I."""
    q = grad.copy()
    alphas = []
    rhos = [1.0 / float(np.vdot(y, s)) for s, y in zip(s_list, y_list)]
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rhos)):
        a = rho * float(np.vdot(s, q))
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        gamma = float(np.vdot(s, y)) / float(np.vdot(y, y))
        q *= gamma
    for (s, y, rho), a in zip(zip(s_list, y_list, rhos), reversed(alphas)):
        b = rho * float(np.vdot(y, q))
        q += (a - b) * s
    return -q


def run_lbfgs(
    objective: Objective,
    init: np.ndarray,
    iters: int,
    memory: int = 10,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    c1: float = 1e-4,
    max_ls: int = 20,
) -> tuple[np.ndarray, list[float]]:
    """Limited-memory BFGS with Armijo backtracking line search.

    Curvature pairs with s'y <= 1e-10 are discarded.  Three consecutive
    line-search failures terminate the run early, returning the best iterate
    seen so far.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if memory < 0:
        raise ValueError("memory must be >= 0")
    x = np.array(init, dtype=np.float64, copy=True)
    value, grad = objective(x)
    if not np.isfinite(value):
        raise OptimizationError(f"non-finite loss {value!r} at iteration 0")
    trace = [float(value)]
    best_x, best_value = x.copy(), value
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    failures = 0

    for k in range(iters):
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm < 1e-12:
            break
        if s_list:
            direction = _two_loop(grad, s_list, y_list)
        else:
            direction = -grad
        slope = float(np.vdot(grad, direction))
        if slope >= 0.0:  # not a descent direction: restart from steepest
            s_list.clear()
            y_list.clear()
            direction = -grad
            slope = float(np.vdot(grad, direction))

        if k == 0 and not s_list:
            g2 = float(np.linalg.norm(direction))
            step = min(1.0, 1.0 / g2) if g2 > 0 else 1.0
        else:
            step = 1.0

        accepted = False
        for _ in range(max_ls):
            x_new = x + step * direction
            if project is not None:
                x_new = project(x_new)
            v_new, g_new = objective(x_new)
            if np.isfinite(v_new) and v_new <= value + c1 * step * slope:
                accepted = True
                break
            step *= 0.5

        if not accepted:
            failures += 1
            s_list.clear()
            y_list.clear()
            if failures >= 3:
                break
            continue

        failures = 0
        s = x_new - x
        y = g_new - grad
        if memory > 0 and float(np.vdot(s, y)) > 1e-10:
            s_list.append(s)
            y_list.append(y)
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
        x, value, grad = x_new, v_new, g_new
        trace.append(float(value))
        if value < best_value:
            best_x, best_value = x.copy(), value

    if value <= best_value:
        return x, trace
    return best_x, trace
