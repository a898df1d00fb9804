"""Dense-matrix building blocks with hand-derived backward passes.

Everything here operates on plain 2-D numpy arrays (row-major, one sample
per row). Parameters are stored in float32 by default; reductions that feed
diagnostics (loss sums, the finite-difference oracle) run in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError


def check_matrix(name: str, x: np.ndarray, cols: int | None = None) -> np.ndarray:
    """Validate that ``x`` is a finite 2-D array, optionally with ``cols`` columns."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D array, got shape {x.shape}")
    if cols is not None and x.shape[1] != cols:
        raise ShapeError(f"{name}: expected {cols} columns, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name}: contains NaN or Inf")
    return x


class LinearLayer:
    """Fully connected layer ``y = x @ weight.T + bias`` with gradient buffers.

    ``backward`` accumulates into ``grad_weight``/``grad_bias`` so several
    batches (or several call sites within one flow block) can contribute to
    one optimizer step; call ``zero_grad`` between steps.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator | None = None,
        zero_init: bool = False,
        dtype: np.dtype = np.float32,
    ):
        if in_dim < 1 or out_dim < 1:
            raise ShapeError(f"layer dims must be >= 1, got {in_dim}x{out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        if zero_init or rng is None:
            self.weight = np.zeros((out_dim, in_dim), dtype=dtype)
        else:
            # uniform +-sqrt(1/fan_in), the usual choice for small ReLU MLPs
            bound = math.sqrt(1.0 / in_dim)
            self.weight = rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype)
        self.bias = np.zeros(out_dim, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"linear forward: input shape {x.shape} incompatible with "
                f"weight [{self.out_dim}x{self.in_dim}]"
            )
        return x @ self.weight.T + self.bias

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients and return the gradient w.r.t. ``x``."""
        if grad_out.shape != (x.shape[0], self.out_dim) or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"linear backward: x {x.shape}, grad_out {grad_out.shape} "
                f"inconsistent with weight [{self.out_dim}x{self.in_dim}]"
            )
        self.grad_weight += grad_out.T @ x
        self.grad_bias += grad_out.sum(axis=0)
        return grad_out @ self.weight

    def zero_grad(self) -> None:
        self.grad_weight[...] = 0
        self.grad_bias[...] = 0

    def params(self, prefix: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
        return [
            (f"{prefix}.weight", self.weight, self.grad_weight),
            (f"{prefix}.bias", self.bias, self.grad_bias),
        ]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of relu at ``x``: pass-through where x > 0, zero elsewhere."""
    if np.shape(x) != np.shape(grad_out):
        raise ShapeError(f"relu backward: {np.shape(x)} vs {np.shape(grad_out)}")
    return np.where(x > 0, grad_out, 0)


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p, dtype=np.float32) for p in params],
            second_moment=[np.zeros_like(p, dtype=np.float32) for p in params],
            **kwargs,
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    names: Sequence[str] | None = None,
) -> Sequence[np.ndarray]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError(
            f"adam: {len(params)} params, {len(grads)} grads, "
            f"{len(state.first_moment)} moment blocks"
        )
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"adam: param {p.shape} vs grad {g.shape} at block {i}")
        if not np.all(np.isfinite(g)):
            block = names[i] if names is not None else f"param[{i}]"
            raise NonFiniteError(f"adam: non-finite gradient in block '{block}'")
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)
    return params


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic_grad: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between central differences of ``f`` and ``analytic_grad``.

    Evaluated coordinate by coordinate in float64:
    ``|(f(x+h e_i) - f(x-h e_i)) / 2h - g_i| / (|g_i| + h)``.
    """
    if h <= 0:
        raise ValueError(f"finite_diff_check: h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64).ravel().copy()
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if x.shape != g.shape:
        raise ShapeError(f"finite_diff_check: x {x.shape} vs grad {g.shape}")
    worst = 0.0
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        fp = float(f(x))
        x[i] = orig - h
        fm = float(f(x))
        x[i] = orig
        fd = (fp - fm) / (2.0 * h)
        worst = max(worst, abs(fd - g[i]) / (abs(g[i]) + h))
    return worst
