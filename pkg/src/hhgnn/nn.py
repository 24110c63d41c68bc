"""Dense 2-D tensor primitives with hand-derived backward passes.

Tensors are plain numpy arrays. Every forward op scans its output and raises
``NonFinite`` on the first NaN/Inf. Backward functions take the upstream
gradient plus whatever the forward needed and return input gradients;
parameter gradients are accumulated into ``Param.grad``.

Use float64 for gradient checks and float32 for training; ops preserve the
dtype of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonFinite, ShapeMismatch
from .hypergraph import SparseMatrix

SIGMOID_CLAMP = 30.0


def check_finite(x: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFinite(f"{op} produced a non-finite value")
    return x


@dataclass(eq=False)
class Param:
    value: np.ndarray
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.value.ndim != 2:
            raise ShapeMismatch(f"parameters are 2-D, got shape {self.value.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ShapeMismatch("grad shape differs from value shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


def _require_2d(*xs: np.ndarray) -> None:
    for x in xs:
        if x.ndim != 2:
            raise ShapeMismatch(f"expected a 2-D tensor, got shape {x.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_2d(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def matmul_backward(dc: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return dc @ b.T, a.T @ dc


def sparse_dense_matmul(s: SparseMatrix, d: np.ndarray) -> np.ndarray:
    _require_2d(d)
    if s.cols != d.shape[0]:
        raise ShapeMismatch(f"sparse {s.shape} x dense {d.shape}")
    return check_finite(s.matmul(d), "sparse_dense_matmul")


def sparse_dense_matmul_backward(dout: np.ndarray, s: SparseMatrix) -> np.ndarray:
    """Gradient w.r.t. the dense operand: S^T @ dout."""
    return s.T.matmul(dout)


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    return check_finite(np.where(x >= 0, x, x * x.dtype.type(slope)), "leaky_relu")


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    # the kink at 0 takes the x >= 0 branch
    return np.where(x >= 0, dy, dy * dy.dtype.type(slope))


def dropout(
    x: np.ndarray, rate: float, training: bool, rng: Optional[np.random.Generator] = None
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout. Returns the output and the scaled mask (None when inactive)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return dy if mask is None else dy * mask


def sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.clip(x, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    return check_finite(1.0 / (1.0 + np.exp(-z)), "sigmoid")


def sigmoid_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    inside = np.abs(x) <= SIGMOID_CLAMP
    return dy * s * (1.0 - s) * inside


def linear(x: np.ndarray, w: Param, b: Param) -> np.ndarray:
    """x @ W + b with b stored as a (1, out) row."""
    _require_2d(x)
    if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
        raise ShapeMismatch(f"linear: x {x.shape}, W {w.shape}, b {b.shape}")
    return check_finite(x @ w.value + b.value, "linear")


def linear_backward(dy: np.ndarray, x: np.ndarray, w: Param, b: Param) -> np.ndarray:
    w.grad += x.T @ dy
    b.grad += dy.sum(axis=0, keepdims=True)
    return dy @ w.value.T


def gradcheck(
    loss_fn: Callable[[], float], params: Sequence[Param], eps: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must zero and then fill every ``Param.grad`` and return the
    scalar loss. The error per entry is |a - n| / max(1, |a|, |n|).
    """
    loss = loss_fn()
    if not np.isfinite(loss):
        raise NonFinite("loss is not finite at the base point")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFinite(f"loss not finite while perturbing entry {i}")
            num = (up - down) / (2.0 * eps)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
    loss_fn()  # leave grads consistent with the unperturbed point
    return float(worst)
