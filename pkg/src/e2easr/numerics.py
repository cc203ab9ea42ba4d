"""Dense float64 tensor helpers and a finite-difference gradient checker.

Tensors are plain ``torch.Tensor`` objects in float64; reverse-mode gradients
come from torch's recorded op graph. The functions here add the shape and
finiteness contracts the rest of the package relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch

Tensor = torch.Tensor
DTYPE = torch.float64

# Stand-in for log(0) in lattice recursions; keeps logsumexp free of NaN.
LOG_ZERO = -1.0e30


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def tensor(data, requires_grad: bool = False) -> Tensor:
    t = torch.as_tensor(np.asarray(data, dtype=np.float64), dtype=DTYPE).clone()
    t.requires_grad_(requires_grad)
    return t


def generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dim() < 1 or b.dim() < 1:
        raise ShapeError("matmul needs at least 1-d operands")
    inner_a = a.shape[-1]
    inner_b = b.shape[0] if b.dim() == 1 else b.shape[-2]
    if inner_a != inner_b:
        raise ShapeError(f"inner extents differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.dim() <= axis < max(x.dim(), 1):
        raise ShapeError(f"axis {axis} out of range for shape {tuple(x.shape)}")
    m = x.max(dim=axis, keepdim=True).values.detach()
    shifted = x - m
    return shifted - torch.log(torch.exp(shifted).sum(dim=axis, keepdim=True))


def log_sum_exp(values: Iterable[float]) -> float:
    """Stable ``log(sum(exp(v)))`` over a non-empty sequence of reals."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("log_sum_exp of an empty sequence")
    if len(vals) == 1:
        return vals[0]
    m = max(vals)
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.fsum(math.exp(v - m) for v in vals))


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return a + b


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return a * b


def tanh(x: Tensor) -> Tensor:
    return torch.tanh(x)


def sigmoid(x: Tensor) -> Tensor:
    return torch.sigmoid(x)


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def dropout(
    x: Tensor, p: float, train_mode: bool, rng: Optional[torch.Generator] = None
) -> Tensor:
    """Inverted dropout. Identity (the same object) when ``p == 0`` or in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0 or not train_mode:
        return x
    keep = torch.rand(x.shape, generator=rng, dtype=DTYPE) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    parameter_count: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def check_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
    max_coords_per_param: Optional[int] = None,
    seed: int = 0,
    abs_floor: float = 1e-5,
) -> GradCheckReport:
    """Compare back-propagated gradients with central finite differences.

    ``f`` is re-evaluated with each coordinate of each parameter nudged by
    ``+-epsilon``. Relative error per coordinate is
    ``|g - n| / max(|g|, |n|, abs_floor)``; the floor keeps round-off in the
    difference quotient (about 1e-10 here) from dominating near-zero
    gradients. When ``max_coords_per_param`` is set, a seeded random subset
    of coordinates is checked for each tensor.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = list(params)
    out = f()
    if out.numel() != 1:
        raise ShapeError("check_gradients needs a scalar-valued function")
    if not torch.isfinite(out).all():
        raise NonFiniteError("function value is not finite")
    analytic = torch.autograd.grad(out, params, allow_unused=True)

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    max_abs = 0.0
    count = 0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            gflat = g.reshape(-1)
            idx = np.arange(flat.numel())
            if max_coords_per_param is not None and flat.numel() > max_coords_per_param:
                idx = rng.choice(flat.numel(), size=max_coords_per_param, replace=False)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + epsilon
                fp = f().item()
                flat[i] = orig - epsilon
                fm = f().item()
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise NonFiniteError("function value is not finite at a perturbed point")
                numeric = (fp - fm) / (2.0 * epsilon)
                a = gflat[i].item()
                err = abs(a - numeric)
                rel = err / max(abs(a), abs(numeric), abs_floor)
                max_abs = max(max_abs, err)
                max_rel = max(max_rel, rel)
                count += 1
    return GradCheckReport(max_rel_error=max_rel, max_abs_error=max_abs, parameter_count=count)
