"""Barriers, Jordan algebra and dual extraction for the nonnegative orthant and the second-order cone.

All functions are dimension generic. Barrier evaluations outside the cone
return an infinite value instead of raising, so callers can treat
infeasibility as an ordinary comparison.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from conefrac.core.errors import InfeasiblePointError


class ConeKind(str, Enum):
    """Supported cone factors."""

    NNO = "nno"
    SOC = "soc"


@dataclass(frozen=True)
class BarrierEval:
    """Barrier value with derivatives; ``value`` is +inf outside the cone."""

    value: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.value)

    @classmethod
    def infeasible(cls) -> "BarrierEval":
        return cls(value=math.inf)


@dataclass(frozen=True)
class ConeFactor:
    kind: ConeKind
    dim: int
    weight: float = 1.0


@dataclass(frozen=True)
class ConeProduct:
    """Ordered product of weighted cone factors."""

    factors: Tuple[ConeFactor, ...]

    def __post_init__(self) -> None:
        for f in self.factors:
            if f.dim < 1:
                raise ValueError(f"cone factor dimension must be positive, got {f.dim}")
            if f.weight <= 0:
                raise ValueError(f"cone factor weight must be positive, got {f.weight}")

    @classmethod
    def of(cls, *factors: Tuple[str, int]) -> "ConeProduct":
        """Shorthand: ``ConeProduct.of(("nno", 2), ("soc", 3))``."""
        return cls(tuple(ConeFactor(ConeKind(kind), dim) for kind, dim in factors))

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.factors)

    def blocks(self, v: np.ndarray) -> List[np.ndarray]:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"vector of length {v.shape} applied to cone of dimension {self.dim}")
        bounds = np.cumsum([0] + [f.dim for f in self.factors])
        return [v[bounds[k] : bounds[k + 1]] for k in range(len(self.factors))]

    def identity(self) -> np.ndarray:
        return np.concatenate([identity_element(f.dim, f.kind) for f in self.factors])

    def barrier(self, v: np.ndarray) -> BarrierEval:
        """Weighted sum of factor barriers with block-diagonal Hessian."""
        n = self.dim
        value, gradient, hessian = 0.0, np.zeros(n), np.zeros((n, n))
        offset = 0
        for f, block in zip(self.factors, self.blocks(v)):
            ev = phi_nno(block) if f.kind is ConeKind.NNO else phi_soc(block)
            if not ev.feasible:
                return BarrierEval.infeasible()
            sl = slice(offset, offset + f.dim)
            value += f.weight * ev.value
            gradient[sl] = f.weight * ev.gradient
            hessian[sl, sl] = f.weight * ev.hessian
            offset += f.dim
        return BarrierEval(value, gradient, hessian)


def identity_element(n: int, kind: ConeKind) -> np.ndarray:
    """All ones for the orthant, (1, 0, ..., 0) for the second-order cone."""
    if ConeKind(kind) is ConeKind.NNO:
        return np.ones(n)
    e = np.zeros(n)
    e[0] = 1.0
    return e


def phi_nno(v: np.ndarray) -> BarrierEval:
    """-sum(log v) with gradient -1/v and Hessian diag(1/v**2)."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0.0):
        return BarrierEval.infeasible()
    return BarrierEval(float(-np.sum(np.log(v))), -1.0 / v, np.diag(1.0 / v**2))


def phi_soc(x: np.ndarray) -> BarrierEval:
    """-1/2 log(x1**2 - |x(2:n)|**2) on the interior of the second-order cone."""
    x = np.asarray(x, dtype=float)
    rest = np.linalg.norm(x[1:])
    if x[0] <= rest:
        return BarrierEval.infeasible()
    d = (x[0] - rest) * (x[0] + rest)
    Jx = x.copy()
    Jx[1:] *= -1.0
    J = np.diag(np.where(np.arange(len(x)) == 0, 1.0, -1.0))
    hessian = -J / d + 2.0 * np.outer(Jx, Jx) / d**2
    return BarrierEval(float(-0.5 * np.log(d)), -Jx / d, hessian)


def soc_barrier_batch(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise phi_soc for an (m, n) stack.

    Returns:
        values (m,), gradients (m, n), Hessians (m, n, n) and the feasibility
        mask (m,). Infeasible rows carry +inf values and zero derivatives.
    """
    x = np.asarray(x, dtype=float)
    rest = np.linalg.norm(x[:, 1:], axis=1)
    feasible = x[:, 0] > rest
    d = np.where(feasible, (x[:, 0] - rest) * (x[:, 0] + rest), 1.0)
    Jx = x.copy()
    Jx[:, 1:] *= -1.0
    sign = np.where(np.arange(x.shape[1]) == 0, 1.0, -1.0)
    values = np.where(feasible, -0.5 * np.log(d), math.inf)
    gradients = np.where(feasible[:, None], -Jx / d[:, None], 0.0)
    hessians = -np.einsum("i,m->mi", sign, 1.0 / d)[:, :, None] * np.eye(x.shape[1])
    hessians = hessians + 2.0 * np.einsum("mi,mj->mij", Jx, Jx) / (d**2)[:, None, None]
    hessians = np.where(feasible[:, None, None], hessians, 0.0)
    return values, gradients, hessians, feasible


def jordan_product(x: np.ndarray, s: np.ndarray, kind: ConeKind) -> np.ndarray:
    """x o s: elementwise on the orthant; (x.s, x1 s_i + s1 x_i) on the second-order cone."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.shape != s.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {s.shape}")
    if ConeKind(kind) is ConeKind.NNO:
        return x * s
    out = np.empty_like(x)
    out[0] = x @ s
    out[1:] = x[0] * s[1:] + s[0] * x[1:]
    return out


def dual_from_primal(x: np.ndarray, mu: float, kind: ConeKind) -> np.ndarray:
    """Central dual point s = -mu grad(phi)(x), which satisfies x o s = mu e."""
    x = np.asarray(x, dtype=float)
    ev = phi_nno(x) if ConeKind(kind) is ConeKind.NNO else phi_soc(x)
    if not ev.feasible:
        raise InfeasiblePointError(f"point is not interior to the {ConeKind(kind).value} cone")
    return -mu * ev.gradient


def _slack(block: np.ndarray, kind: ConeKind) -> float:
    if kind is ConeKind.NNO:
        return float(block.min())
    return float(block[0] - np.linalg.norm(block[1:]))


def is_strictly_feasible(v: np.ndarray, product: ConeProduct, margin: float = 0.0) -> bool:
    """True iff every factor is strictly interior with slack >= margin * max(1, |block|_inf)."""
    for f, block in zip(product.factors, product.blocks(v)):
        slack = _slack(block, f.kind)
        scale = max(1.0, float(np.max(np.abs(block)))) if block.size else 1.0
        if not (slack > 0.0 and slack >= margin * scale):
            return False
    return True


def orthant(n: int) -> ConeProduct:
    return ConeProduct((ConeFactor(ConeKind.NNO, n),))


def soc_product(dims: Sequence[int]) -> ConeProduct:
    return ConeProduct(tuple(ConeFactor(ConeKind.SOC, n) for n in dims))
