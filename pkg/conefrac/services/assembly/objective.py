"""Composed barrier objectives of both solver phases and the optimal extension of s0 and t.

Every term is evaluated over the full displacement vector u. Phase II
restricts the result to the free DOFs x with u = R x + u_BC; Phase I keeps
all of u and appends the artificial variable t.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import brentq

from conefrac.core.errors import BracketError, DegenerateInterfaceError, InvertedElementError
from conefrac.core.logging import get_structlog_logger
from conefrac.services.assembly.bulk import BulkAssembler, EnergyEval, momentum_energy
from conefrac.services.assembly.interfaces import InterfaceAssembler
from conefrac.services.cone import soc_barrier_batch
from conefrac.services.material import CohesiveParams, cohesive_g, h_alpha, regularization_coefficient
from conefrac.services.mesh import BoundaryOperator, FracturedMesh, LinearInequalities

logger = get_structlog_logger(__name__)

# zeta = ZETA_SCALE * G_c * omega weights each interface barrier.
ZETA_SCALE = 1e4

_BISECTION_STEPS = 200


class Phase(str, Enum):
    """Solver phase an objective belongs to."""

    ONE = "phase_one"
    TWO = "phase_two"


@dataclass
class StepContext:
    """Everything an objective needs that is fixed for one time step."""

    fmesh: FracturedMesh
    bulk: BulkAssembler
    bc: BoundaryOperator
    contact: LinearInequalities
    f_ext: np.ndarray
    u_prev: np.ndarray
    v_prev: np.ndarray
    dt: float
    d: np.ndarray
    interfaces: Optional[InterfaceAssembler] = None
    cohesive: Optional[CohesiveParams] = None
    mass: Optional[sparse.csr_matrix] = None
    omega: np.ndarray = field(init=False)
    zeta: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.interfaces is not None and self.cohesive is not None and self.interfaces.n_i:
            self.omega = self.interfaces.omega.ravel()
            self.zeta = ZETA_SCALE * self.cohesive.G_c * self.omega
        else:
            self.interfaces = None
            self.omega = np.zeros(0)
            self.zeta = np.zeros(0)

    @property
    def n_u(self) -> int:
        return self.fmesh.n_dof

    @property
    def n_i(self) -> int:
        return len(self.omega)

    @property
    def quasistatic(self) -> bool:
        return self.mass is None


class _Hessian:
    """COO accumulator for a square sparse Hessian."""

    def __init__(self, n: int):
        self.n = n
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def add(self, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> None:
        self.rows.append(np.asarray(rows).ravel())
        self.cols.append(np.asarray(cols).ravel())
        self.vals.append(np.asarray(vals, dtype=float).ravel())

    def add_matrix(self, H: sparse.spmatrix, offset: int = 0) -> None:
        coo = H.tocoo()
        self.add(coo.row + offset, coo.col + offset, coo.data)

    def add_local(self, index: np.ndarray, blocks: np.ndarray) -> None:
        """Scatter (n, k, k) blocks at the (n, k) global indices."""
        k = index.shape[1]
        self.add(np.repeat(index, k, axis=1), np.tile(index, (1, k)), blocks)

    def tocsr(self) -> sparse.csr_matrix:
        if not self.vals:
            return sparse.csr_matrix((self.n, self.n))
        return sparse.csr_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.n, self.n),
        )


_INFEASIBLE = EnergyEval(math.inf)


class BarrierObjective:
    """f(xi) of Phase II, or f(xi_bar) of Phase I when ``big_m`` is given.

    Phase II variables are (x, s0); Phase I variables are (u, s0, t). Outside
    the barrier domain, or with an inverted element, the value is +inf.
    """

    def __init__(
        self,
        ctx: StepContext,
        mu: float,
        alpha: Optional[float] = None,
        phase: Phase = Phase.TWO,
        big_m: Optional[float] = None,
    ):
        if phase is Phase.ONE and big_m is None:
            raise ValueError("phase one needs big_m")
        self.ctx = ctx
        self.mu = mu
        self.phase = phase
        self.big_m = big_m
        if alpha is None:
            alpha = mu * math.sqrt(big_m) if phase is Phase.ONE else mu
        self.alpha = alpha
        self.n_u = ctx.n_u
        self.n_i = ctx.n_i
        if self.n_i:
            assert ctx.cohesive is not None
            self.reg = regularization_coefficient(ctx.d, alpha, ctx.omega, ctx.cohesive)
        else:
            self.reg = np.zeros(0)
        self._index = np.concatenate([ctx.bc.free, self.n_u + np.arange(self.n_i)])

    @property
    def n_z(self) -> int:
        """Length of the full-space vector (u, s0[, t])."""
        return self.n_u + self.n_i + (1 if self.phase is Phase.ONE else 0)

    @property
    def size(self) -> int:
        return self.n_z if self.phase is Phase.ONE else len(self._index)

    def split(self, xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        """(u, s0, t) of a solver vector; t is 0 in Phase II."""
        xi = np.asarray(xi, dtype=float)
        if self.phase is Phase.ONE:
            return xi[: self.n_u], xi[self.n_u : self.n_u + self.n_i], float(xi[-1])
        n_x = self.ctx.bc.n_x
        return self.ctx.bc.expand(xi[:n_x]), xi[n_x:], 0.0

    def pack(self, u: np.ndarray, s0: np.ndarray, t: float = 0.0) -> np.ndarray:
        if self.phase is Phase.ONE:
            return np.concatenate([u, s0, [t]])
        return np.concatenate([self.ctx.bc.project(u), s0])

    def evaluate(self, xi: np.ndarray, order: int = 2) -> EnergyEval:
        u, s0, t = self.split(xi)
        try:
            value, grad, hess = self._full(u, s0, t, order)
        except (InvertedElementError, DegenerateInterfaceError):
            return _INFEASIBLE
        if not math.isfinite(value):
            return _INFEASIBLE
        if self.phase is Phase.TWO:
            grad = grad[self._index] if grad is not None else None
            hess = hess[self._index][:, self._index] if hess is not None else None
        return EnergyEval(value, grad, hess)

    __call__ = evaluate

    def gradient_u(self, xi: np.ndarray) -> np.ndarray:
        """Gradient with respect to every displacement DOF; constrained entries are reactions."""
        u, s0, t = self.split(xi)
        _, grad, _ = self._full(u, s0, t, order=1)
        if grad is None:
            raise InvertedElementError(None, {"where": "reaction evaluation"})
        return grad[: self.n_u]

    def contact_forces(self, u: np.ndarray) -> np.ndarray:
        """Nodal forces mu E^T (1 / gap) the contact barrier exerts on the bodies."""
        contact = self.ctx.contact
        if not contact.n_li:
            return np.zeros(self.n_u)
        return self.mu * (contact.E_full.T @ (1.0 / contact.slack(u)))

    def _full(
        self, u: np.ndarray, s0: np.ndarray, t: float, order: int
    ) -> Tuple[float, Optional[np.ndarray], Optional[sparse.csr_matrix]]:
        ctx, mu, n_u = self.ctx, self.mu, self.n_u
        phase_one = self.phase is Phase.ONE
        t_index = self.n_z - 1
        grad = np.zeros(self.n_z) if order >= 1 else None
        hess = _Hessian(self.n_z) if order >= 2 else None

        if phase_one and t <= 0.0:
            return math.inf, None, None

        value = -float(ctx.f_ext @ u)
        if grad is not None:
            grad[:n_u] -= ctx.f_ext

        bulk = ctx.bulk.energy(u, order)
        value += bulk.value
        if grad is not None:
            grad[:n_u] += bulk.gradient
        if hess is not None:
            hess.add_matrix(bulk.hessian)

        if ctx.mass is not None:
            m0 = momentum_energy(u, ctx.u_prev, ctx.v_prev, ctx.dt, ctx.mass, order)
            value += m0.value
            if grad is not None:
                grad[:n_u] += m0.gradient
            if hess is not None:
                hess.add_matrix(m0.hessian)

        # Orthant rows linear in u: contact, and in Phase I the two-sided boundary rows.
        shift = t if phase_one else 0.0
        contact = ctx.contact
        rows = [(contact.E_full, contact.a_full)]
        if phase_one and len(ctx.bc.constrained):
            B, b = ctx.bc.B, ctx.bc.b
            rows += [(B, b), (-B, -b)]
        for E, a in rows:
            if not E.shape[0]:
                continue
            y = E @ u - a + shift
            if np.any(y <= 0.0):
                return math.inf, None, None
            value -= mu * float(np.sum(np.log(y)))
            if grad is not None:
                grad[:n_u] -= mu * (E.T @ (1.0 / y))
                if phase_one:
                    grad[t_index] -= mu * float(np.sum(1.0 / y))
            if hess is not None:
                inv2 = mu / y**2
                hess.add_matrix(sparse.csr_matrix(E.T @ sparse.diags(inv2) @ E))
                if phase_one:
                    cross = np.asarray(E.T @ inv2).ravel()
                    nz = np.flatnonzero(cross)
                    hess.add(nz, np.full(nz.size, t_index), cross[nz])
                    hess.add(np.full(nz.size, t_index), nz, cross[nz])
                    hess.add([t_index], [t_index], [float(np.sum(inv2))])

        if self.n_i:
            value_i = self._interfaces(u, s0, shift, order, grad, hess)
            if not math.isfinite(value_i):
                return math.inf, None, None
            value += value_i

        if phase_one:
            assert self.big_m is not None
            value += self.big_m * t - mu * math.log(t)
            if grad is not None:
                grad[t_index] += self.big_m - mu / t
            if hess is not None:
                hess.add([t_index], [t_index], [mu / t**2])

        return value, grad, hess.tocsr() if hess is not None else None

    def _interfaces(
        self,
        u: np.ndarray,
        s0: np.ndarray,
        shift: float,
        order: int,
        grad: Optional[np.ndarray],
        hess: Optional[_Hessian],
    ) -> float:
        ctx, n_u, n_i = self.ctx, self.n_u, self.n_i
        assert ctx.interfaces is not None and ctx.cohesive is not None
        phase_one = self.phase is Phase.ONE

        op = ctx.interfaces.openings(u, order)
        s = op.s.reshape(n_i, 2)
        cone_args = np.column_stack([s0, s])
        soc_val, soc_grad, soc_hess, feasible = soc_barrier_batch(cone_args)
        normal = s[:, 0] + shift
        if not feasible.all() or np.any(normal <= 0.0):
            return math.inf

        weight = self.mu * ctx.zeta
        reg = h_alpha(s0, ctx.d, self.alpha, ctx.omega, ctx.cohesive)
        value = reg.value + float(np.sum(weight * (soc_val - np.log(normal))))
        if grad is None:
            return value

        Ds = op.gradient.reshape(n_i, 2, 12)
        dofs = ctx.interfaces.point_dofs
        inv = 1.0 / normal
        g_local = np.einsum("nk,nka->na", soc_grad[:, 1:], Ds) - inv[:, None] * Ds[:, 0]
        np.add.at(grad, dofs, weight[:, None] * g_local)
        grad[n_u : n_u + n_i] += reg.gradient + weight * soc_grad[:, 0]
        if phase_one:
            grad[-1] -= float(np.sum(weight * inv))
        if hess is None:
            return value

        Hs = op.hessian.reshape(n_i, 2, 12, 12)
        h_uu = (
            np.einsum("nkl,nka,nlb->nab", soc_hess[:, 1:, 1:], Ds, Ds)
            + np.einsum("nk,nkab->nab", soc_grad[:, 1:], Hs)
            + (inv**2)[:, None, None] * np.einsum("na,nb->nab", Ds[:, 0], Ds[:, 0])
            - inv[:, None, None] * Hs[:, 0]
        )
        h_us = np.einsum("nk,nka->na", soc_hess[:, 1:, 0], Ds)

        size = 14 if phase_one else 13
        local = np.zeros((n_i, size, size))
        local[:, :12, :12] = h_uu
        local[:, :12, 12] = h_us
        local[:, 12, :12] = h_us
        local[:, 12, 12] = soc_hess[:, 0, 0]
        index = np.empty((n_i, size), dtype=np.int64)
        index[:, :12] = dofs
        index[:, 12] = n_u + np.arange(n_i)
        if phase_one:
            h_ut = (inv**2)[:, None] * Ds[:, 0]
            local[:, :12, 13] = h_ut
            local[:, 13, :12] = h_ut
            local[:, 13, 13] = inv**2
            index[:, 13] = self.n_z - 1
        hess.add_local(index, weight[:, None, None] * local)
        diag = n_u + np.arange(n_i)
        hess.add(diag, diag, reg.hessian)
        return value

    def extend(self, xi: np.ndarray) -> np.ndarray:
        """xi with s0 (and t in Phase I) replaced by their optimal values for fixed u.

        Raises:
            BracketError: the univariate search for t fails to bracket its root.
        """
        u, s0, t = self.split(xi)
        ctx = self.ctx
        if self.n_i:
            assert ctx.interfaces is not None and ctx.cohesive is not None
            s = ctx.interfaces.openings(u, order=0).s.reshape(self.n_i, 2)
            rho = np.hypot(s[:, 0], s[:, 1])
            s0 = optimal_s0(rho, ctx.d, ctx.omega, self.reg, self.mu * ctx.zeta, ctx.cohesive)
        else:
            s = np.zeros((0, 2))
        if self.phase is Phase.ONE:
            assert self.big_m is not None
            args = [ctx.contact.slack(u)]
            weights = [np.ones(ctx.contact.n_li)]
            if len(ctx.bc.constrained):
                y = u[ctx.bc.constrained] - ctx.bc.b
                args += [y, -y]
                weights += [np.ones(len(y)), np.ones(len(y))]
            args.append(s[:, 0])
            weights.append(ctx.zeta)
            t = optimal_t(np.concatenate(args), np.concatenate(weights), self.big_m, self.mu)
        return self.pack(u, s0, t)


def _bisect(fun: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vectorized bisection for fun(lo) < 0 <= fun(hi); fun(lo) is never evaluated."""
    lo, hi = lo.copy(), hi.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(_BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            negative = fun(mid) < 0.0
            lo = np.where(negative, mid, lo)
            hi = np.where(negative, hi, mid)
            if np.all(hi - lo <= 4.0 * np.finfo(float).eps * np.abs(hi)):
                break
    return 0.5 * (lo + hi)


def optimal_s0(
    rho: np.ndarray,
    d: np.ndarray,
    omega: np.ndarray,
    c: np.ndarray,
    weight: np.ndarray,
    params: CohesiveParams,
) -> np.ndarray:
    """Minimize omega g(s; d) + c s^2 - weight/2 log(s^2 - rho^2) over s > rho, pointwise.

    The barrier makes the function convex on (rho, d] and on [delta_u, inf);
    on [d, delta_u] its second derivative decreases, so the derivative rises
    to a single peak and the first sign change is the only local minimum.
    The lowest of the per-interval candidates wins.
    """
    rho = np.asarray(rho, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), rho.shape)
    du, q = params.delta_u, params.q
    slope = params.l(d)

    def gap(s: np.ndarray) -> np.ndarray:
        return (s - rho) * (s + rho)

    def psi(s: np.ndarray) -> np.ndarray:
        g, _, _ = cohesive_g(s, d, params)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = omega * g + c * s**2 - 0.5 * weight * np.log(gap(s))
        return np.where(s > rho, out, np.inf)

    def dpsi(s: np.ndarray) -> np.ndarray:
        _, g1, _ = cohesive_g(s, d, params)
        return omega * g1 + 2.0 * c * s - weight * s / gap(s)

    def softening_curvature(s: np.ndarray) -> np.ndarray:
        return -(omega * 2.0 * q + 2.0 * c + weight * (s**2 + rho**2) / gap(s) ** 2)

    def ddpsi(s: np.ndarray) -> np.ndarray:
        _, _, g2 = cohesive_g(s, d, params)
        return omega * g2 + 2.0 * c + weight * (s**2 + rho**2) / gap(s) ** 2

    candidates = []
    with np.errstate(divide="ignore", invalid="ignore"):
        # (rho, d]: the linear branch.
        b1 = np.maximum(d, rho)
        has1 = d > rho
        root1 = _bisect(lambda s: omega * slope + 2.0 * c * s - weight * s / gap(s), rho.copy(), b1)
        candidates.append(np.where(has1, np.where(dpsi(b1) <= 0.0, b1, root1), np.nan))

        # [max(d, rho), max(delta_u, rho)]: the softening branch.
        a2 = np.maximum(d, rho)
        b2 = np.maximum(du, rho)
        has2 = b2 > a2
        open_left = a2 <= rho
        peak = np.where(
            ddpsi(b2) >= 0.0,
            b2,
            np.where(~open_left & (ddpsi(a2) <= 0.0), a2, _bisect(softening_curvature, a2, b2)),
        )
        rising = _bisect(
            lambda s: omega * (slope + 2.0 * q * (s - d)) + 2.0 * c * s - weight * s / gap(s), a2, peak
        )
        left_positive = ~open_left & (dpsi(a2) >= 0.0)
        first = np.where(left_positive, a2, np.where(dpsi(peak) <= 0.0, b2, rising))
        candidates.append(np.where(has2, first, np.nan))
        candidates.append(np.where(has2, b2, np.nan))

        # [max(delta_u, rho), inf): g is flat, the stationary point is explicit.
        a3 = np.maximum(du, rho)
        stationary = np.sqrt(rho**2 + weight / (2.0 * c))
        candidates.append(np.maximum(stationary, a3))

    stack = np.stack(candidates)
    values = np.where(np.isnan(stack), np.inf, psi(np.nan_to_num(stack, nan=0.0)))
    best = np.argmin(values, axis=0)
    s0 = stack[best, np.arange(len(rho))]
    if not np.all(np.isfinite(values[best, np.arange(len(rho))])):
        raise BracketError("no finite s0 candidate", {"points": int(np.sum(~np.isfinite(s0)))})
    return s0


def optimal_t(args: np.ndarray, weights: np.ndarray, big_m: float, mu: float) -> float:
    """Minimize M t - mu log t - mu sum w_j log(a_j + t) over the feasible t.

    The derivative M - mu (1/t + sum w_j / (a_j + t)) increases from -inf at
    the lower bound max(0, -min a) to M, and is nonnegative at
    lower + mu (1 + sum w) / M.
    """
    args = np.asarray(args, dtype=float)
    weights = np.asarray(weights, dtype=float)
    lower = max(0.0, -float(args.min())) if args.size else 0.0
    total = 1.0 + float(weights.sum())

    def slope(t: float) -> float:
        return big_m - mu * (1.0 / t + float(np.sum(weights / (args + t))))

    hi = lower + mu * total / big_m
    for _ in range(60):
        if slope(hi) >= 0.0:
            break
        hi = lower + 2.0 * (hi - lower)
    else:
        raise BracketError("cannot bracket the Phase I variable from above", {"lower": lower})

    lo = lower + 0.5 * (hi - lower)
    for _ in range(1100):
        if lo > lower and slope(lo) < 0.0:
            break
        lo = lower + 0.5 * (lo - lower)
    else:
        raise BracketError("cannot bracket the Phase I variable from below", {"lower": lower})
    if slope(hi) == 0.0:
        return hi
    return float(brentq(slope, lo, hi, xtol=1e-15 * max(1.0, hi), rtol=4 * np.finfo(float).eps))
