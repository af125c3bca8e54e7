"""Trust-region minimization in a scaled norm with a gradient ratio safeguard.

The subproblem min g^T p + p^T H p / 2 subject to |p|_N <= R is solved by
bracketed Newton iteration on q(lam) = 1/R - 1/|p(lam)|_N, with
p(lam) = -(H + lam N)^{-1} g. Positive definiteness is tested by attempting
a supernodal sparse Cholesky factorization; H and N stay sparse throughout.
"""

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from cvxopt import cholmod, matrix, spmatrix
from scipy import sparse
from scipy.sparse import linalg as splinalg

from conefrac.core.errors import NotPositiveDefiniteError, TrustRegionError
from conefrac.core.logging import get_structlog_logger
from conefrac.core.metrics import metrics
from conefrac.services.assembly.bulk import EnergyEval

logger = get_structlog_logger(__name__)

Matrix = Union[np.ndarray, sparse.spmatrix]
Objective = Callable[[np.ndarray, int], EnergyEval]

# Inverse iterations spent estimating the hard-case direction.
_INVERSE_ITERATIONS = 30
_MAX_SUBPROBLEM_ITERATIONS = 500
_SCALING_SHIFT = 1e-3
# Diagonal entries below this fraction of the largest one are lifted to it.
_WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class TRConfig:
    """Tolerances of the minimizer and its subproblem solver."""

    tol1: float = 1e-8
    tol2: float = 1e-8
    tol3: float = 1e-12
    tol4: float = 1e-2
    max_iterations: int = 200

    def __post_init__(self) -> None:
        for name in ("tol1", "tol2", "tol3", "tol4"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class MinimizeResult:
    """Final iterate, carried radius and iteration history."""

    xi: np.ndarray
    radius: float
    iterations: int
    values: List[float] = field(default_factory=list)
    rejections: Dict[str, int] = field(
        default_factory=lambda: {"infeasible": 0, "ratio": 0, "gradient_ratio": 0}
    )
    converged: bool = True


def _as_csr(A: Matrix) -> sparse.csr_matrix:
    return sparse.csr_matrix(A, dtype=float)


@contextmanager
def _supernodal() -> Iterator[None]:
    """Force CHOLMOD's supernodal LL^T mode, which rejects indefinite matrices."""
    saved = cholmod.options.copy()
    cholmod.options["supernodal"] = 2
    try:
        yield
    finally:
        cholmod.options = saved


@dataclass(frozen=True)
class _Factor:
    numeric: Any
    n: int

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        B = matrix(np.ascontiguousarray(rhs, dtype=float), (self.n, 1))
        cholmod.solve(self.numeric, B, sys=0)
        return np.array(B).ravel()


class _Pencil:
    """H + lam N stored on the union of both lower-triangular patterns.

    The symbolic analysis is shared by every lam. A factor is valid until the
    next call to ``factor``.
    """

    def __init__(self, H: sparse.spmatrix, N: sparse.spmatrix):
        n = H.shape[0]
        lower_h = sparse.tril(H, format="coo")
        lower_n = sparse.tril(N, format="coo")
        keys = np.concatenate(
            [
                lower_h.row.astype(np.int64) * n + lower_h.col,
                lower_n.row.astype(np.int64) * n + lower_n.col,
            ]
        )
        pattern, position = np.unique(keys, return_inverse=True)
        position = position.ravel()
        self.n = n
        self._h = np.bincount(position[: lower_h.nnz], weights=lower_h.data, minlength=pattern.size)
        self._n = np.bincount(position[lower_h.nnz :], weights=lower_n.data, minlength=pattern.size)
        self._rows = (pattern // n).tolist()
        self._cols = (pattern % n).tolist()
        self._symbolic: Any = None

    def factor(self, lam: float) -> Optional[_Factor]:
        """Cholesky factor of H + lam N, or None when it is not positive definite."""
        metrics.increment("subproblem_factorizations_total")
        values = self._h + lam * self._n
        if not np.all(np.isfinite(values)):
            return None
        A = spmatrix(values.tolist(), self._rows, self._cols, (self.n, self.n))
        with _supernodal():
            if self._symbolic is None:
                self._symbolic = cholmod.symbolic(A, uplo="L")
            try:
                cholmod.numeric(A, self._symbolic)
            except ArithmeticError:
                self._symbolic = None
                return None
        return _Factor(self._symbolic, self.n)


def is_positive_definite(A: Matrix) -> bool:
    """Whether A admits a Cholesky factorization."""
    A = _as_csr(A)
    if A.shape[0] == 0:
        return True
    return _Pencil(A, sparse.csr_matrix(A.shape)).factor(0.0) is not None


def _n_norm(p: np.ndarray, N: sparse.spmatrix) -> float:
    return math.sqrt(max(float(p @ (N @ p)), 0.0))


def jacobi_weights(H: Matrix) -> np.ndarray:
    """|diag H|, with entries below a tiny fraction of the largest lifted to that fraction."""
    d = np.abs(_as_csr(H).diagonal())
    top = float(d.max()) if d.size else 0.0
    if not math.isfinite(top) or top <= 0.0:
        return np.ones(d.size)
    return np.maximum(d, _WEIGHT_FLOOR * top)


def scaling_matrix(
    H_bar: Optional[Matrix], nu: float, n: int, weights: Optional[np.ndarray] = None
) -> sparse.csr_matrix:
    """N = H_bar + 1e-3 nu W, raising the shift until N factors.

    Args:
        H_bar: Preprocessed Hessian; None or a mismatched shape means zero.
        nu: 1-norm of the current Hessian, in the variables W scales to unit diagonal.
        n: Problem size.
        weights: Diagonal of W; the identity when omitted.
    """
    base: Optional[sparse.csr_matrix] = None
    if H_bar is not None:
        base = _as_csr(H_bar)
        if base.shape != (n, n):
            logger.warning("Preprocessed Hessian shape mismatch, ignoring", expected=n, got=list(base.shape))
            base = None
    W = sparse.diags(weights if weights is not None else np.ones(n), format="csr")
    shift = _SCALING_SHIFT * nu if nu > 0 else 1.0
    for _ in range(20):
        N = shift * W if base is None else (base + shift * W).tocsr()
        if is_positive_definite(N):
            return N
        logger.warning("Scaling matrix not positive definite, raising shift", shift=shift)
        shift *= 10.0
    raise NotPositiveDefiniteError("scaling matrix is not positive definite", {"shift": shift})


def start_metric(H: Matrix, H_bar: Optional[Matrix] = None) -> sparse.csr_matrix:
    """Scaling matrix of one minimization, built from the Hessian at its start.

    The identity shift is taken in Jacobi-scaled variables, so displacements,
    cone scalars and the Phase I variable t are measured in their own units:
    N = H_bar + 1e-3 nu D with D = |diag H| and nu the 1-norm of D^-1/2 H D^-1/2.
    Without a usable H_bar the start Hessian takes its place when the shifted
    matrix factors, and the shift alone is used otherwise.
    """
    H = _as_csr(H)
    n = H.shape[0]
    if n == 0:
        return sparse.csr_matrix((0, 0))
    weights = jacobi_weights(H)
    root = sparse.diags(1.0 / np.sqrt(weights))
    nu = float(splinalg.norm(root @ H @ root, 1))
    if H_bar is not None and H_bar.shape == (n, n):
        return scaling_matrix(H_bar, nu, n, weights)
    if H_bar is not None:
        logger.warning("Preprocessed Hessian shape mismatch, ignoring", expected=n, got=list(H_bar.shape))
    if nu > 0.0:
        shifted = (H + _SCALING_SHIFT * nu * sparse.diags(weights)).tocsr()
        if is_positive_definite(shifted):
            return shifted
    return scaling_matrix(None, nu, n, weights)


def q_and_derivative(lam: float, H: Matrix, N: Matrix, g: np.ndarray, R: float) -> Tuple[float, float]:
    """q(lam) = 1/R - 1/|p|_N and its derivative -|w|^2 / |p|_N^3 with |w|^2 = (Np)^T (H + lam N)^-1 Np.

    q decreases in lam on the interval where H + lam N is positive definite.

    Raises:
        NotPositiveDefiniteError: H + lam N does not factor.
    """
    H, N = _as_csr(H), _as_csr(N)
    factor = _Pencil(H, N).factor(lam)
    if factor is None:
        raise NotPositiveDefiniteError("H + lambda N is not positive definite", {"lambda": lam})
    p = factor.solve(-np.asarray(g, dtype=float))
    Np = N @ p
    norm = math.sqrt(max(float(p @ Np), 0.0))
    return 1.0 / R - 1.0 / norm, -float(Np @ factor.solve(Np)) / norm**3


def _hard_case(
    pencil: _Pencil, H: sparse.csr_matrix, N: sparse.csr_matrix, g: np.ndarray, R: float, lam: float
) -> Tuple[np.ndarray, float]:
    """Step at lam plus a multiple of the near-null direction of H + lam N that lands on the boundary."""
    factor = pencil.factor(lam)
    if factor is None:
        raise NotPositiveDefiniteError("hard case: H + lambda N is not positive definite", {"lambda": lam})
    metrics.increment("hard_case_total")
    p = factor.solve(-g)

    z = np.random.default_rng(0).standard_normal(len(g))
    for _ in range(_INVERSE_ITERATIONS):
        z = factor.solve(N @ z)
        z /= _n_norm(z, N)

    a = float(z @ (N @ z))
    b = 2.0 * float(p @ (N @ z))
    c = float(p @ (N @ p)) - R**2
    disc = math.sqrt(max(b * b - 4.0 * a * c, 0.0))
    roots = ((-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a))

    def model(step: np.ndarray) -> float:
        return float(g @ step + 0.5 * step @ (H @ step))

    step = min((p + tau * z for tau in roots), key=model)
    logger.debug("Trust-region hard case", lam=lam, radius=R)
    return step, lam


def compute_delta_xi(
    H: Matrix, N: Matrix, g: np.ndarray, R: float, cfg: TRConfig = TRConfig()
) -> Tuple[np.ndarray, float]:
    """Solve the trust-region subproblem in the N-norm.

    Returns:
        (step, lam) with either lam <= tol1 and |step|_N <= R, or
        |step|_N within R (1 +- tol4).

    Raises:
        NotPositiveDefiniteError: the hard-case factorization fails.
    """
    g = np.asarray(g, dtype=float)
    if not np.any(g):
        return np.zeros_like(g), 0.0
    H, N = _as_csr(H), _as_csr(N)
    pencil = _Pencil(H, N)

    lo, hi, lam = 0.0, math.inf, 0.0
    for _ in range(_MAX_SUBPROBLEM_ITERATIONS):
        if hi - lo < cfg.tol3 * (1.0 + lo):
            return _hard_case(pencil, H, N, g, R, hi)
        factor = pencil.factor(lam)
        if factor is not None:
            p = factor.solve(-g)
            Np = N @ p
            norm = math.sqrt(max(float(p @ Np), 0.0))
            delta = norm - R
            if abs(delta) / R < cfg.tol4 or (delta <= 0.0 and lam <= cfg.tol1):
                return p, lam
            if delta > 0.0:
                lo = lam
            else:
                hi = lam
            q = 1.0 / R - 1.0 / norm
            dq = -float(Np @ factor.solve(Np)) / norm**3
            lam = lam - q / dq
            pos_def = True
        else:
            lo = lam
            pos_def = False
        if not pos_def or lam < lo or lam > hi:
            if math.isinf(hi):
                lam = 1.0 if lo == 0.0 else 2.0 * lo
            else:
                lam = 0.5 * (lo + hi)
    raise TrustRegionError("subproblem multiplier search did not converge", {"lo": lo, "hi": hi})


def _stop(lam: float, step: np.ndarray, xi: np.ndarray, cfg: TRConfig) -> bool:
    return lam <= cfg.tol1 and float(np.linalg.norm(step)) <= cfg.tol2 * (1.0 + float(np.linalg.norm(xi)))


def minimize(
    f: Objective,
    xi0: np.ndarray,
    H_bar: Optional[Matrix] = None,
    R_init: float = 1.0,
    cfg: TRConfig = TRConfig(),
    label: str = "phase_two",
) -> MinimizeResult:
    """Minimize a barrier objective from a strictly feasible start.

    Radius control: infeasible trial, R/4; ratio below 1/8 or gradient ratio
    above 1, R/4 and reject; ratio below 1/4, R/2 and accept; ratio at least
    3/4 with an active radius and gradient ratio at most 1/8, 2R and accept.

    Args:
        f: ``f(xi, order)`` returning value, gradient and Hessian; +inf outside the domain.
        xi0: Strictly feasible start.
        H_bar: Preprocessed Hessian entering the scaling matrix; the start Hessian
            stands in when it is absent.
        R_init: Initial trust radius in the scaled norm.
        cfg: Tolerances.
        label: Metric label for the phase.

    Raises:
        TrustRegionError: infeasible start, radius underflow or iteration cap.
    """
    xi = np.asarray(xi0, dtype=float).copy()
    current = f(xi, 2)
    if not math.isfinite(current.value):
        raise TrustRegionError("minimize started from an infeasible point", {"phase": label})
    H, g = _as_csr(current.hessian), current.gradient
    N = start_metric(H, H_bar)
    R = R_init
    result = MinimizeResult(xi=xi, radius=R, iterations=0, values=[current.value])
    eps = np.finfo(float).eps

    for iteration in range(1, cfg.max_iterations + 1):
        step, lam = compute_delta_xi(H, N, g, R, cfg)
        predicted = -float(g @ step + 0.5 * step @ (H @ step))
        if predicted <= 10.0 * eps * max(1.0, abs(current.value)) and lam <= cfg.tol1:
            result.iterations = iteration
            break

        trial_xi = xi + step
        trial = f(trial_xi, 1)
        outcome = "accepted"
        if not math.isfinite(trial.value):
            R /= 4.0
            outcome = "infeasible"
        else:
            rho = (current.value - trial.value) / predicted if predicted > 0 else -math.inf
            rho_g = float(np.linalg.norm(trial.gradient - g - H @ step)) / (
                float(np.linalg.norm(g)) + float(np.linalg.norm(trial.gradient))
            )
            if rho < 0.125 or rho_g > 1.0:
                R /= 4.0
                outcome = "ratio" if rho < 0.125 else "gradient_ratio"
            else:
                if rho < 0.25:
                    R /= 2.0
                elif rho >= 0.75 and lam > 0.0 and rho_g <= 0.125:
                    R *= 2.0
                xi = trial_xi
                current = f(xi, 2)
                H, g = _as_csr(current.hessian), current.gradient
                result.values.append(current.value)

        if outcome != "accepted":
            result.rejections[outcome] += 1
        metrics.increment("trust_region_iterations_total", phase=label, outcome=outcome)
        logger.debug(
            "Trust-region iteration",
            phase=label,
            iteration=iteration,
            outcome=outcome,
            value=current.value,
            radius=R,
            lam=lam,
        )
        result.iterations = iteration
        if _stop(lam, step, xi, cfg):
            break
        if R < 1e-300:
            raise TrustRegionError("trust radius underflow", {"phase": label, "iteration": iteration})
    else:
        raise TrustRegionError(
            f"no convergence within {cfg.max_iterations} iterations",
            {"phase": label, "value": current.value, "radius": R},
        )

    result.xi = xi
    result.radius = R
    metrics.gauge("trust_radius", R)
    return result
