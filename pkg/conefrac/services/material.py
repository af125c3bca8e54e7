"""Bulk strain-energy densities and the initially rigid cohesive law with damage."""

from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from conefrac.core.errors import InvertedElementError
from conefrac.domain.models import BulkModel, CohesiveBlock, MaterialBlock

# Quadratic regularization of the interface energy: scale and damage floor.
REGULARIZATION_SCALE = 5e5
DAMAGE_FLOOR = 8e-6


@dataclass(frozen=True)
class BulkParams:
    """Bulk constants. Both parameterizations are always populated."""

    model: BulkModel
    c1: float
    beta: float
    E: float
    nu: float
    rho: float

    @classmethod
    def from_engineering(
        cls, E: float, nu: float, rho: float, model: BulkModel = BulkModel.KNOWLES_STERNBERG
    ) -> "BulkParams":
        """c1 = E / (4 (1 + nu)), beta = nu / (1 - 2 nu)."""
        return cls(model=model, c1=E / (4.0 * (1.0 + nu)), beta=nu / (1.0 - 2.0 * nu), E=E, nu=nu, rho=rho)

    @classmethod
    def from_intrinsic(cls, c1: float, beta: float, rho: float) -> "BulkParams":
        nu = beta / (1.0 + 2.0 * beta)
        return cls(
            model=BulkModel.KNOWLES_STERNBERG, c1=c1, beta=beta, E=4.0 * c1 * (1.0 + nu), nu=nu, rho=rho
        )

    @classmethod
    def from_block(cls, block: MaterialBlock) -> "BulkParams":
        if block.E is not None and block.nu is not None:
            return cls.from_engineering(block.E, block.nu, block.rho, block.model)
        assert block.c1 is not None and block.beta is not None
        return cls.from_intrinsic(block.c1, block.beta, block.rho)

    @property
    def plane_stress_lame(self) -> Tuple[float, float]:
        """(lambda*, mu) of linear plane stress."""
        return self.E * self.nu / (1.0 - self.nu**2), self.E / (2.0 * (1.0 + self.nu))


@dataclass(frozen=True)
class CohesiveParams:
    """sigma_c in Pa, G_c in Pa*m; delta_u = 2 G_c / sigma_c."""

    sigma_c: float
    G_c: float
    beta_mix: float = 1.0

    @classmethod
    def from_block(cls, block: CohesiveBlock) -> "CohesiveParams":
        return cls(sigma_c=block.sigma_c, G_c=block.G_c, beta_mix=block.beta_mix)

    @property
    def delta_u(self) -> float:
        return 2.0 * self.G_c / self.sigma_c

    @property
    def q(self) -> float:
        return -self.sigma_c / (2.0 * self.delta_u)

    def l(self, d: np.ndarray) -> np.ndarray:
        """Residual critical traction of an interface damaged to d."""
        return -2.0 * (self.delta_u - np.asarray(d)) * self.q


class DiagonalEval(NamedTuple):
    """Value, gradient and Hessian diagonal of a separable function."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def _det2(F: np.ndarray) -> np.ndarray:
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def _inverse_transpose(F: np.ndarray, J: np.ndarray) -> np.ndarray:
    A = np.empty_like(F)
    A[..., 0, 0] = F[..., 1, 1]
    A[..., 0, 1] = -F[..., 1, 0]
    A[..., 1, 0] = -F[..., 0, 1]
    A[..., 1, 1] = F[..., 0, 0]
    return A / J[..., None, None]


_I2 = np.eye(2)
_IDENTITY4 = np.einsum("ik,jl->ijkl", _I2, _I2)
_SYMMETRIC4 = 0.5 * (_IDENTITY4 + np.einsum("il,jk->ijkl", _I2, _I2))
_TRACE4 = np.einsum("ij,kl->ijkl", _I2, _I2)


def bulk_energy_density(F: np.ndarray, p: BulkParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Strain-energy density, first Piola stress and tangent for a stack of 2x2 gradients.

    Knowles-Sternberg plane stress reads
    ``c1 [tr C + (1 + 1/beta) det(C)^(-beta/(1+beta))] - c1 (3 + 1/beta)`` with
    C = F^T F, which is stress free at F = I. The linear model is small-strain
    plane stress on the displacement gradient.

    Args:
        F: (..., 2, 2) deformation gradients.
        p: Bulk parameters.

    Returns:
        psi (...), dpsi/dF (..., 2, 2) and d2psi/dF2 (..., 2, 2, 2, 2).
    """
    F = np.asarray(F, dtype=float)
    J = _det2(F)
    if np.any(J <= 0.0):
        position = np.unravel_index(int(np.argmax(J <= 0.0)), J.shape) if J.ndim else ()
        raise InvertedElementError(None, {"position": [int(i) for i in position], "det_F": float(J.min())})

    if p.model is BulkModel.LINEAR:
        lam, mu = p.plane_stress_lame
        H = F - _I2
        eps = 0.5 * (H + np.swapaxes(H, -1, -2))
        tr = eps[..., 0, 0] + eps[..., 1, 1]
        psi = 0.5 * lam * tr**2 + mu * np.einsum("...ij,...ij->...", eps, eps)
        P = lam * tr[..., None, None] * _I2 + 2.0 * mu * eps
        A4 = np.broadcast_to(lam * _TRACE4 + 2.0 * mu * _SYMMETRIC4, F.shape + (2, 2)).copy()
        return psi, P, A4

    k = 1.0 + 1.0 / p.beta
    expo = 2.0 * p.beta / (1.0 + p.beta)
    Jp = J**-expo
    A = _inverse_transpose(F, J)
    psi = p.c1 * (np.einsum("...ij,...ij->...", F, F) + k * Jp) - p.c1 * (3.0 + 1.0 / p.beta)
    P = p.c1 * (2.0 * F - (k * expo * Jp)[..., None, None] * A)
    AA = np.einsum("...ij,...kl->...ijkl", A, A)
    AxA = np.einsum("...il,...kj->...ijkl", A, A)
    A4 = p.c1 * (2.0 * _IDENTITY4 + (k * expo * Jp)[..., None, None, None, None] * (expo * AA + AxA))
    return psi, P, A4


def cohesive_g(delta: np.ndarray, d: np.ndarray, p: CohesiveParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interface energy g(delta; d) and its first two delta-derivatives.

    Linear with slope l(d) up to d, quadratic with curvature 2q up to delta_u,
    constant beyond; C1 at both breakpoints.
    """
    delta = np.asarray(delta, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), delta.shape)
    du, q = p.delta_u, p.q
    l = p.l(d)

    left = delta <= d
    right = delta > du
    middle = ~(left | right)

    g = np.where(left, l * delta, 0.0)
    g = np.where(middle, l * delta + q * (delta - d) ** 2, g)
    g = np.where(right, l * du + q * (du - d) ** 2, g)

    g1 = np.where(left, l, 0.0)
    g1 = np.where(middle, l + 2.0 * q * (delta - d), g1)

    g2 = np.where(middle, 2.0 * q, 0.0)
    return g, g1, g2


def h(s0: np.ndarray, d: np.ndarray, omega: np.ndarray, p: CohesiveParams) -> DiagonalEval:
    """Quadrature sum of omega * g(s0; d) over interface Gauss points."""
    g, g1, g2 = cohesive_g(s0, d, p)
    return DiagonalEval(float(np.sum(omega * g)), omega * g1, omega * g2)


def regularization_coefficient(d: np.ndarray, alpha: float, omega: np.ndarray, p: CohesiveParams) -> np.ndarray:
    """Per-point coefficient c of the quadratic term c * s0**2 in h_alpha."""
    return REGULARIZATION_SCALE * alpha * omega * np.maximum(1.0 - np.asarray(d) / p.delta_u, DAMAGE_FLOOR)


def h_alpha(
    s0: np.ndarray, d: np.ndarray, alpha: float, omega: np.ndarray, p: CohesiveParams
) -> DiagonalEval:
    """h plus the quadratic regularization that vanishes with alpha."""
    base = h(s0, d, omega, p)
    c = regularization_coefficient(d, alpha, omega, p)
    s0 = np.asarray(s0, dtype=float)
    return DiagonalEval(
        base.value + float(np.sum(c * s0**2)),
        base.gradient + 2.0 * c * s0,
        base.hessian + 2.0 * c,
    )


def update_damage(d_prev: np.ndarray, delta_now: np.ndarray, p: CohesiveParams) -> np.ndarray:
    """Irreversible damage: running maximum of the opening, capped at delta_u."""
    return np.minimum(p.delta_u, np.maximum(d_prev, delta_now))
