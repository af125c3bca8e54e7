"""Opening-displacement maps of the interface elements and their derivatives.

Every interface carries ``n_g`` Gauss points. At each one the normal and
tangential jumps are measured in the frame of the deformed mid-surface,
the average of the two deformed edge sides. With the jump D and the
mid-surface tangent T (both linear in the 12 local displacements q)

    s1 = D^T Q T / |T|,    s2 = beta_mix D^T T / |T|,    Q = [[0, 1], [-1, 0]]

so s1 > 0 opens the interface toward element B.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from conefrac.core.errors import DegenerateInterfaceError
from conefrac.services.assembly.quadrature import edge_shape, gauss_legendre
from conefrac.services.mesh import FracturedMesh

# Interfaces whose deformed tangent shrinks below this fraction of the reference are degenerate.
DEGENERATE_RATIO = 1e-12

_Q = np.array([[0.0, 1.0], [-1.0, 0.0]])


class OpeningEval(NamedTuple):
    """Openings s (n_e, n_g, 2) with local gradients (.., 2, 12) and Hessians (.., 2, 12, 12)."""

    s: np.ndarray
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None


@dataclass(frozen=True)
class _EdgeOperators:
    jump: np.ndarray  # (n_g, 2, 12)
    tangent: np.ndarray  # (n_g, 2, 12)


def _edge_operators(n_g: int) -> _EdgeOperators:
    eta, _ = gauss_legendre(n_g)
    N, dN = edge_shape(eta)
    jump = np.zeros((n_g, 2, 12))
    tangent = np.zeros((n_g, 2, 12))
    for k in range(3):
        for i in range(2):
            jump[:, i, 2 * k + i] = -N[:, k]
            jump[:, i, 6 + 2 * k + i] = N[:, k]
            tangent[:, i, 2 * k + i] = 0.5 * dN[:, k]
            tangent[:, i, 6 + 2 * k + i] = 0.5 * dN[:, k]
    return _EdgeOperators(jump=jump, tangent=tangent)


def _side_dofs(nodes: np.ndarray) -> np.ndarray:
    return (2 * nodes[:, :, None] + np.arange(2)).reshape(len(nodes), 6)


class InterfaceAssembler:
    """Evaluates c_{k,e,i}(u) for all interface Gauss points of a fractured mesh."""

    def __init__(self, fmesh: FracturedMesh, beta_mix: float = 1.0, n_g: Optional[int] = None):
        self.fmesh = fmesh
        self.beta_mix = beta_mix
        self.n_g = n_g or fmesh.n_g
        self.n_e = fmesh.n_e
        self.ops = _edge_operators(self.n_g)

        table = fmesh.interfaces
        self.dofs = np.concatenate([_side_dofs(table.side_a), _side_dofs(table.side_b)], axis=1)

        eta, w = gauss_legendre(self.n_g)
        _, dN = edge_shape(eta)
        X = fmesh.nodes[table.side_a]  # (n_e, 3, 2)
        self.t_ref = np.einsum("gk,eki->egi", dN, X)
        self.r_ref = np.linalg.norm(self.t_ref, axis=-1)
        self.omega = w[None, :] * self.r_ref  # (n_e, n_g), meters
        self._frames = (_Q, beta_mix * np.eye(2))

    @property
    def n_i(self) -> int:
        return self.n_e * self.n_g

    @property
    def point_dofs(self) -> np.ndarray:
        """(n_i, 12) local DOFs of every Gauss point, interface-major."""
        return np.repeat(self.dofs, self.n_g, axis=0)

    def openings(self, u: np.ndarray, order: int = 2) -> OpeningEval:
        """(s1, s2) at every Gauss point with derivatives up to ``order``.

        Raises:
            DegenerateInterfaceError: the deformed mid-surface tangent has collapsed.
        """
        q = np.asarray(u)[self.dofs]
        jump = np.einsum("gij,ej->egi", self.ops.jump, q)
        t = self.t_ref + np.einsum("gij,ej->egi", self.ops.tangent, q)
        r = np.linalg.norm(t, axis=-1)
        collapsed = r < DEGENERATE_RATIO * self.r_ref
        if collapsed.any():
            e = int(np.argmax(collapsed.any(axis=1)))
            raise DegenerateInterfaceError(e, {"length_ratio": float((r / self.r_ref).min())})

        shape = (self.n_e, self.n_g)
        s = np.empty(shape + (2,))
        grad = np.empty(shape + (2, 12)) if order >= 1 else None
        hess = np.empty(shape + (2, 12, 12)) if order >= 2 else None
        r3 = r**3
        eye = np.eye(2)
        for k, A in enumerate(self._frames):
            At = np.einsum("ij,egj->egi", A, t)
            AtD = np.einsum("ji,egj->egi", A, jump)
            f = np.sum(jump * At, axis=-1)
            s[..., k] = f / r
            if grad is not None:
                d_jump = At / r[..., None]
                d_t = AtD / r[..., None] - (f / r3)[..., None] * t
                grad[..., k, :] = np.einsum("egi,gij->egj", d_jump, self.ops.jump) + np.einsum(
                    "egi,gij->egj", d_t, self.ops.tangent
                )
            if hess is not None:
                h_jt = A / r[..., None, None] - np.einsum("egi,egj->egij", At, t) / r3[..., None, None]
                tt = np.einsum("egi,egj->egij", t, t)
                h_tt = (
                    -(np.einsum("egi,egj->egij", AtD, t) + np.einsum("egi,egj->egij", t, AtD))
                    / r3[..., None, None]
                    - (f / r3)[..., None, None] * eye
                    + 3.0 * (f / r**5)[..., None, None] * tt
                )
                cross = np.einsum("gia,egij,gjb->egab", self.ops.jump, h_jt, self.ops.tangent)
                hess[..., k, :, :] = (
                    cross
                    + np.swapaxes(cross, -1, -2)
                    + np.einsum("gia,egij,gjb->egab", self.ops.tangent, h_tt, self.ops.tangent)
                )
        return OpeningEval(s, grad, hess)

    def effective_opening(self, u: np.ndarray) -> np.ndarray:
        """|(s1, s2)| at every Gauss point, flattened to (n_i,)."""
        s = self.openings(u, order=0).s
        return np.hypot(s[..., 0], s[..., 1]).ravel()
