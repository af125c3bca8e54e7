"""Bulk strain energy, consistent mass, external loads and the midpoint momentum term."""

from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from conefrac.core.errors import ConfigurationError, InvertedElementError, NotPositiveDefiniteError
from conefrac.core.logging import get_structlog_logger
from conefrac.domain.models import LoadBlock, LoadKind, MaterialBlock
from conefrac.services.assembly.quadrature import (
    TRI6_EDGES,
    edge_shape,
    gauss_legendre,
    tri6_shape,
    triangle_rule,
)
from conefrac.services.material import BulkParams, bulk_energy_density
from conefrac.services.mesh import FracturedMesh

logger = get_structlog_logger(__name__)


class EnergyEval(NamedTuple):
    """Value with optional gradient and sparse Hessian."""

    value: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[sparse.csr_matrix] = None


@dataclass(frozen=True)
class _Geometry:
    N: np.ndarray  # (p, 6)
    dNdX: np.ndarray  # (M, p, 6, 2)
    weights: np.ndarray  # (M, p), reference weight times det(dX/dr)


def _geometry(fmesh: FracturedMesh, n_points: int) -> _Geometry:
    rule = triangle_rule(n_points)
    N, dN = tri6_shape(rule.points)
    X = fmesh.nodes[fmesh.elements]
    J = np.einsum("mai,paj->mpij", X, dN)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    invJ = np.linalg.inv(J)
    dNdX = np.einsum("paj,mpji->mpai", dN, invJ)
    return _Geometry(N=N, dNdX=dNdX, weights=rule.weights[None, :] * detJ)


def element_dofs(elements: np.ndarray) -> np.ndarray:
    """(M, 12) global DOFs of each element, node-major (x, y)."""
    return (2 * elements[:, :, None] + np.arange(2)).reshape(len(elements), 12)


def assign_materials(fmesh: FracturedMesh, blocks: Sequence[MaterialBlock]) -> np.ndarray:
    """Index into ``blocks`` for every element; explicit element sets win over the catch-all."""
    owner = np.full(fmesh.n_elements, -1, dtype=np.int64)
    for k, block in enumerate(blocks):
        if block.elementset is None:
            continue
        members = fmesh.elementset(block.elementset)
        clash = members[owner[members] >= 0]
        if clash.size:
            raise ConfigurationError(
                f"material {block.name} overlaps another material",
                {"elements": fmesh.source.element_ids[clash].tolist()},
            )
        owner[members] = k
    catch_all = [k for k, b in enumerate(blocks) if b.elementset is None]
    if catch_all:
        owner[owner < 0] = catch_all[0]
    missing = np.flatnonzero(owner < 0)
    if missing.size:
        raise ConfigurationError(
            "elements without a material",
            {"elements": fmesh.source.element_ids[missing].tolist()},
        )
    return owner


class BulkAssembler:
    """Quadrature of the bulk energy b0(u) over all TRI6 elements.

    The Hessian is returned in a fixed CSR pattern: element blocks summed in
    element order, so the structure and the summation order never change
    within a run.
    """

    def __init__(
        self,
        fmesh: FracturedMesh,
        materials: Sequence[MaterialBlock],
        n_points: int = 3,
    ):
        self.fmesh = fmesh
        self.geometry = _geometry(fmesh, n_points)
        self.dofs = element_dofs(fmesh.elements)
        self.material_of = assign_materials(fmesh, materials)
        self.params: List[BulkParams] = [BulkParams.from_block(b) for b in materials]
        self.groups: List[Tuple[BulkParams, np.ndarray]] = [
            (p, np.flatnonzero(self.material_of == k)) for k, p in enumerate(self.params)
        ]
        self._rows = np.repeat(self.dofs, 12, axis=1).ravel()
        self._cols = np.tile(self.dofs, (1, 12)).ravel()

    @property
    def n_dof(self) -> int:
        return self.fmesh.n_dof

    def deformation_gradients(self, u: np.ndarray) -> np.ndarray:
        """F at every element quadrature point, (M, p, 2, 2)."""
        U = np.asarray(u)[self.dofs].reshape(-1, 6, 2)
        return np.eye(2) + np.einsum("mai,mpaj->mpij", U, self.geometry.dNdX)

    def _check_orientation(self, F: np.ndarray) -> None:
        det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        bad = np.flatnonzero((det <= 0.0).any(axis=1))
        if bad.size:
            ids = self.fmesh.source.element_ids[bad]
            raise InvertedElementError(int(ids[0]), {"inverted_elements": ids.tolist(), "det_F": float(det.min())})

    def element_energies(self, u: np.ndarray) -> np.ndarray:
        """Per-element strain energy, J (per unit thickness)."""
        F = self.deformation_gradients(u)
        self._check_orientation(F)
        out = np.zeros(self.fmesh.n_elements)
        for params, elems in self.groups:
            if elems.size:
                psi, _, _ = bulk_energy_density(F[elems], params)
                out[elems] = np.sum(self.geometry.weights[elems] * psi, axis=1)
        return out

    def energy(self, u: np.ndarray, order: int = 2) -> EnergyEval:
        """b0(u) with gradient (order >= 1) and Hessian (order >= 2).

        Raises:
            InvertedElementError: some quadrature point has det F <= 0.
        """
        F = self.deformation_gradients(u)
        self._check_orientation(F)
        w, dNdX = self.geometry.weights, self.geometry.dNdX
        value = 0.0
        grad_e = np.zeros((self.fmesh.n_elements, 6, 2)) if order >= 1 else None
        hess_e = np.zeros((self.fmesh.n_elements, 6, 2, 6, 2)) if order >= 2 else None
        for params, elems in self.groups:
            if not elems.size:
                continue
            psi, P, A4 = bulk_energy_density(F[elems], params)
            we = w[elems]
            value += float(np.sum(we * psi))
            if grad_e is not None:
                grad_e[elems] = np.einsum("mp,mpij,mpaj->mai", we, P, dNdX[elems])
            if hess_e is not None:
                hess_e[elems] = np.einsum("mp,mpijkl,mpaj,mpbl->maibk", we, A4, dNdX[elems], dNdX[elems])

        gradient = None
        if grad_e is not None:
            gradient = np.zeros(self.n_dof)
            np.add.at(gradient, self.dofs.ravel(), grad_e.ravel())
        hessian = None
        if hess_e is not None:
            hessian = sparse.csr_matrix(
                (hess_e.ravel(), (self._rows, self._cols)), shape=(self.n_dof, self.n_dof)
            )
        return EnergyEval(value, gradient, hessian)


def _element_mass_blocks(fmesh: FracturedMesh, rho: np.ndarray) -> np.ndarray:
    # The 6-point rule integrates N_a N_b exactly on straight-sided elements.
    geometry = _geometry(fmesh, 6)
    return np.einsum("m,mp,pa,pb->mab", rho, geometry.weights, geometry.N, geometry.N)


def mass_matrix(
    fmesh: FracturedMesh, materials: Sequence[MaterialBlock], elements: Optional[np.ndarray] = None
) -> sparse.csr_matrix:
    """Consistent mass matrix, shape (n_dof, n_dof); SPD on the DOFs of the assembled elements.

    Args:
        elements: Restrict assembly to these element indices (a part); all by default.

    Raises:
        NotPositiveDefiniteError: an element mass block fails Cholesky.
    """
    owner = assign_materials(fmesh, materials)
    rho = np.array([materials[k].rho for k in owner], dtype=float)
    blocks = _element_mass_blocks(fmesh, rho)
    nodes = fmesh.elements
    if elements is not None:
        blocks, nodes = blocks[elements], nodes[elements]
    try:
        np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("element mass matrix is not positive definite") from None

    data, rows, cols = [], [], []
    for comp in range(2):
        dof = 2 * nodes + comp
        rows.append(np.repeat(dof, 6, axis=1).ravel())
        cols.append(np.tile(dof, (1, 6)).ravel())
        data.append(blocks.ravel())
    M = sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fmesh.n_dof, fmesh.n_dof),
    )
    logger.debug("Mass matrix assembled", nnz=M.nnz, total_mass=float(M.sum()) / 2.0)
    return M


def momentum_energy(
    u: np.ndarray,
    u_prev: np.ndarray,
    v_prev: np.ndarray,
    dt: float,
    M: sparse.spmatrix,
    order: int = 2,
) -> EnergyEval:
    """m0(u) = (2/dt^2) w^T M w with w = u - u_prev - v_prev dt/2."""
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    w = np.asarray(u) - u_prev - 0.5 * dt * np.asarray(v_prev)
    Mw = M @ w
    scale = 2.0 / dt**2
    return EnergyEval(
        float(scale * w @ Mw),
        2.0 * scale * Mw if order >= 1 else None,
        sparse.csr_matrix(2.0 * scale * M) if order >= 2 else None,
    )


def _exterior_edges(fmesh: FracturedMesh) -> List[Tuple[int, int]]:
    source = fmesh.source
    count: Dict[Tuple[int, int], int] = {}
    for e in range(source.n_elements):
        for i, _, j in TRI6_EDGES:
            a, b = int(source.elements[e, i]), int(source.elements[e, j])
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    out = []
    for e in range(source.n_elements):
        for k, (i, _, j) in enumerate(TRI6_EDGES):
            a, b = int(source.elements[e, i]), int(source.elements[e, j])
            if count[(min(a, b), max(a, b))] == 1:
                out.append((e, k))
    return out


def external_load(fmesh: FracturedMesh, loads: Sequence[LoadBlock], n_points: int = 3) -> np.ndarray:
    """Consistent nodal force vector f_ext of body forces and edge tractions."""
    f = np.zeros(fmesh.n_dof)
    if not loads:
        return f
    geometry = _geometry(fmesh, n_points)
    dofs = element_dofs(fmesh.elements)
    eta, w_line = gauss_legendre(3)
    N_line, dN_line = edge_shape(eta)
    edges = _exterior_edges(fmesh)

    for load in loads:
        value = np.asarray(load.value, dtype=float)
        if load.kind is LoadKind.BODY:
            elems = (
                fmesh.elementset(load.elementset)
                if load.elementset is not None
                else np.arange(fmesh.n_elements)
            )
            nodal = np.einsum("mp,pa,i->mai", geometry.weights[elems], geometry.N, value)
            np.add.at(f, dofs[elems].ravel(), nodal.ravel())
            continue

        assert load.nodeset is not None
        fmesh.nodeset(load.nodeset)
        members = set(fmesh.source.nodesets[load.nodeset].tolist())
        loaded = 0
        for e, k in edges:
            local = TRI6_EDGES[k]
            if not all(int(fmesh.source.elements[e, a]) in members for a in local):
                continue
            copies = fmesh.elements[e, list(local)]
            X = fmesh.nodes[copies]  # (3, 2)
            jac = np.linalg.norm(dN_line @ X, axis=1)
            nodal = np.einsum("g,ga,i->ai", w_line * jac, N_line, value)
            np.add.at(f, (2 * copies[:, None] + np.arange(2)).ravel(), nodal.ravel())
            loaded += 1
        logger.debug("Traction applied", nodeset=load.nodeset, edges=loaded)
    return f
