"""Mesh ingestion, per-element node duplication, interface insertion and constraint operators."""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from conefrac.core.errors import (
    ContactPairError,
    InvertedElementError,
    MeshFormatError,
    UnknownNodeSetError,
)
from conefrac.core.logging import get_structlog_logger
from conefrac.domain.models import BoundaryBlock, BoundaryKind, ContactBlock
from conefrac.services.assembly.quadrature import TRI6_EDGES, tri6_shape, triangle_rule

logger = get_structlog_logger(__name__)

# Points where the reference Jacobian must be positive: both bulk rules plus the corners.
_ORIENTATION_POINTS = np.vstack(
    [triangle_rule(3).points, triangle_rule(6).points, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]]
)


@dataclass(frozen=True)
class Mesh:
    """A TRI6 mesh as read from disk. Indices are 0-based positions, ids are file labels."""

    nodes: np.ndarray  # (N, 2)
    elements: np.ndarray  # (M, 6) node indices
    node_ids: np.ndarray  # (N,)
    element_ids: np.ndarray  # (M,)
    nodesets: Dict[str, np.ndarray] = field(default_factory=dict)
    elementsets: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def _node_lookup(self) -> Dict[int, int]:
        return {int(i): k for k, i in enumerate(self.node_ids)}

    def node_index(self, node_id: int) -> int:
        """Position of the node with file id ``node_id``."""
        try:
            return self._node_lookup[int(node_id)]
        except KeyError:
            raise KeyError(f"node {node_id} is not in the mesh") from None


def _reference_jacobians(nodes: np.ndarray, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
    """det(dX/dr) per element and point, shape (M, n)."""
    _, dN = tri6_shape(points)
    X = nodes[elements]  # (M, 6, 2)
    J = np.einsum("mai,paj->mpij", X, dN)
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


def _data_lines(text: str) -> List[Tuple[int, List[str]]]:
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].split()
        if content:
            lines.append((number, content))
    return lines


def _parse_int(token: str, line: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise MeshFormatError(f"expected integer {what}, got '{token}'", line=line) from None


def _parse_float(token: str, line: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise MeshFormatError(f"expected number {what}, got '{token}'", line=line) from None


def load_mesh(path: Union[str, Path]) -> Mesh:
    """Read a TRI6 mesh file.

    Format: a header ``nodes N elements M``, N lines ``id x y``, M lines
    ``id n1 .. n6`` (corners counterclockwise, then midsides of 1-2, 2-3, 3-1),
    then optional ``nodeset NAME k id...`` and ``elementset NAME k id...``
    blocks whose ids may span several lines. ``#`` starts a comment.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise MeshFormatError(f"mesh file not found: {path}") from None
    lines = _data_lines(text)
    if not lines:
        raise MeshFormatError("empty mesh file", line=1)

    header_line, header = lines[0]
    if len(header) != 4 or header[0] != "nodes" or header[2] != "elements":
        raise MeshFormatError("header must read 'nodes N elements M'", line=header_line)
    n_nodes = _parse_int(header[1], header_line, "node count")
    n_elements = _parse_int(header[3], header_line, "element count")
    if n_nodes < 3 or n_elements < 1:
        raise MeshFormatError("mesh needs at least 3 nodes and 1 element", line=header_line)

    cursor = 1
    if len(lines) < 1 + n_nodes + n_elements:
        last = lines[-1][0]
        raise MeshFormatError(
            f"expected {n_nodes} nodes and {n_elements} elements, file ends early", line=last
        )

    node_ids = np.empty(n_nodes, dtype=np.int64)
    nodes = np.empty((n_nodes, 2))
    lookup: Dict[int, int] = {}
    for k in range(n_nodes):
        number, tokens = lines[cursor + k]
        if len(tokens) != 3:
            raise MeshFormatError("node line must read 'id x y'", line=number)
        node_id = _parse_int(tokens[0], number, "node id")
        if node_id in lookup:
            raise MeshFormatError(f"duplicate node id {node_id}", line=number)
        lookup[node_id] = k
        node_ids[k] = node_id
        nodes[k] = (_parse_float(tokens[1], number, "x"), _parse_float(tokens[2], number, "y"))
    cursor += n_nodes

    element_ids = np.empty(n_elements, dtype=np.int64)
    elements = np.empty((n_elements, 6), dtype=np.int64)
    element_lookup: Dict[int, int] = {}
    for k in range(n_elements):
        number, tokens = lines[cursor + k]
        if len(tokens) != 7:
            raise MeshFormatError("element line must read 'id n1 n2 n3 n4 n5 n6'", line=number)
        element_id = _parse_int(tokens[0], number, "element id")
        if element_id in element_lookup:
            raise MeshFormatError(f"duplicate element id {element_id}", line=number)
        element_lookup[element_id] = k
        element_ids[k] = element_id
        for a, token in enumerate(tokens[1:]):
            node_id = _parse_int(token, number, "node reference")
            if node_id not in lookup:
                raise MeshFormatError(f"element {element_id} references unknown node {node_id}", line=number)
            elements[k, a] = lookup[node_id]
        if len(set(elements[k].tolist())) != 6:
            raise MeshFormatError(f"element {element_id} repeats a node", line=number)
    cursor += n_elements

    nodesets: Dict[str, np.ndarray] = {}
    elementsets: Dict[str, np.ndarray] = {}
    tokens_left = [(number, token) for number, tokens in lines[cursor:] for token in tokens]
    position = 0
    while position < len(tokens_left):
        number, keyword = tokens_left[position]
        if keyword not in ("nodeset", "elementset"):
            raise MeshFormatError(f"expected 'nodeset' or 'elementset', got '{keyword}'", line=number)
        if position + 2 >= len(tokens_left):
            raise MeshFormatError(f"truncated {keyword} block", line=number)
        name = tokens_left[position + 1][1]
        count = _parse_int(tokens_left[position + 2][1], tokens_left[position + 2][0], f"{keyword} size")
        members = tokens_left[position + 3 : position + 3 + count]
        if len(members) != count:
            raise MeshFormatError(f"{keyword} {name} declares {count} ids but lists {len(members)}", line=number)
        table, target = (lookup, nodesets) if keyword == "nodeset" else (element_lookup, elementsets)
        if name in target:
            raise MeshFormatError(f"duplicate {keyword} {name}", line=number)
        indices = []
        for member_line, token in members:
            member = _parse_int(token, member_line, f"{keyword} member")
            if member not in table:
                raise MeshFormatError(f"{keyword} {name} references unknown id {member}", line=member_line)
            indices.append(table[member])
        target[name] = np.array(sorted(set(indices)), dtype=np.int64)
        position += 3 + count

    used = np.zeros(n_nodes, dtype=bool)
    used[elements.ravel()] = True
    if not used.all():
        orphan = int(node_ids[np.argmin(used)])
        raise MeshFormatError(f"node {orphan} belongs to no element")

    detJ = _reference_jacobians(nodes, elements, _ORIENTATION_POINTS)
    bad = np.flatnonzero((detJ <= 0.0).any(axis=1))
    if bad.size:
        element_id = int(element_ids[bad[0]])
        raise InvertedElementError(element_id, {"inverted_elements": element_ids[bad].tolist()})

    mesh = Mesh(
        nodes=nodes,
        elements=elements,
        node_ids=node_ids,
        element_ids=element_ids,
        nodesets=nodesets,
        elementsets=elementsets,
    )
    logger.info(
        "Mesh loaded",
        path=str(path),
        nodes=mesh.n_nodes,
        elements=mesh.n_elements,
        nodesets=sorted(nodesets),
        elementsets=sorted(elementsets),
    )
    return mesh


@dataclass(frozen=True)
class InterfaceTable:
    """Interface elements: matched (start, mid, end) node triples on sides A and B.

    Triples follow element A's counterclockwise edge, so side B lists the same
    geometric points in the same order. The normal (t_y, -t_x) of that edge
    points from A into B.
    """

    side_a: np.ndarray  # (n_e, 3)
    side_b: np.ndarray  # (n_e, 3)
    elements: np.ndarray  # (n_e, 2) element indices (A, B)

    @property
    def count(self) -> int:
        return len(self.side_a)


@dataclass(frozen=True)
class FracturedMesh:
    """Mesh whose cohesive elements own private node copies, with interfaces between them."""

    source: Mesh
    nodes: np.ndarray  # (n0, 2)
    elements: np.ndarray  # (M, 6) indices into ``nodes``
    origin: np.ndarray  # (n0,) source node of every copy
    representative: np.ndarray  # (N,) copy owned by the lowest-numbered element
    cohesive: np.ndarray  # (M,) bool, element takes part in fracture
    interfaces: InterfaceTable
    n_g: int = 3

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dof(self) -> int:
        return 2 * len(self.nodes)

    @property
    def n_e(self) -> int:
        return self.interfaces.count

    @property
    def n_i(self) -> int:
        return self.n_e * self.n_g

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def _copies(self) -> List[np.ndarray]:
        order = np.argsort(self.origin, kind="stable")
        bounds = np.searchsorted(self.origin[order], np.arange(self.source.n_nodes + 1))
        return [order[bounds[k] : bounds[k + 1]] for k in range(self.source.n_nodes)]

    def copies_of(self, source_index: int) -> np.ndarray:
        """All copies of one source node."""
        return self._copies[source_index]

    def nodeset(self, name: str) -> np.ndarray:
        """Every copy of every node in a named source node set."""
        if name not in self.source.nodesets:
            raise UnknownNodeSetError(name, {"known": sorted(self.source.nodesets)})
        members = self.source.nodesets[name]
        if members.size == 0:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate([self._copies[k] for k in members]))

    def elementset(self, name: str) -> np.ndarray:
        """Element indices of a named element set."""
        if name not in self.source.elementsets:
            raise UnknownNodeSetError(name, {"known": sorted(self.source.elementsets), "kind": "elementset"})
        return self.source.elementsets[name]

    def node_copy(self, node_id: int) -> int:
        """Representative copy of the node with file id ``node_id``."""
        return int(self.representative[self.source.node_index(node_id)])


def insert_interfaces(mesh: Mesh, cohesive_elements: Optional[Iterable[int]] = None) -> FracturedMesh:
    """Duplicate nodes per cohesive element and insert an interface on every interior edge they touch.

    Args:
        mesh: Source mesh.
        cohesive_elements: Element indices that may fracture; None means all.
            Elements outside this set keep shared nodes among themselves.

    Returns:
        The fractured mesh. With every element cohesive it has 6 nodes per element.
    """
    n_elements = mesh.n_elements
    cohesive = np.zeros(n_elements, dtype=bool)
    if cohesive_elements is None:
        cohesive[:] = True
    else:
        cohesive[np.asarray(list(cohesive_elements), dtype=np.int64)] = True

    fractured = np.empty_like(mesh.elements)
    origin: List[int] = []
    shared: Dict[int, int] = {}
    representative = np.full(mesh.n_nodes, -1, dtype=np.int64)
    for e in range(n_elements):
        for a in range(6):
            source = int(mesh.elements[e, a])
            if cohesive[e]:
                copy = len(origin)
                origin.append(source)
            elif source in shared:
                copy = shared[source]
            else:
                copy = len(origin)
                origin.append(source)
                shared[source] = copy
            fractured[e, a] = copy
            if representative[source] < 0:
                representative[source] = copy
    origin_arr = np.array(origin, dtype=np.int64)

    edges: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}
    for e in range(n_elements):
        for k, (i, _, j) in enumerate(TRI6_EDGES):
            c0, c1 = int(mesh.elements[e, i]), int(mesh.elements[e, j])
            edges.setdefault((min(c0, c1), max(c0, c1)), []).append((e, k))

    side_a: List[List[int]] = []
    side_b: List[List[int]] = []
    pairs: List[Tuple[int, int]] = []
    for key, owners in edges.items():
        if len(owners) > 2:
            ids = [int(mesh.node_ids[k]) for k in key]
            raise MeshFormatError(f"edge {ids} is shared by {len(owners)} elements")
        if len(owners) == 1:
            continue
        (ea, ka), (eb, kb) = owners
        ia, ma, ja = TRI6_EDGES[ka]
        ib, mb, jb = TRI6_EDGES[kb]
        if mesh.elements[ea, ma] != mesh.elements[eb, mb]:
            ids = [int(mesh.element_ids[ea]), int(mesh.element_ids[eb])]
            raise MeshFormatError(f"elements {ids} disagree on a midside node")
        if not (cohesive[ea] or cohesive[eb]):
            continue
        start, end = int(mesh.elements[ea, ia]), int(mesh.elements[ea, ja])
        local_b = {int(mesh.elements[eb, a]): a for a in (ib, mb, jb)}
        side_a.append([int(fractured[ea, ia]), int(fractured[ea, ma]), int(fractured[ea, ja])])
        side_b.append(
            [
                int(fractured[eb, local_b[start]]),
                int(fractured[eb, mb]),
                int(fractured[eb, local_b[end]]),
            ]
        )
        pairs.append((ea, eb))

    table = InterfaceTable(
        side_a=np.array(side_a, dtype=np.int64).reshape(-1, 3),
        side_b=np.array(side_b, dtype=np.int64).reshape(-1, 3),
        elements=np.array(pairs, dtype=np.int64).reshape(-1, 2),
    )
    fmesh = FracturedMesh(
        source=mesh,
        nodes=mesh.nodes[origin_arr],
        elements=fractured,
        origin=origin_arr,
        representative=representative,
        cohesive=cohesive,
        interfaces=table,
    )
    logger.info(
        "Interfaces inserted",
        nodes=fmesh.n_nodes,
        interfaces=fmesh.n_e,
        gauss_points=fmesh.n_i,
        cohesive_elements=int(cohesive.sum()),
    )
    return fmesh


@dataclass(frozen=True)
class BoundaryOperator:
    """Selection form u = R x + u_BC of the displacement constraints at one instant.

    The equivalent equality form is B u = b with B the unit rows of the
    constrained DOFs and b = u_BC restricted to them.
    """

    n_dof: int
    free: np.ndarray
    constrained: np.ndarray
    u_bc: np.ndarray  # (n_dof,), zero on free DOFs
    v_bc: np.ndarray  # (n_dof,), prescribed velocity, zero on free DOFs

    @property
    def n_x(self) -> int:
        return len(self.free)

    @cached_property
    def R(self) -> sparse.csr_matrix:
        n_x = self.n_x
        return sparse.csr_matrix(
            (np.ones(n_x), (self.free, np.arange(n_x))), shape=(self.n_dof, n_x)
        )

    @cached_property
    def B(self) -> sparse.csr_matrix:
        n_c = len(self.constrained)
        return sparse.csr_matrix(
            (np.ones(n_c), (np.arange(n_c), self.constrained)), shape=(n_c, self.n_dof)
        )

    @property
    def b(self) -> np.ndarray:
        return self.u_bc[self.constrained]

    def expand(self, x: np.ndarray) -> np.ndarray:
        """u = R x + u_BC."""
        u = self.u_bc.copy()
        u[self.free] = x
        return u

    def project(self, u: np.ndarray) -> np.ndarray:
        """The least-squares projection of u onto the constraint set, in free coordinates."""
        return np.asarray(u)[self.free].copy()


def _prescriptions(fmesh: FracturedMesh, blocks: Sequence[BoundaryBlock]) -> Dict[int, Tuple[float, float]]:
    prescribed: Dict[int, Tuple[float, float]] = {}
    for block in blocks:
        nodes = fmesh.nodeset(block.nodeset)
        gradient = None if block.velocity_gradient is None else np.asarray(block.velocity_gradient, dtype=float)
        for node in nodes:
            X = fmesh.nodes[node]
            velocity = np.asarray(block.velocity, dtype=float)
            if gradient is not None:
                velocity = velocity + gradient @ X
            for comp in block.components:
                dof = 2 * int(node) + comp
                rate = float(velocity[comp]) if block.kind is BoundaryKind.VELOCITY else 0.0
                if dof in prescribed and prescribed[dof] != (block.value[comp], rate):
                    logger.debug("Boundary prescription overridden", dof=dof, nodeset=block.nodeset)
                prescribed[dof] = (float(block.value[comp]), rate)
    return prescribed


def build_bc(
    fmesh: FracturedMesh,
    blocks: Sequence[BoundaryBlock],
    tau: float,
    dt: float,
) -> BoundaryOperator:
    """Boundary operator at step index ``tau`` (fractional for midpoints).

    Velocity-constrained DOFs move as u_BC(tau) = u_BC(0) + tau * dt * v.
    """
    prescribed = _prescriptions(fmesh, blocks)
    n_dof = fmesh.n_dof
    constrained = np.array(sorted(prescribed), dtype=np.int64)
    mask = np.ones(n_dof, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)

    u_bc = np.zeros(n_dof)
    v_bc = np.zeros(n_dof)
    if constrained.size:
        values = np.array([prescribed[d] for d in constrained.tolist()])
        v_bc[constrained] = values[:, 1]
        u_bc[constrained] = values[:, 0] + tau * dt * values[:, 1]
    return BoundaryOperator(n_dof=n_dof, free=free, constrained=constrained, u_bc=u_bc, v_bc=v_bc)


@dataclass(frozen=True)
class LinearInequalities:
    """Rows E u >= a of node-pair contact, kept in full-DOF form with a free-DOF view.

    With u = R x + u_BC the free-DOF form is E = E_full R and
    a = a_full - E_full u_BC, so E x - a equals the current gap.
    """

    E_full: sparse.csr_matrix
    a_full: np.ndarray
    tags: Tuple[str, ...]
    pairs: np.ndarray  # (n_LI, 2) node copies (side 1, side 2)
    axis: np.ndarray  # (n_LI,)
    E: sparse.csr_matrix
    a: np.ndarray

    @property
    def n_li(self) -> int:
        return len(self.a_full)

    def slack(self, u: np.ndarray) -> np.ndarray:
        """Current gaps E_full u - a_full."""
        return self.E_full @ u - self.a_full

    def restrict(self, bc: BoundaryOperator) -> "LinearInequalities":
        """Re-express the rows in the free coordinates of ``bc``."""
        return LinearInequalities(
            E_full=self.E_full,
            a_full=self.a_full,
            tags=self.tags,
            pairs=self.pairs,
            axis=self.axis,
            E=(self.E_full @ bc.R).tocsr(),
            a=self.a_full - self.E_full @ bc.u_bc,
        )

    def rows_tagged(self, prefix: str) -> np.ndarray:
        """Row indices whose provenance tag starts with ``prefix``."""
        return np.array([k for k, t in enumerate(self.tags) if t.startswith(prefix)], dtype=np.int64)


def _matched_pairs(source: Mesh, block: ContactBlock) -> List[Tuple[int, int]]:
    """Node id pairs of side1 and side2 whose transverse coordinates agree."""
    assert block.side1 is not None and block.side2 is not None
    other = 1 - block.axis
    nodes1 = source.nodesets[block.side1]
    nodes2 = source.nodesets[block.side2]
    c1 = source.nodes[nodes1, other]
    c2 = source.nodes[nodes2, other]
    order = np.argsort(c2, kind="stable")
    c2_sorted = c2[order]
    pairs: List[Tuple[int, int]] = []
    for n1, c in zip(nodes1, c1):
        k = int(np.searchsorted(c2_sorted, c))
        for j in (k - 1, k):
            if 0 <= j < len(c2_sorted) and abs(c2_sorted[j] - c) <= block.match_tolerance:
                pairs.append((int(source.node_ids[n1]), int(source.node_ids[nodes2[order[j]]])))
                break
    if not pairs:
        raise ContactPairError(
            f"contact {block.name}: no node of {block.side1} faces a node of {block.side2}",
            {"match_tolerance": block.match_tolerance},
        )
    logger.debug("Contact sides matched", contact=block.name, pairs=len(pairs))
    return pairs


def build_contact(
    fmesh: FracturedMesh,
    blocks: Sequence[ContactBlock],
    bc: Optional[BoundaryOperator] = None,
) -> LinearInequalities:
    """One row (u2 - u1)[axis] >= -gap per listed node pair.

    A block without pairs joins each side-1 node to the side-2 node at the same
    transverse coordinate.

    Each pair joins the representative copies of two source nodes; the row
    evaluates to the current gap, which equals ``gap`` in the reference
    configuration.
    """
    source = fmesh.source
    rows: List[Tuple[int, int, int, float]] = []
    tags: List[str] = []
    for block in blocks:
        for name in (block.side1, block.side2):
            if name is not None and name not in source.nodesets:
                raise UnknownNodeSetError(name, {"known": sorted(source.nodesets)})
        side1 = set(source.nodesets[block.side1].tolist()) if block.side1 else None
        side2 = set(source.nodesets[block.side2].tolist()) if block.side2 else None
        pairs = block.pairs or _matched_pairs(source, block)
        for k, (id1, id2) in enumerate(pairs):
            try:
                n1, n2 = source.node_index(id1), source.node_index(id2)
            except KeyError as e:
                raise ContactPairError(f"contact {block.name}: {e.args[0]}") from None
            if n1 == n2:
                raise ContactPairError(f"contact {block.name}: pair ({id1}, {id2}) repeats a node")
            if (side1 is not None and n1 not in side1) or (side2 is not None and n2 not in side2):
                raise ContactPairError(
                    f"contact {block.name}: pair ({id1}, {id2}) does not join side1 to side2"
                )
            shared = np.any(
                np.isin(source.elements, [n1]).any(axis=1) & np.isin(source.elements, [n2]).any(axis=1)
            )
            if shared:
                raise ContactPairError(
                    f"contact {block.name}: nodes {id1} and {id2} lie on the same body side"
                )
            c1, c2 = int(fmesh.representative[n1]), int(fmesh.representative[n2])
            gap = block.gap
            if gap is None:
                gap = float(fmesh.nodes[c2, block.axis] - fmesh.nodes[c1, block.axis])
            rows.append((c1, c2, block.axis, gap))
            tags.append(f"{block.name}:{k}")

    n_li = len(rows)
    n_dof = fmesh.n_dof
    if n_li:
        c1s, c2s, axes, gaps = (np.array(col) for col in zip(*rows))
        c1s, c2s, axes = c1s.astype(np.int64), c2s.astype(np.int64), axes.astype(np.int64)
        r = np.arange(n_li)
        E_full = sparse.csr_matrix(
            (np.concatenate([-np.ones(n_li), np.ones(n_li)]),
             (np.concatenate([r, r]), np.concatenate([2 * c1s + axes, 2 * c2s + axes]))),
            shape=(n_li, n_dof),
        )
        a_full = -np.asarray(gaps, dtype=float)
        pairs = np.stack([c1s, c2s], axis=1)
    else:
        E_full = sparse.csr_matrix((0, n_dof))
        a_full = np.zeros(0)
        pairs = np.zeros((0, 2), dtype=np.int64)
        axes = np.zeros(0, dtype=np.int64)

    rows_form = LinearInequalities(
        E_full=E_full,
        a_full=a_full,
        tags=tuple(tags),
        pairs=pairs,
        axis=axes,
        E=E_full,
        a=a_full,
    )
    if n_li:
        logger.info("Contact rows built", rows=n_li, blocks=[b.name for b in blocks])
    return rows_form.restrict(bc) if bc is not None else rows_form
