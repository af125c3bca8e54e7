"""Energy balance at half-steps: stored energies against cumulative work.

Every quantity is evaluated at the midpoint of a step. Work terms are
trapezoid sums of the time-averaged force over the midpoint displacement
increment. The balance residual is

    W_bc + W_contact + W_ext - (dKE + dSE + dFE)

measured from the initial record.
"""

from dataclasses import astuple, dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy import sparse

from conefrac.core.logging import get_structlog_logger
from conefrac.services.assembly.bulk import BulkAssembler, mass_matrix
from conefrac.services.assembly.interfaces import InterfaceAssembler
from conefrac.services.material import CohesiveParams, cohesive_g
from conefrac.services.stepper import Simulation, StepRecord

logger = get_structlog_logger(__name__)

CSV_COLUMNS = (
    "step",
    "time_s",
    "KE_J",
    "SE_J",
    "FE_rec_J",
    "FE_dis_J",
    "W_bc_J",
    "W_contact_J",
    "W_ext_J",
    "residual_J",
)


def kinetic_energy(v_a: np.ndarray, v_b: np.ndarray, M: Optional[sparse.spmatrix]) -> float:
    """1/2 v^T M v at the velocity midpoint v = (v_a + v_b)/2; zero without a mass matrix."""
    if M is None:
        return 0.0
    v = 0.5 * (np.asarray(v_a, dtype=float) + np.asarray(v_b, dtype=float))
    return 0.5 * float(v @ (M @ v))


def cohesive_split(
    delta: np.ndarray, d: np.ndarray, params: CohesiveParams, omega: np.ndarray
) -> Tuple[float, float]:
    """(recoverable, dissipated) interface energy summed over Gauss points.

    Unloading to the origin along the damaged branch recovers omega g(delta; d).
    The area between the undamaged and damaged loading curves up to d,
    omega sigma_c d^2 / (2 delta_u), is gone for good.
    """
    delta = np.asarray(delta, dtype=float)
    d = np.asarray(d, dtype=float)
    g, _, _ = cohesive_g(delta, d, params)
    recoverable = float(np.sum(omega * g))
    dissipated = float(np.sum(omega * params.sigma_c * d**2 / (2.0 * params.delta_u)))
    return recoverable, dissipated


def boundary_work(
    F_a: np.ndarray, F_b: np.ndarray, u_a: np.ndarray, u_b: np.ndarray, dofs: np.ndarray
) -> float:
    """<(F_a + F_b)/2, u_b - u_a> over the prescribed DOFs."""
    if not len(dofs):
        return 0.0
    F = 0.5 * (F_a[dofs] + F_b[dofs])
    return float(F @ (u_b[dofs] - u_a[dofs]))


def contact_work(
    F_a: np.ndarray, F_b: np.ndarray, u_a: np.ndarray, u_b: np.ndarray, dofs: Optional[np.ndarray] = None
) -> float:
    """Work of the contact barrier forces over one half-step pair.

    ``dofs`` restricts the sum to one part; the forces on both sides of a pair
    are summed otherwise.
    """
    index = slice(None) if dofs is None else dofs
    F = 0.5 * (F_a[index] + F_b[index])
    return float(F @ (u_b[index] - u_a[index]))


@dataclass(frozen=True)
class LedgerRow:
    """Energies at one half-step; work terms are cumulative."""

    step: int
    time: float
    kinetic: float
    strain: float
    fe_recoverable: float
    fe_dissipated: float
    w_bc: float
    w_contact: float
    w_ext: float
    residual: float

    @property
    def fe_total(self) -> float:
        return self.fe_recoverable + self.fe_dissipated

    @property
    def work(self) -> float:
        return self.w_bc + self.w_contact + self.w_ext

    @property
    def stored(self) -> float:
        return self.kinetic + self.strain + self.fe_total

    def values(self) -> Tuple[float, ...]:
        return astuple(self)


@dataclass(frozen=True)
class BalanceReport:
    """Residual series, absolute and relative to the larger of peak work and peak stored energy."""

    residual: np.ndarray
    relative: np.ndarray
    scale: float

    @property
    def max_relative(self) -> float:
        return float(np.max(np.abs(self.relative))) if self.relative.size else 0.0


def balance_report(rows: Iterable[LedgerRow]) -> BalanceReport:
    rows = list(rows)
    if not rows:
        return BalanceReport(np.zeros(0), np.zeros(0), 0.0)
    residual = np.array([r.residual for r in rows])
    work = np.array([abs(r.work) for r in rows])
    stored = np.array([r.stored for r in rows])
    scale = float(max(work.max(), np.abs(stored).max()))
    relative = residual / scale if scale > 0 else np.zeros_like(residual)
    return BalanceReport(residual, relative, scale)


@dataclass
class _Previous:
    record: StepRecord
    stored0: Tuple[float, float, float]


@dataclass
class EnergyLedger:
    """Accumulates a LedgerRow per StepRecord, optionally restricted to one part.

    Attributes:
        elements: Element indices of the part, None for the whole mesh.
        thickness: Multiplier applied to every reported energy.
    """

    bulk: BulkAssembler
    mass: Optional[sparse.spmatrix]
    f_ext: np.ndarray
    interfaces: Optional[InterfaceAssembler] = None
    cohesive: Optional[CohesiveParams] = None
    elements: Optional[np.ndarray] = None
    thickness: float = 1.0
    rows: List[LedgerRow] = field(default_factory=list)

    def __post_init__(self) -> None:
        fmesh = self.bulk.fmesh
        if self.elements is None:
            self._dofs: Optional[np.ndarray] = None
            self._points = slice(None)
        else:
            self._dofs = np.unique(self.bulk.dofs[self.elements])
            inside = np.isin(fmesh.interfaces.elements, self.elements).all(axis=1)
            n_g = self.interfaces.n_g if self.interfaces else fmesh.n_g
            self._points = np.repeat(inside, n_g)
        self._previous: Optional[_Previous] = None
        self._w = np.zeros(3)

    @classmethod
    def for_simulation(cls, sim: Simulation) -> "EnergyLedger":
        """Ledger over the part named in the output block, or the whole mesh."""
        output = sim.config.output
        elements = sim.fmesh.elementset(output.energy_part) if output.energy_part else None
        mass = sim.mass
        if mass is not None and elements is not None:
            mass = mass_matrix(sim.fmesh, sim.config.materials, elements)
        return cls(
            bulk=sim.bulk,
            mass=mass,
            f_ext=sim.f_ext,
            interfaces=sim.interfaces,
            cohesive=sim.cohesive,
            elements=elements,
            thickness=output.thickness,
        )

    def _strain(self, u: np.ndarray) -> float:
        energies = self.bulk.element_energies(u)
        return float(energies.sum() if self.elements is None else energies[self.elements].sum())

    def _cohesive(self, record: StepRecord) -> Tuple[float, float]:
        if self.interfaces is None or self.cohesive is None or not record.d.size:
            return 0.0, 0.0
        omega = self.interfaces.omega.ravel()
        delta = record.effective_opening
        d = record.d_prev
        points = self._points
        return cohesive_split(delta[points], d[points], self.cohesive, omega[points])

    def _restrict(self, dofs: np.ndarray) -> np.ndarray:
        return dofs if self._dofs is None else np.intersect1d(dofs, self._dofs)

    def record(self, rec: StepRecord) -> LedgerRow:
        """Append the row of one step record; records must arrive in step order."""
        kinetic = kinetic_energy(rec.v_prev, rec.v, self.mass)
        strain = self._strain(rec.u_mid)
        fe_rec, fe_dis = self._cohesive(rec)

        prev = self._previous
        if prev is None:
            self._previous = _Previous(rec, (kinetic, strain, fe_rec + fe_dis))
        else:
            a = prev.record
            self._w += (
                boundary_work(a.reactions, rec.reactions, a.u_mid, rec.u_mid, self._restrict(rec.constrained)),
                contact_work(a.contact_forces, rec.contact_forces, a.u_mid, rec.u_mid, self._dofs),
                contact_work(self.f_ext, self.f_ext, a.u_mid, rec.u_mid, self._dofs),
            )
            prev.record = rec

        assert self._previous is not None
        ke0, se0, fe0 = self._previous.stored0
        w_bc, w_contact, w_ext = self._w
        residual = w_bc + w_contact + w_ext - ((kinetic - ke0) + (strain - se0) + (fe_rec + fe_dis - fe0))
        k = self.thickness
        row = LedgerRow(
            step=rec.step,
            time=rec.time,
            kinetic=k * kinetic,
            strain=k * strain,
            fe_recoverable=k * fe_rec,
            fe_dissipated=k * fe_dis,
            w_bc=k * w_bc,
            w_contact=k * w_contact,
            w_ext=k * w_ext,
            residual=k * residual,
        )
        if self.rows and row.fe_dissipated < self.rows[-1].fe_dissipated:
            logger.warning("Dissipated energy decreased", step=rec.step)
        self.rows.append(row)
        logger.debug(
            "Energy ledger row",
            step=rec.step,
            kinetic=row.kinetic,
            strain=row.strain,
            fe_total=row.fe_total,
            work=row.work,
            residual=row.residual,
        )
        return row

    def extend(self, records: Iterable[StepRecord]) -> List[LedgerRow]:
        return [self.record(r) for r in records]

    def report(self) -> BalanceReport:
        return balance_report(self.rows)


def load_deflection(record: StepRecord, load_dofs: np.ndarray, deflection_dof: int) -> Tuple[float, float]:
    """(deflection, load) of one record: a monitored midpoint displacement and the summed reaction."""
    return float(record.u_mid[deflection_dof]), float(record.reactions[load_dofs].sum())
