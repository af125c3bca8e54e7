"""Unit tests for the energy ledger."""

import numpy as np
import pytest
from scipy import sparse

from conefrac.domain.models import BulkModel, MaterialBlock
from conefrac.services.assembly.bulk import BulkAssembler
from conefrac.services.assembly.interfaces import InterfaceAssembler
from conefrac.services.energy import (
    CSV_COLUMNS,
    EnergyLedger,
    LedgerRow,
    balance_report,
    boundary_work,
    cohesive_split,
    contact_work,
    kinetic_energy,
    load_deflection,
)
from conefrac.services.material import CohesiveParams, cohesive_g
from conefrac.services.stepper import Simulation, StepRecord

LINEAR = MaterialBlock(E=1.0e3, nu=0.25, rho=1.0, model=BulkModel.LINEAR)
LAW = CohesiveParams(sigma_c=2.0, G_c=1.0)


def _record(step, u_mid, n_i=0, reactions=None, constrained=None, openings=None, d_prev=None, v=None):
    n = len(u_mid)
    zeros = np.zeros(n)
    d_prev = np.zeros(n_i) if d_prev is None else d_prev
    return StepRecord(
        step=step,
        time=float(step),
        u_mid=u_mid,
        u=u_mid,
        v_prev=zeros if v is None else v,
        v=zeros if v is None else v,
        d_prev=d_prev,
        d=d_prev,
        openings=np.zeros((n_i, 2)) if openings is None else openings,
        s0=np.zeros(n_i),
        reactions=zeros if reactions is None else reactions,
        contact_forces=zeros,
        contact_slack=np.zeros(0),
        constrained=np.zeros(0, dtype=np.int64) if constrained is None else constrained,
    )


def _row(residual, w_bc, strain):
    return LedgerRow(0, 0.0, 0.0, strain, 0.0, 0.0, w_bc, 0.0, 0.0, residual)


class TestEnergyTerms:
    """Test the individual energy and work terms."""

    def test_kinetic_energy(self):
        """Test 1/2 v^T M v at the velocity midpoint."""
        M = sparse.csr_matrix([[2.0]])

        assert kinetic_energy(np.array([3.0]), np.array([3.0]), M) == pytest.approx(9.0)
        assert kinetic_energy(np.array([2.0]), np.array([4.0]), M) == pytest.approx(9.0)
        assert kinetic_energy(np.array([2.0]), np.array([4.0]), None) == 0.0

    @pytest.mark.parametrize(
        "delta, d, recoverable, dissipated",
        [
            (0.0, 0.0, 0.0, 0.0),
            (1.0, 0.0, 1.0, 0.0),
            (0.5, 0.5, 0.5, 0.25),
            (1.0, 1.0, 0.0, 1.0),
            (3.0, 1.0, 0.0, 1.0),
            (0.25, 0.5, 0.25, 0.25),
        ],
    )
    def test_cohesive_split(self, delta, d, recoverable, dissipated):
        """Test recoverable and dissipated interface energy for sigma_c = 2, G_c = 1."""
        rec, dis = cohesive_split(np.array([delta]), np.array([d]), LAW, np.array([1.0]))

        assert rec == pytest.approx(recoverable)
        assert dis == pytest.approx(dissipated)

    @pytest.mark.parametrize("d", [0.1, 0.4, 0.77])
    def test_split_on_loading_curve(self, d):
        """Test that rec + dis equals the undamaged energy when delta = d."""
        rec, dis = cohesive_split(np.array([d]), np.array([d]), LAW, np.array([0.5]))
        g, _, _ = cohesive_g(np.array([d]), np.array([0.0]), LAW)

        assert rec + dis == pytest.approx(0.5 * g[0])

    def test_boundary_work_trapezoid(self):
        """Test averaged forces times the increment over the listed DOFs."""
        F_a = np.array([1.0, 2.0, 5.0])
        F_b = np.array([3.0, 4.0, 7.0])
        u_a = np.zeros(3)
        u_b = np.ones(3)

        assert boundary_work(F_a, F_b, u_a, u_b, np.array([0, 1])) == pytest.approx(5.0)
        assert boundary_work(F_a, F_b, u_a, u_b, np.array([], dtype=np.int64)) == 0.0

    def test_contact_work(self):
        """Test the whole-mesh and restricted sums."""
        F_a = np.array([-1.0, 1.0])
        F_b = np.array([-3.0, 3.0])
        u_a = np.zeros(2)
        u_b = np.array([0.5, 0.1])

        assert contact_work(F_a, F_b, u_a, u_b) == pytest.approx(-1.0 + 0.2)
        assert contact_work(F_a, F_b, u_a, u_b, np.array([1])) == pytest.approx(0.2)


class TestBalanceReport:
    """Test the residual summary."""

    def test_relative_to_larger_scale(self):
        """Test division by max(peak |work|, peak stored)."""
        report = balance_report([_row(0.0, 0.0, 0.0), _row(0.1, 10.0, 5.0), _row(-0.3, 4.0, 20.0)])

        assert report.scale == 20.0
        np.testing.assert_allclose(report.relative, [0.0, 0.005, -0.015])
        assert report.max_relative == pytest.approx(0.015)

    def test_empty(self):
        """Test the empty ledger."""
        report = balance_report([])

        assert report.max_relative == 0.0
        assert report.scale == 0.0

    def test_row_values_match_columns(self):
        """Test that a row flattens to one value per CSV column."""
        row = LedgerRow(3, 0.3, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)

        assert len(row.values()) == len(CSV_COLUMNS)
        assert row.fe_total == 7.0
        assert row.work == 18.0
        assert row.stored == 10.0


class TestEnergyLedger:
    """Test accumulation over step records."""

    def test_linear_path_balances_exactly(self, strip_fmesh, rng):
        """Test that trapezoid work of linear forces matches the strain energy change."""
        bulk = BulkAssembler(strip_fmesh, [LINEAR])
        direction = 1e-3 * rng.standard_normal(strip_fmesh.n_dof)
        every = np.arange(strip_fmesh.n_dof)
        ledger = EnergyLedger(bulk=bulk, mass=None, f_ext=np.zeros(strip_fmesh.n_dof))

        for step, scale in enumerate([0.0, 0.5, 1.0, 2.0]):
            u = scale * direction
            ledger.record(_record(step, u, reactions=bulk.energy(u, 1).gradient, constrained=every))

        rows = ledger.rows
        assert rows[-1].strain == pytest.approx(bulk.energy(2.0 * direction, 0).value)
        assert rows[-1].w_bc == pytest.approx(rows[-1].strain, rel=1e-10)
        assert ledger.report().max_relative <= 1e-10

    def test_external_work_and_thickness(self, strip_fmesh):
        """Test f_ext . du accumulation and the thickness multiplier."""
        bulk = BulkAssembler(strip_fmesh, [LINEAR])
        f_ext = np.zeros(strip_fmesh.n_dof)
        f_ext[0] = 2.0
        u1 = np.zeros(strip_fmesh.n_dof)
        u1[0] = 0.25
        thin = EnergyLedger(bulk=bulk, mass=None, f_ext=f_ext)
        thick = EnergyLedger(bulk=bulk, mass=None, f_ext=f_ext, thickness=3.0)

        for ledger in (thin, thick):
            ledger.extend([_record(0, np.zeros(strip_fmesh.n_dof)), _record(1, u1)])

        assert thin.rows[-1].w_ext == pytest.approx(0.5)
        assert thick.rows[-1].w_ext == pytest.approx(1.5)
        np.testing.assert_allclose(thick.rows[-1].values()[2:], 3.0 * np.array(thin.rows[-1].values()[2:]))

    def test_kinetic_energy_with_mass(self, strip_fmesh):
        """Test KE from the record's two velocities."""
        bulk = BulkAssembler(strip_fmesh, [LINEAR])
        M = sparse.identity(strip_fmesh.n_dof, format="csr")
        ledger = EnergyLedger(bulk=bulk, mass=M, f_ext=np.zeros(strip_fmesh.n_dof))
        v = np.full(strip_fmesh.n_dof, 2.0)

        row = ledger.record(_record(0, np.zeros(strip_fmesh.n_dof), v=v))

        assert row.kinetic == pytest.approx(0.5 * 4.0 * strip_fmesh.n_dof)
        assert row.residual == 0.0

    def test_cohesive_energy_uses_previous_damage(self, strip_fmesh):
        """Test the FE split from the record's openings and d_prev."""
        bulk = BulkAssembler(strip_fmesh, [LINEAR])
        interfaces = InterfaceAssembler(strip_fmesh)
        ledger = EnergyLedger(
            bulk=bulk, mass=None, f_ext=np.zeros(strip_fmesh.n_dof), interfaces=interfaces, cohesive=LAW
        )
        n_i = interfaces.n_i
        openings = np.column_stack([np.full(n_i, 0.3), np.zeros(n_i)])
        d_prev = np.full(n_i, 0.5)

        row = ledger.record(_record(0, np.zeros(strip_fmesh.n_dof), n_i, openings=openings, d_prev=d_prev))
        rec, dis = cohesive_split(np.full(n_i, 0.3), d_prev, LAW, interfaces.omega.ravel())

        assert row.fe_recoverable == pytest.approx(rec)
        assert row.fe_dissipated == pytest.approx(dis)
        assert row.fe_dissipated == pytest.approx(1.0 * 0.25)

    def test_part_restriction(self, strip_fmesh, rng):
        """Test that a part sees its own strain energy and no cut interface."""
        bulk = BulkAssembler(strip_fmesh, [LINEAR])
        interfaces = InterfaceAssembler(strip_fmesh)
        ledger = EnergyLedger(
            bulk=bulk,
            mass=None,
            f_ext=np.zeros(strip_fmesh.n_dof),
            interfaces=interfaces,
            cohesive=LAW,
            elements=np.array([0]),
        )
        u = 1e-3 * rng.standard_normal(strip_fmesh.n_dof)
        n_i = interfaces.n_i
        openings = np.column_stack([np.full(n_i, 0.3), np.zeros(n_i)])

        row = ledger.record(_record(0, u, n_i, openings=openings, d_prev=np.full(n_i, 0.5)))

        assert row.strain == pytest.approx(bulk.element_energies(u)[0])
        assert row.fe_total == 0.0

    def test_for_simulation(self, patch_config):
        """Test construction from a configured run."""
        sim = Simulation(patch_config)

        ledger = EnergyLedger.for_simulation(sim)

        assert ledger.mass is None
        assert ledger.thickness == 1.0
        assert ledger.elements is None
        assert ledger.interfaces is sim.interfaces


def test_load_deflection():
    """Test the monitored displacement and summed reaction."""
    u = np.array([0.0, 0.1, 0.2, 0.3])
    reactions = np.array([0.0, 5.0, 0.0, 7.0])
    record = _record(4, u, reactions=reactions, constrained=np.array([1, 3]))

    assert load_deflection(record, np.array([1, 3]), 2) == (pytest.approx(0.2), pytest.approx(12.0))
