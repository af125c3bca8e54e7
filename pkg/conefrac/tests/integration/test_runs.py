"""Whole runs through Simulation.run without interfaces."""

import numpy as np
import pytest

from conefrac.domain.models import BoundaryBlock, BulkModel, InitialVelocityBlock, MaterialBlock, RunConfig
from conefrac.services.energy import EnergyLedger, kinetic_energy
from conefrac.services.stepper import Simulation

pytestmark = pytest.mark.integration


def _strip(fixtures_dir, **update) -> RunConfig:
    fields = {
        "mesh": str(fixtures_dir / "strip.mesh"),
        "dt": 0.01,
        "n_step": 40,
        "materials": [MaterialBlock(E=1.0e3, nu=0.25, rho=1.0, model=BulkModel.LINEAR)],
    }
    fields.update(update)
    return RunConfig(**fields)


def _momentum(sim, v):
    p = sim.mass @ v
    return np.array([p[0::2].sum(), p[1::2].sum()])


class TestZeroSteps:
    """Test a run with nothing to solve."""

    def test_only_initial_record(self, patch_config):
        """Test that n_step = 0 yields the step-0 record and nothing else."""
        sim = Simulation(patch_config.model_copy(update={"n_step": 0}))

        records = list(sim.run())

        assert [r.step for r in records] == [0]
        np.testing.assert_allclose(records[0].u, 0.0)

    def test_ledger_of_initial_record(self, patch_config):
        """Test that the single ledger row balances trivially."""
        sim = Simulation(patch_config.model_copy(update={"n_step": 0}))
        ledger = EnergyLedger.for_simulation(sim)

        rows = ledger.extend(sim.run())

        assert len(rows) == 1
        assert rows[0].residual == 0.0
        assert ledger.report().max_relative == 0.0


class TestFreeFlight:
    """Test an unconstrained strip thrown with a nonuniform velocity."""

    def test_momentum_conserved(self, fixtures_dir):
        """Test that linear momentum stays at its initial value while the strip deforms."""
        config = _strip(
            fixtures_dir,
            materials=[MaterialBlock(E=1.0e3, nu=0.25, rho=1.0)],
            initial_velocity=[
                InitialVelocityBlock(velocity=(1.0, 0.5)),
                InitialVelocityBlock(nodeset="pull", velocity=(2.0, -0.5)),
            ],
        )
        sim = Simulation(config)

        records = list(sim.run())
        p0 = _momentum(sim, records[0].v)

        assert len(sim.step_bc(1).constrained) == 0
        for record in records[1:]:
            np.testing.assert_allclose(_momentum(sim, record.v), p0, rtol=1e-6, atol=1e-9 * np.abs(p0).max())
        assert max(sim.bulk.energy(r.u, 0).value for r in records) > 0.0


class TestOscillator:
    """Test a clamped strip ringing after an initial kick."""

    @pytest.fixture
    def ringing(self, fixtures_dir):
        config = _strip(
            fixtures_dir,
            boundary=[BoundaryBlock(nodeset="clamp")],
            initial_velocity=[InitialVelocityBlock(nodeset="pull", velocity=(1.0e-3, 0.0))],
        )
        sim = Simulation(config)
        return sim, list(sim.run())

    def test_energy_conserved(self, ringing):
        """Test that kinetic plus strain energy at full steps keeps its initial value."""
        sim, records = ringing

        def total(record):
            return kinetic_energy(record.v, record.v, sim.mass) + sim.bulk.energy(record.u, 0).value

        energy0 = total(records[0])
        assert energy0 > 0.0
        for record in records[1:]:
            assert total(record) == pytest.approx(energy0, rel=1e-6)

    def test_oscillates(self, ringing):
        """Test that the kicked nodes turn around at least once."""
        sim, records = ringing
        pull = 2 * sim.fmesh.nodeset("pull")
        velocity = np.array([r.v[pull].mean() for r in records])

        assert velocity.max() > 0.0
        assert velocity.min() < 0.0
