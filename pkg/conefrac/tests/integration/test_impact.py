"""Elastic impact of two blocks through node-pair contact."""

from pathlib import Path

import numpy as np
import pytest

from conefrac.domain.models import RunConfig
from conefrac.services.energy import EnergyLedger
from conefrac.services.stepper import Simulation

pytestmark = [pytest.mark.integration, pytest.mark.slow]

FIXTURES = Path(__file__).parents[1] / "fixtures"


@pytest.fixture(scope="module")
def impact_run():
    config = RunConfig.from_toml(FIXTURES / "impact.toml")
    sim = Simulation(config)
    records = list(sim.run())
    part = config.model_copy(update={"output": config.output.model_copy(update={"energy_part": "target"})})
    target = EnergyLedger.for_simulation(Simulation(part, fmesh=sim.fmesh))
    target.extend(records)
    return sim, records, target


class TestImpact:
    """Test contact and energy conservation over the whole run."""

    def test_mesh_size(self, impact_run):
        """Test the two 24-element blocks and their nine contact rows."""
        sim, records, _ = impact_run

        assert sim.fmesh.n_elements == 48
        assert sim.contact.n_li == 9
        assert len(records) == sim.config.n_step + 1

    def test_no_interpenetration(self, impact_run):
        """Test that every step keeps every contact row open."""
        _, records, _ = impact_run

        for record in records[1:]:
            assert np.all(record.contact_slack > 0.0)

    def test_momentum_transferred(self, impact_run):
        """Test that the target picks up velocity after contact."""
        sim, records, _ = impact_run
        target = 2 * sim.fmesh.nodeset("target")

        assert records[-1].v[target].mean() > 0.1

    def test_energy_balance(self, impact_run):
        """Test |contact work - (dKE + dSE)| on the target within 3% of the peak work done on it."""
        _, _, target = impact_run
        work = np.array([row.work for row in target.rows])
        residual = np.array([row.residual for row in target.rows])
        peak = float(np.abs(work).max())

        assert peak >= 0.05
        assert np.abs(residual).max() <= 0.03 * peak
