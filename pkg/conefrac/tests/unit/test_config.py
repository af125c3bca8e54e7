"""Unit tests for process settings and run configuration."""

from pathlib import Path

import pytest
from pydantic import ValidationError

from conefrac.core.config import AppSettings
from conefrac.core.errors import ConfigurationError
from conefrac.domain.models import (
    BoundaryBlock,
    BoundaryKind,
    ContactBlock,
    LoadBlock,
    MaterialBlock,
    RunConfig,
    SolverBlock,
)


def test_app_settings_defaults():
    """Test default settings."""
    settings = AppSettings()

    assert settings.app_env == "dev"
    assert settings.log_level == "INFO"
    assert settings.threads is None
    assert settings.metrics_textfile is True
    assert settings.is_dev is True


def test_app_settings_from_environment(monkeypatch):
    """Test CONEFRAC_ prefixed environment variables."""
    monkeypatch.setenv("CONEFRAC_LOG_LEVEL", "debug")
    monkeypatch.setenv("CONEFRAC_THREADS", "2")
    monkeypatch.setenv("CONEFRAC_APP_ENV", "prod")

    settings = AppSettings()

    assert settings.log_level == "DEBUG"
    assert settings.threads == 2
    assert settings.is_prod is True


def test_app_settings_validation():
    """Test settings validation."""
    with pytest.raises(ValidationError):
        AppSettings(log_level="LOUD")
    with pytest.raises(ValidationError):
        AppSettings(threads=0)


class TestRunConfig:
    """Test TOML run configuration loading."""

    def test_patch_fixture_loads(self, patch_config, fixtures_dir):
        """Test the patch configuration and mesh path resolution."""
        assert patch_config.quasistatic is True
        assert patch_config.n_step == 16
        assert Path(patch_config.mesh) == fixtures_dir / "strip.mesh"
        assert patch_config.cohesive.delta_u == pytest.approx(2e-6)
        assert patch_config.boundary[0].kind is BoundaryKind.VELOCITY
        assert patch_config.boundary[0].components == [0]
        assert patch_config.boundary[0].velocity_gradient == ((8.5e-6, 0.0), (0.0, 0.0))
        assert patch_config.boundary[1].kind is BoundaryKind.FIXED
        assert patch_config.output.load_component == 0

    def test_missing_file(self, tmp_path):
        """Test that a missing file is a configuration error with exit code 2."""
        with pytest.raises(ConfigurationError) as exc:
            RunConfig.from_toml(tmp_path / "missing.toml")

        assert "config not found" in exc.value.message
        assert exc.value.exit_code == 2

    def test_invalid_toml(self, tmp_path):
        """Test that malformed TOML is reported."""
        path = tmp_path / "bad.toml"
        path.write_text("mesh = \n")

        with pytest.raises(ConfigurationError, match="not valid TOML"):
            RunConfig.from_toml(path)

    def test_validation_errors_are_collected(self, tmp_path):
        """Test that field constraints surface as ConfigurationError details."""
        path = tmp_path / "neg.toml"
        path.write_text(
            'mesh = "m.mesh"\ndt = -1.0\nn_step = 3\n\n[[materials]]\nE = 1.0\nnu = 0.2\nrho = 1.0\n'
        )

        with pytest.raises(ConfigurationError) as exc:
            RunConfig.from_toml(path)

        locations = [tuple(err["loc"]) for err in exc.value.details["errors"]]
        assert ("dt",) in locations

    def test_mu_schedule(self, patch_config):
        """Test the geometric barrier schedule."""
        schedule = patch_config.mu_schedule

        assert len(schedule) == 6
        assert schedule[0] == pytest.approx(5e-5)
        assert schedule[-1] == pytest.approx(5e-5 * 0.125**5)

    def test_single_catch_all_material(self):
        """Test that two materials without element sets are rejected."""
        with pytest.raises(ValidationError):
            RunConfig(
                mesh="m.mesh",
                dt=1.0,
                n_step=1,
                materials=[
                    MaterialBlock(E=1.0, nu=0.2, rho=1.0),
                    MaterialBlock(E=2.0, nu=0.2, rho=1.0),
                ],
            )


class TestBlocks:
    """Test validation of individual configuration blocks."""

    def test_material_needs_one_parameterization(self):
        """Test that exactly one of (E, nu) and (c1, beta) is given."""
        with pytest.raises(ValidationError):
            MaterialBlock(rho=1.0)
        with pytest.raises(ValidationError):
            MaterialBlock(E=1.0, nu=0.2, c1=1.0, beta=1.0, rho=1.0)
        assert MaterialBlock(c1=1.0, beta=0.5, rho=1.0).E is None

    def test_poisson_ratio_range(self):
        """Test that nu must lie in (0, 0.5)."""
        with pytest.raises(ValidationError):
            MaterialBlock(E=1.0, nu=0.5, rho=1.0)

    def test_traction_needs_nodeset(self):
        """Test the traction load target check."""
        with pytest.raises(ValidationError):
            LoadBlock(kind="traction", value=(1.0, 0.0))
        assert LoadBlock(kind="body", value=(0.0, -9.81)).nodeset is None

    def test_axis_names(self):
        """Test that axes accept names and indices."""
        assert ContactBlock(name="c", axis="y", pairs=[(1, 2)]).axis == 1
        assert BoundaryBlock(nodeset="n", components="x").components == [0]
        assert BoundaryBlock(nodeset="n", components=["y", 0]).components == [0, 1]
        with pytest.raises(ValidationError):
            ContactBlock(name="c", axis="z", pairs=[(1, 2)])

    def test_contact_needs_pairs_or_sides(self):
        """Test that a contact block names its pairs or both sides to match."""
        assert ContactBlock(name="c", side1="a", side2="b").pairs == []
        with pytest.raises(ValidationError):
            ContactBlock(name="c", side1="a")

    def test_quadrature_rule(self):
        """Test that only tabulated triangle rules are accepted."""
        assert SolverBlock(bulk_quadrature=6).bulk_quadrature == 6
        with pytest.raises(ValidationError):
            SolverBlock(bulk_quadrature=4)

    def test_unknown_keys_rejected(self):
        """Test that typos in configuration keys are caught."""
        with pytest.raises(ValidationError):
            SolverBlock(mu_inital=1e-4)
