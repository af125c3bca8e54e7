"""Run configuration models for conefrac."""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from conefrac.core.errors import ConfigurationError

Vector2 = Tuple[float, float]
Matrix2 = Tuple[Vector2, Vector2]

_AXES = {"x": 0, "y": 1}


def _axis_index(value: Union[int, str]) -> int:
    if isinstance(value, str):
        key = value.strip().lower()
        if key not in _AXES:
            raise ValueError(f"unknown axis '{value}'")
        return _AXES[key]
    if value not in (0, 1):
        raise ValueError(f"axis must be 0 or 1, got {value}")
    return int(value)


class BulkModel(str, Enum):
    """Bulk strain-energy models."""

    KNOWLES_STERNBERG = "knowles_sternberg"
    LINEAR = "linear"


class BoundaryKind(str, Enum):
    """Kinds of prescribed displacement."""

    FIXED = "fixed"
    VELOCITY = "velocity"


class LoadKind(str, Enum):
    """External load kinds."""

    BODY = "body"
    TRACTION = "traction"


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MaterialBlock(_Block):
    """Bulk material of one part."""

    name: str = Field(default="default", description="Label used in logs and manifests")
    elementset: Optional[str] = Field(
        default=None,
        description="Element set the material applies to; None claims every unassigned element",
    )
    model: BulkModel = Field(default=BulkModel.KNOWLES_STERNBERG)
    E: Optional[float] = Field(default=None, gt=0, description="Young's modulus, Pa")
    nu: Optional[float] = Field(default=None, gt=0, lt=0.5, description="Poisson ratio")
    c1: Optional[float] = Field(default=None, gt=0, description="Knowles-Sternberg modulus, Pa")
    beta: Optional[float] = Field(default=None, gt=0, description="Knowles-Sternberg exponent")
    rho: float = Field(gt=0, description="Density, kg/m^3")

    @model_validator(mode="after")
    def check_moduli(self) -> "MaterialBlock":
        """Require exactly one of (E, nu) or (c1, beta)."""
        engineering = self.E is not None and self.nu is not None
        intrinsic = self.c1 is not None and self.beta is not None
        if engineering == intrinsic:
            raise ValueError("give either (E, nu) or (c1, beta)")
        if self.model is BulkModel.LINEAR and not engineering:
            raise ValueError("linear material needs (E, nu)")
        return self


class CohesiveBlock(_Block):
    """Initially rigid cohesive law shared by all interfaces."""

    sigma_c: float = Field(gt=0, description="Critical traction, Pa")
    G_c: float = Field(gt=0, description="Critical energy release rate, Pa*m")
    beta_mix: float = Field(default=1.0, gt=0, description="Mixity parameter")
    elementsets: Optional[List[str]] = Field(
        default=None,
        description="Element sets whose edges receive interfaces; None means every element",
    )

    @property
    def delta_u(self) -> float:
        """Ultimate opening displacement, m."""
        return 2.0 * self.G_c / self.sigma_c


class BoundaryBlock(_Block):
    """Prescribed displacement on a node set."""

    nodeset: str
    components: List[int] = Field(default_factory=lambda: [0, 1])
    kind: BoundaryKind = Field(default=BoundaryKind.FIXED)
    value: Vector2 = Field(default=(0.0, 0.0), description="Displacement at step 0, m")
    velocity: Vector2 = Field(default=(0.0, 0.0), description="Prescribed velocity, m/s")
    velocity_gradient: Optional[Matrix2] = Field(
        default=None,
        description="G in v(X) = velocity + G X, 1/s",
    )

    @field_validator("components", mode="before")
    @classmethod
    def parse_components(cls, v: Any) -> List[int]:
        """Accept axis names as well as indices."""
        if isinstance(v, (str, int)):
            v = [v]
        components = sorted({_axis_index(c) for c in v})
        if not components:
            raise ValueError("at least one component is required")
        return components


class InitialVelocityBlock(_Block):
    """Initial velocity of a node set (or of every node)."""

    nodeset: Optional[str] = None
    velocity: Vector2


class ContactBlock(_Block):
    """Node-pair non-interpenetration along one axis."""

    name: str
    axis: int = 0
    pairs: List[Tuple[int, int]] = Field(default_factory=list, description="(side 1 node, side 2 node) ids")
    gap: Optional[float] = Field(
        default=None,
        description="Reference gap override, m; defaults to the coordinate difference",
    )
    side1: Optional[str] = None
    side2: Optional[str] = None
    match_tolerance: float = Field(
        default=1e-9,
        ge=0,
        description="With no pairs, side nodes whose transverse coordinates agree within this distance are paired, m",
    )

    @field_validator("axis", mode="before")
    @classmethod
    def parse_axis(cls, v: Any) -> int:
        """Accept 'x'/'y' as well as 0/1."""
        return _axis_index(v)

    @model_validator(mode="after")
    def check_pairs(self) -> "ContactBlock":
        """Pairs are listed, or matched across both side node sets."""
        if not self.pairs and (self.side1 is None or self.side2 is None):
            raise ValueError("contact needs pairs or both side1 and side2")
        return self


class LoadBlock(_Block):
    """Body force or edge traction."""

    kind: LoadKind
    value: Vector2 = Field(description="N/m^3 for body forces, Pa for tractions")
    nodeset: Optional[str] = Field(default=None, description="Loaded boundary for tractions")
    elementset: Optional[str] = Field(default=None, description="Loaded part for body forces")

    @model_validator(mode="after")
    def check_target(self) -> "LoadBlock":
        """Tractions need a boundary node set."""
        if self.kind is LoadKind.TRACTION and self.nodeset is None:
            raise ValueError("traction loads need a nodeset")
        return self


class SolverBlock(_Block):
    """Interior-point, Phase I and trust-region controls."""

    mu_init: float = Field(default=5e-5, gt=0)
    mu_ratio: float = Field(default=0.125, gt=0, lt=1)
    n_mu: int = Field(default=6, ge=1)
    big_m_init: float = Field(default=64.0, gt=0)
    big_m_factor: float = Field(default=8.0, gt=1)
    max_big_m_escalations: int = Field(default=10, ge=0)
    handoff_margin: float = Field(default=1e-12, ge=0)
    tol1: float = Field(default=1e-8, gt=0)
    tol2: float = Field(default=1e-8, gt=0)
    tol3: float = Field(default=1e-12, gt=0)
    tol4: float = Field(default=1e-2, gt=0)
    max_iterations: int = Field(default=200, ge=1)
    initial_radius: float = Field(default=1.0, gt=0)
    bulk_quadrature: int = Field(default=3, description="3- or 6-point triangle rule")
    preprocess_every: int = Field(default=3, ge=1)
    preprocess_from_initial: bool = Field(
        default=True,
        description="Build scaling Hessians from the initial state rather than the previous step",
    )

    @field_validator("bulk_quadrature")
    @classmethod
    def check_rule(cls, v: int) -> int:
        """Only the 3- and 6-point rules are tabulated."""
        if v not in (3, 6):
            raise ValueError("bulk_quadrature must be 3 or 6")
        return v


class OutputBlock(_Block):
    """What the run writes and how energies are reported."""

    directory: Optional[str] = None
    snapshot_every: int = Field(default=1, ge=0, description="0 disables VTK snapshots")
    damage_every: int = Field(default=1, ge=0, description="0 disables damage CSVs")
    thickness: float = Field(default=1.0, gt=0, description="Multiplier on reported energies")
    energy_part: Optional[str] = Field(default=None, description="Element set the ledger is restricted to")
    load_nodeset: Optional[str] = None
    load_component: int = 0
    deflection_node: Optional[int] = None
    deflection_component: int = 0

    @field_validator("load_component", "deflection_component", mode="before")
    @classmethod
    def parse_component(cls, v: Any) -> int:
        """Accept 'x'/'y' as well as 0/1."""
        return _axis_index(v)


class RunConfig(_Block):
    """A complete simulation description."""

    mesh: str
    dt: float = Field(gt=0, description="Time step, s")
    n_step: int = Field(ge=0)
    quasistatic: bool = Field(default=False, description="Drop inertia; steps become load steps")
    materials: List[MaterialBlock] = Field(min_length=1)
    cohesive: Optional[CohesiveBlock] = None
    boundary: List[BoundaryBlock] = Field(default_factory=list)
    initial_velocity: List[InitialVelocityBlock] = Field(default_factory=list)
    contact: List[ContactBlock] = Field(default_factory=list)
    load: List[LoadBlock] = Field(default_factory=list)
    solver: SolverBlock = Field(default_factory=SolverBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def check_catch_all(self) -> "RunConfig":
        """At most one material block may leave its element set open."""
        if sum(1 for m in self.materials if m.elementset is None) > 1:
            raise ValueError("only one material block may omit elementset")
        return self

    @property
    def mu_schedule(self) -> List[float]:
        """Barrier parameters in solve order."""
        s = self.solver
        return [s.mu_init * s.mu_ratio**i for i in range(s.n_mu)]

    @classmethod
    def from_toml(cls, path: Union[str, Path]) -> "RunConfig":
        """Load and validate a TOML run configuration.

        The mesh path is resolved relative to the configuration file.
        """
        path = Path(path)
        try:
            with path.open("rb") as fh:
                data: Dict[str, Any] = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config not found: {path}", {"path": str(path)})
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"config is not valid TOML: {e}", {"path": str(path)})

        try:
            config = cls.model_validate(data)
        except ValidationError as e:
            raise ConfigurationError(
                f"invalid config {path}",
                {"path": str(path), "errors": e.errors(include_url=False, include_context=False, include_input=False)},
            )

        mesh_path = Path(config.mesh)
        if not mesh_path.is_absolute():
            config = config.model_copy(update={"mesh": str(path.parent / mesh_path)})
        return config
