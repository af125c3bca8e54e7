"""Time stepping: the two-phase interior-point solve of one step and the outer loop."""

import time
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Tuple

import numpy as np
from scipy import sparse

from conefrac.core.errors import (
    ConeFracError,
    DegenerateInterfaceError,
    InvertedElementError,
    PhaseOneError,
    StepFailure,
    UnknownNodeSetError,
)
from conefrac.core.logging import get_structlog_logger
from conefrac.core.metrics import metrics
from conefrac.domain.models import RunConfig, SolverBlock
from conefrac.services.assembly.bulk import BulkAssembler, external_load, mass_matrix
from conefrac.services.assembly.interfaces import InterfaceAssembler
from conefrac.services.assembly.objective import BarrierObjective, Phase, StepContext
from conefrac.services.cone import is_strictly_feasible, orthant
from conefrac.services.material import CohesiveParams, update_damage
from conefrac.services.mesh import (
    BoundaryOperator,
    FracturedMesh,
    Mesh,
    build_bc,
    build_contact,
    insert_interfaces,
    load_mesh,
)
from conefrac.services.trustregion import TRConfig, minimize

logger = get_structlog_logger(__name__)


@dataclass(frozen=True)
class MuSchedule:
    """Geometric barrier schedule mu_i = mu_init * ratio**(i-1), i = 1..n."""

    mu_init: float = 5e-5
    ratio: float = 0.125
    n: int = 6

    @classmethod
    def from_solver(cls, solver: SolverBlock) -> "MuSchedule":
        return cls(mu_init=solver.mu_init, ratio=solver.mu_ratio, n=solver.n_mu)

    @property
    def values(self) -> List[float]:
        return [self.mu_init * self.ratio**i for i in range(self.n)]

    @property
    def first(self) -> float:
        return self.mu_init

    @property
    def last(self) -> float:
        return self.values[-1]

    def __iter__(self) -> Iterator[float]:
        return iter(self.values)

    def __len__(self) -> int:
        return self.n


@dataclass
class PreprocessCache:
    """Scaling Hessians of the Phase I problem and of every mu solve."""

    H_phase1: Optional[sparse.csr_matrix] = None
    H_mu: List[Optional[sparse.csr_matrix]] = field(default_factory=list)
    refreshed_at: Optional[int] = None

    def hessian_for(self, index: int) -> Optional[sparse.csr_matrix]:
        return self.H_mu[index] if index < len(self.H_mu) else None


@dataclass(frozen=True)
class StepState:
    """State at the end of step ``tau``; ``u_mid`` is the last solved midpoint."""

    tau: int
    u: np.ndarray
    v: np.ndarray
    d: np.ndarray
    u_mid: np.ndarray


@dataclass
class StepOutcome:
    """Result of one ORDINARY solve."""

    u_mid: np.ndarray
    s0: np.ndarray
    objective: BarrierObjective
    xi: np.ndarray
    escalations: int
    big_m: float
    t: float
    iterations: int
    radius: float


@dataclass
class PhaseOneResult:
    """Feasible Phase II start x and the Phase I solve that produced it."""

    x: np.ndarray
    objective: BarrierObjective
    xi: np.ndarray
    radius: float
    escalations: int
    t: float
    iterations: int


@dataclass
class StepRecord:
    """Everything reported about one step; step 0 echoes the initial state."""

    step: int
    time: float
    u_mid: np.ndarray
    u: np.ndarray
    v_prev: np.ndarray
    v: np.ndarray
    d_prev: np.ndarray
    d: np.ndarray
    openings: np.ndarray  # (n_i, 2) at the midpoint
    s0: np.ndarray
    reactions: np.ndarray  # full-length, nonzero on constrained DOFs
    contact_forces: np.ndarray
    contact_slack: np.ndarray
    constrained: np.ndarray
    escalations: int = 0
    big_m: float = 0.0
    t: float = 0.0
    iterations: int = 0
    mu: float = 0.0

    @property
    def effective_opening(self) -> np.ndarray:
        return np.hypot(self.openings[:, 0], self.openings[:, 1])


def velocity_update(
    u_mid: np.ndarray, u_prev: np.ndarray, v_prev: np.ndarray, dt: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Implicit-midpoint update: u_next = 2 u_mid - u_prev, v_next = 4 (u_mid - u_prev)/dt - v_prev."""
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    return 2.0 * u_mid - u_prev, 4.0 * (u_mid - u_prev) / dt - v_prev


class Simulation:
    """A configured run: mesh, operators and solver settings."""

    def __init__(self, config: RunConfig, fmesh: Optional[FracturedMesh] = None):
        self.config = config
        self.solver = config.solver
        self.schedule = MuSchedule.from_solver(config.solver)
        self.tr_config = TRConfig(
            tol1=config.solver.tol1,
            tol2=config.solver.tol2,
            tol3=config.solver.tol3,
            tol4=config.solver.tol4,
            max_iterations=config.solver.max_iterations,
        )
        if fmesh is None:
            mesh = load_mesh(config.mesh)
            fmesh = insert_interfaces(mesh, self._cohesive_elements(mesh))
        self.fmesh = fmesh
        self.bulk = BulkAssembler(fmesh, config.materials, config.solver.bulk_quadrature)
        self.cohesive = CohesiveParams.from_block(config.cohesive) if config.cohesive else None
        self.interfaces = (
            InterfaceAssembler(fmesh, self.cohesive.beta_mix) if self.cohesive and fmesh.n_e else None
        )
        self.n_i = self.interfaces.n_i if self.interfaces else 0
        self.mass = None if config.quasistatic else mass_matrix(fmesh, config.materials)
        self.f_ext = external_load(fmesh, config.load, config.solver.bulk_quadrature)
        self.contact = build_contact(fmesh, config.contact)
        self.bc_at(0.0)
        logger.info(
            "Simulation ready",
            dofs=fmesh.n_dof,
            interfaces=fmesh.n_e,
            gauss_points=self.n_i,
            contact_rows=self.contact.n_li,
            quasistatic=config.quasistatic,
            steps=config.n_step,
        )

    def _cohesive_elements(self, mesh: Mesh) -> Optional[np.ndarray]:
        cohesive = self.config.cohesive
        if cohesive is None:
            return np.zeros(0, dtype=np.int64)
        if cohesive.elementsets is None:
            return None
        members = []
        for name in cohesive.elementsets:
            if name not in mesh.elementsets:
                raise UnknownNodeSetError(name, {"known": sorted(mesh.elementsets), "kind": "elementset"})
            members.append(mesh.elementsets[name])
        return np.unique(np.concatenate(members)) if members else np.zeros(0, dtype=np.int64)

    @property
    def quasistatic(self) -> bool:
        return self.config.quasistatic

    def bc_at(self, tau: float) -> BoundaryOperator:
        return build_bc(self.fmesh, self.config.boundary, tau, self.config.dt)

    def step_bc(self, tau: int) -> BoundaryOperator:
        """Constraints of step tau: at its midpoint for dynamic runs, at tau for load steps."""
        return self.bc_at(float(tau) if self.quasistatic else tau - 0.5)

    def initial_state(self) -> StepState:
        bc = self.bc_at(0.0)
        u0 = bc.expand(np.zeros(bc.n_x))
        v0 = np.zeros(self.fmesh.n_dof)
        if not self.quasistatic:
            for block in self.config.initial_velocity:
                nodes = (
                    self.fmesh.nodeset(block.nodeset)
                    if block.nodeset is not None
                    else np.arange(self.fmesh.n_nodes)
                )
                v0[2 * nodes] = block.velocity[0]
                v0[2 * nodes + 1] = block.velocity[1]
            v0[bc.constrained] = bc.v_bc[bc.constrained]
        return StepState(tau=0, u=u0, v=v0, d=np.zeros(self.n_i), u_mid=u0.copy())

    def context(self, tau: int, state: StepState) -> StepContext:
        bc = self.step_bc(tau)
        return StepContext(
            fmesh=self.fmesh,
            bulk=self.bulk,
            bc=bc,
            contact=self.contact.restrict(bc),
            f_ext=self.f_ext,
            u_prev=state.u,
            v_prev=state.v,
            dt=self.config.dt,
            d=state.d,
            interfaces=self.interfaces,
            cohesive=self.cohesive,
            mass=self.mass,
        )

    def feasibility_handoff(self, ctx: StepContext, u_phase1: np.ndarray) -> Optional[np.ndarray]:
        """x = Pi(u_phase1) if it starts Phase II strictly inside every barrier, else None.

        Contact slacks must clear ``handoff_margin``. Interface normal openings only
        need to be positive: an intact rigid interface leaves Phase I with openings
        far below any fixed length floor.
        """
        bc = ctx.bc
        x = bc.project(u_phase1)
        u = bc.expand(x)
        margin = self.solver.handoff_margin
        try:
            self.bulk.element_energies(u)
            if ctx.interfaces is not None:
                normal = ctx.interfaces.openings(u, order=0).s[..., 0].ravel()
                if not is_strictly_feasible(normal, orthant(len(normal))):
                    return None
        except (InvertedElementError, DegenerateInterfaceError) as e:
            logger.debug("Handoff rejected", reason=e.code)
            return None
        slack = ctx.contact.slack(u)
        if slack.size and not is_strictly_feasible(slack, orthant(len(slack)), margin):
            return None
        return x

    def _phase_one(
        self, ctx: StepContext, u_start: np.ndarray, H_bar: Optional[sparse.csr_matrix], radius: float
    ) -> PhaseOneResult:
        big_m = self.solver.big_m_init
        mu = self.schedule.first
        escalations = 0
        iterations = 0
        t_history: List[float] = []
        while True:
            objective = BarrierObjective(ctx, mu, phase=Phase.ONE, big_m=big_m)
            start = objective.extend(objective.pack(u_start, np.zeros(ctx.n_i), 1.0))
            result = minimize(objective, start, H_bar, radius, self.tr_config, label=Phase.ONE.value)
            radius = result.radius
            iterations += result.iterations
            u1, s0, t = objective.split(result.xi)
            t_history.append(t)
            x = self.feasibility_handoff(ctx, u1)
            if x is not None:
                logger.debug("Phase one feasible", big_m=big_m, t=t, escalations=escalations)
                return PhaseOneResult(x, objective, result.xi, radius, escalations, t, iterations)
            escalations += 1
            metrics.increment("phase_one_escalations_total")
            if escalations > self.solver.max_big_m_escalations:
                raise PhaseOneError(
                    f"no feasible start after {escalations - 1} big-M escalations",
                    {"big_m": big_m, "t_history": t_history},
                )
            big_m *= self.solver.big_m_factor
            u_start = u1
            logger.debug("Phase one escalation", big_m=big_m, t=t)

    def solve_step(
        self, tau: int, state: StepState, cache: PreprocessCache, preprocess: bool = False
    ) -> Tuple[Optional[StepOutcome], PreprocessCache]:
        """Phase I big-M loop followed by Phase II continuation over the mu schedule.

        With ``preprocess`` the returned cache holds fresh scaling Hessians and the
        outcome is None; otherwise the cache is returned unchanged.
        """
        ctx = self.context(tau, state)
        radius = self.solver.initial_radius
        phase_one = self._phase_one(ctx, state.u_mid, cache.H_phase1, radius)
        objective1, xi_bar, radius = phase_one.objective, phase_one.xi, phase_one.radius
        iterations = phase_one.iterations
        refreshed = (
            PreprocessCache(H_phase1=objective1.evaluate(xi_bar, 2).hessian, refreshed_at=tau)
            if preprocess
            else cache
        )

        _, s0, _ = objective1.split(xi_bar)
        mu1 = self.schedule.first
        xi = np.concatenate([phase_one.x, s0])
        objective = None
        for index, mu in enumerate(self.schedule):
            objective = BarrierObjective(ctx, mu, alpha=mu1 if preprocess else mu)
            xi = objective.extend(xi)
            H_bar = cache.hessian_for(index)
            result = minimize(objective, xi, H_bar, radius, self.tr_config, label=Phase.TWO.value)
            xi, radius = result.xi, result.radius
            iterations += result.iterations
            metrics.gauge("barrier_parameter", mu)
            if preprocess:
                refreshed.H_mu.append(objective.evaluate(xi, 2).hessian)

        if preprocess:
            logger.debug("Scaling Hessians refreshed", step=tau)
            return None, refreshed
        assert objective is not None
        u_mid, s0, _ = objective.split(xi)
        return (
            StepOutcome(
                u_mid=u_mid,
                s0=s0,
                objective=objective,
                xi=xi,
                escalations=phase_one.escalations,
                big_m=objective1.big_m or 0.0,
                t=phase_one.t,
                iterations=iterations,
                radius=radius,
            ),
            cache,
        )

    def initial_record(self, state: StepState) -> StepRecord:
        bc = self.bc_at(0.0)
        reactions = np.zeros(self.fmesh.n_dof)
        grad = self.bulk.energy(state.u, order=1).gradient - self.f_ext
        reactions[bc.constrained] = grad[bc.constrained]
        openings = (
            self.interfaces.openings(state.u, order=0).s.reshape(-1, 2)
            if self.interfaces
            else np.zeros((0, 2))
        )
        return StepRecord(
            step=0,
            time=0.0,
            u_mid=state.u,
            u=state.u,
            v_prev=state.v,
            v=state.v,
            d_prev=state.d,
            d=state.d,
            openings=openings,
            s0=np.hypot(openings[:, 0], openings[:, 1]),
            reactions=reactions,
            contact_forces=np.zeros(self.fmesh.n_dof),
            contact_slack=self.contact.slack(state.u),
            constrained=bc.constrained,
        )

    def _advance(self, tau: int, state: StepState, outcome: StepOutcome) -> Tuple[StepState, StepRecord]:
        objective = outcome.objective
        u_mid = outcome.u_mid
        openings = (
            self.interfaces.openings(u_mid, order=0).s.reshape(-1, 2)
            if self.interfaces
            else np.zeros((0, 2))
        )
        d_new = (
            update_damage(state.d, np.hypot(openings[:, 0], openings[:, 1]), self.cohesive)
            if self.cohesive and self.n_i
            else state.d
        )
        if self.quasistatic:
            u_next, v_next = u_mid.copy(), np.zeros_like(state.v)
        else:
            u_next, v_next = velocity_update(u_mid, state.u, state.v, self.config.dt)

        bc = objective.ctx.bc
        reactions = np.zeros(self.fmesh.n_dof)
        reactions[bc.constrained] = objective.gradient_u(outcome.xi)[bc.constrained]
        record = StepRecord(
            step=tau,
            time=tau * self.config.dt,
            u_mid=u_mid,
            u=u_next,
            v_prev=state.v,
            v=v_next,
            d_prev=state.d,
            d=d_new,
            openings=openings,
            s0=outcome.s0,
            reactions=reactions,
            contact_forces=objective.contact_forces(u_mid),
            contact_slack=self.contact.slack(u_mid),
            constrained=bc.constrained,
            escalations=outcome.escalations,
            big_m=outcome.big_m,
            t=outcome.t,
            iterations=outcome.iterations,
            mu=objective.mu,
        )
        return StepState(tau=tau, u=u_next, v=v_next, d=d_new, u_mid=u_mid), record

    def run(self, max_steps: Optional[int] = None) -> Iterator[StepRecord]:
        """Yield the initial record, then one record per solved step.

        Raises:
            StepFailure: any module failure inside a step, with a diagnostic snapshot.
        """
        state = self.initial_state()
        initial = state
        yield self.initial_record(state)

        n_step = self.config.n_step if max_steps is None else min(self.config.n_step, max_steps)
        every = self.solver.preprocess_every
        cache = PreprocessCache()
        kind = "quasistatic" if self.quasistatic else "dynamic"
        for tau in range(1, n_step + 1):
            started = time.perf_counter()
            try:
                if tau % every == 1 % every:
                    source = initial if self.solver.preprocess_from_initial else state
                    _, cache = self.solve_step(tau, replace(source, tau=tau - 1), cache, preprocess=True)
                outcome, _ = self.solve_step(tau, state, cache)
                assert outcome is not None
                state, record = self._advance(tau, state, outcome)
            except ConeFracError as e:
                metrics.increment("steps_total", kind=kind, status="failed")
                snapshot = {
                    "cause": e.code,
                    "message": e.message,
                    "details": e.details,
                    "max_damage": float(state.d.max()) if state.d.size else 0.0,
                    "max_displacement": float(np.abs(state.u).max()) if state.u.size else 0.0,
                }
                logger.error("Step failed", step=tau, **snapshot)
                raise StepFailure(f"step {tau} failed: {e.message}", tau, snapshot) from e

            elapsed = time.perf_counter() - started
            metrics.histogram("step_duration", elapsed, kind=kind)
            metrics.increment("steps_total", kind=kind, status="ok")
            logger.info(
                "Step solved",
                step=tau,
                seconds=round(elapsed, 3),
                iterations=record.iterations,
                escalations=record.escalations,
                max_damage=float(record.d.max()) if record.d.size else 0.0,
            )
            yield record


def run(config: RunConfig, max_steps: Optional[int] = None) -> List[StepRecord]:
    """Run a configuration to completion and collect its records."""
    return list(Simulation(config).run(max_steps))
