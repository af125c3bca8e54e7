"""Solver metrics collected with Prometheus."""

from pathlib import Path
from typing import Any, Union

from prometheus_client import Counter, Gauge, Histogram, write_to_textfile
from prometheus_client.core import CollectorRegistry


class MetricsCollector:
    """Prometheus metrics collector for solver activity."""

    def __init__(self) -> None:
        self.registry = CollectorRegistry()

        # Trust region
        self.trust_region_iterations_total = Counter(
            "conefrac_trust_region_iterations_total",
            "Trust-region iterations by outcome",
            ["phase", "outcome"],
            registry=self.registry,
        )

        self.subproblem_factorizations_total = Counter(
            "conefrac_subproblem_factorizations_total",
            "Cholesky factorizations attempted in the trust-region subproblem",
            registry=self.registry,
        )

        self.hard_case_total = Counter(
            "conefrac_hard_case_total",
            "Trust-region subproblems resolved by the hard-case fallback",
            registry=self.registry,
        )

        # Phase I
        self.phase_one_escalations_total = Counter(
            "conefrac_phase_one_escalations_total",
            "Big-M escalations during Phase I",
            registry=self.registry,
        )

        # Steps
        self.step_duration = Histogram(
            "conefrac_step_duration_seconds",
            "Wall time per solved time step",
            ["kind"],
            registry=self.registry,
        )

        self.steps_total = Counter(
            "conefrac_steps_total",
            "Solved time steps",
            ["kind", "status"],
            registry=self.registry,
        )

        self.barrier_parameter = Gauge(
            "conefrac_barrier_parameter",
            "Barrier parameter of the most recent Phase II solve",
            registry=self.registry,
        )

        self.trust_radius = Gauge(
            "conefrac_trust_radius",
            "Trust radius carried out of the most recent minimize call",
            registry=self.registry,
        )

    def increment(self, name: str, value: int = 1, **labels: Any) -> None:
        """Increment a counter metric."""
        metric = getattr(self, name, None)
        if metric and isinstance(metric, Counter):
            (metric.labels(**labels) if labels else metric).inc(value)

    def gauge(self, name: str, value: float, **labels: Any) -> None:
        """Set a gauge metric."""
        metric = getattr(self, name, None)
        if metric and isinstance(metric, Gauge):
            (metric.labels(**labels) if labels else metric).set(value)

    def histogram(self, name: str, value: float, **labels: Any) -> None:
        """Observe a histogram metric."""
        metric = getattr(self, name, None)
        if metric and isinstance(metric, Histogram):
            (metric.labels(**labels) if labels else metric).observe(value)

    def write_textfile(self, path: Union[str, Path]) -> None:
        """Dump the registry in the node-exporter textfile format."""
        write_to_textfile(str(path), self.registry)


# Global metrics instance
metrics = MetricsCollector()
