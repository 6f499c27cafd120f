"""Event-driven exact sampling of the jump process and path statistics."""

from .engine import (
    KERNEL_NAME,
    SimConfig,
    SimulationResult,
    estimate_marginals,
    simulate,
)
from .sampling import sample_destination, sample_sojourn
from .trajectory import (
    Trajectory,
    TrajectoryStatus,
    count_into,
    count_out_of,
    integrated_intensity_into,
    integrated_intensity_out_of,
)

__all__ = [
    "KERNEL_NAME",
    "SimConfig",
    "SimulationResult",
    "Trajectory",
    "TrajectoryStatus",
    "simulate",
    "estimate_marginals",
    "sample_sojourn",
    "sample_destination",
    "count_into",
    "count_out_of",
    "integrated_intensity_into",
    "integrated_intensity_out_of",
]
