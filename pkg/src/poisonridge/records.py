"""Sweep record schema shared by the simulator, sweep harness and MNIST runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields


@dataclass(frozen=True)
class SweepRecord:
    """One (grid point, trial) row joining empirical and theoretical values.

    Error rows carry NaN in every empirical column; aggregation skips them.
    """

    grid_index: int
    trial_index: int
    c_target: float
    c_effective: float
    lam: float
    theta: float
    v_norm: float
    p: int
    n: int
    seed: int
    mu_emp: float
    sigma2_emp: float
    eta_emp_mc: float
    eta_emp_plugin: float
    mu_theory: float
    sigma2_theory: float
    eta_theory: float
    C_theory: float
    centering_mode: str
    wall_time_ms: float

    @property
    def is_error(self) -> bool:
        return math.isnan(self.mu_emp)


# CSV header; "lam" is serialized as "lambda".  wall_time_ms is an in-memory
# diagnostic only: persisted files must be byte-reproducible from the seeds,
# and wall-clock time is not.
FIELD_NAMES = [
    "lambda" if f.name == "lam" else f.name
    for f in fields(SweepRecord)
    if f.name != "wall_time_ms"
]

_EMPIRICAL_FIELDS = ("mu_emp", "sigma2_emp", "eta_emp_mc", "eta_emp_plugin")
