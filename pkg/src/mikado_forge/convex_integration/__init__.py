from .besov import besov_amplitudes, besov_attempt, besov_perturbation, besov_step, besov_stress
from .driver import band_bookkeeping, run_schedule, run_seeds, seed_family
from .l2 import l2_amplitudes, l2_attempt, l2_step, zeta
from .state import (ParameterSet, ReynoldsState, RunReport, Schedule, l1_distance,
                    reynolds_residual, seed_state, seed_velocity)

__all__ = [
    "ParameterSet", "ReynoldsState", "RunReport", "Schedule", "band_bookkeeping",
    "besov_amplitudes", "besov_attempt", "besov_perturbation", "besov_step", "besov_stress",
    "l1_distance", "l2_amplitudes", "l2_attempt", "l2_step", "reynolds_residual",
    "run_schedule", "run_seeds", "seed_family", "seed_state", "seed_velocity", "zeta",
]
