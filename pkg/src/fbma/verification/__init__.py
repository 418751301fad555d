"""Reference solutions and post-hoc checks of solved pairs."""
from .battery import VerificationOptions, run_battery
from .checks import (ansatz_constant, ansatz_residual, fit_boundary_exponent,
                     free_boundary_convexity_check, klartag_transform_check, ma_residual,
                     pushforward_check)
from .mollify import Mollified
from .ode import ShootingProfile, boundary_remainder, n0_anchor, ode_shooting_oracle

__all__ = [
    "Mollified", "ShootingProfile", "VerificationOptions", "ansatz_constant", "ansatz_residual",
    "boundary_remainder", "fit_boundary_exponent", "free_boundary_convexity_check",
    "klartag_transform_check", "ma_residual", "n0_anchor", "ode_shooting_oracle",
    "pushforward_check", "run_battery",
]
