"""Classic point-source and revised line-source Gaussian plume formulas."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from aqimap.grid import DEFAULT_WIND_FLOOR, clamp_wind

log = logging.getLogger(__name__)

SQRT_2PI = math.sqrt(2.0 * math.pi)


class GuardViolation(ValueError):
    """The convexity condition sigma_z^2 > max(2 z_max^2, 2 H0^2) does not hold."""


@dataclass(frozen=True)
class PlumeParams:
    """Line-source plume parameters.

    lam is the source density, L the source length, sigma_y/sigma_z the
    diffusion parameters and H the effective source height, bounded by H0.
    """

    lam: float = 1.0
    L: float = 20.0
    sigma_y: float = 50.0
    sigma_z: float = 75.0
    H: float = 25.0
    H0: float = 50.0
    wind_floor: float = DEFAULT_WIND_FLOOR

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        for name in ("L", "sigma_y", "sigma_z", "H0", "wind_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.H <= self.H0:
            raise ValueError(f"H={self.H} outside [0, H0={self.H0}]")

    def with_height(self, H: float) -> "PlumeParams":
        return replace(self, H=float(H))

    @property
    def line_factor(self) -> float:
        """The bracket 1 - 2 Q(L / (2 sigma_y)), i.e. the y-integrated share of the source."""
        return 1.0 - 2.0 * gaussian_q(self.L / (2.0 * self.sigma_y))

    def guard_margin(self, z_max: float) -> float:
        """sigma_z^2 - max(2 z_max^2, 2 H0^2); positive iff the convexity guard holds."""
        return self.sigma_z**2 - max(2.0 * z_max**2, 2.0 * self.H0**2)

    def check_guard(self, z_max: float) -> None:
        if self.guard_margin(z_max) <= 0:
            raise GuardViolation(
                f"sigma_z^2 > max(2*z_max^2, 2*H0^2) violated: sigma_z^2={self.sigma_z**2:g}, "
                f"2*z_max^2={2 * z_max**2:g}, 2*H0^2={2 * self.H0**2:g}"
            )


def gaussian_q(t):
    """Standard normal upper tail probability, integral of phi from t to infinity."""
    return ndtr(-np.asarray(t, dtype=float))[()]


def classic_gpm(pos, params: PlumeParams, Q_src: float, u: float):
    """Point-source plume concentration at ``pos`` for source strength Q_src and wind u."""
    if not u > 0:
        raise ValueError(f"wind speed must be positive, got {u}")
    pos = np.asarray(pos, dtype=float)
    y, z = pos[..., 1], pos[..., 2]
    sy, sz = params.sigma_y, params.sigma_z
    return (
        Q_src
        / (2.0 * math.pi * sy * sz * u)
        * np.exp(-((z - params.H) ** 2) / (2.0 * sz**2))
        * np.exp(-(y**2) / (2.0 * sy**2))
    )[()]


def _effective_wind(u, params: PlumeParams):
    u, n_clamped = clamp_wind(u, params.wind_floor)
    if n_clamped:
        log.warning("%d wind speed(s) below floor %.3g m/s clamped", n_clamped, params.wind_floor)
    return u


def revised_gpm(pos, u, params: PlumeParams):
    """Line-source plume AQI contribution. Depends on height and wind only.

    Vectorised over leading axes of ``pos`` (..., 3) and ``u`` (...).
    """
    pos = np.asarray(pos, dtype=float)
    u = _effective_wind(u, params)
    z = pos[..., 2]
    sz = params.sigma_z
    amp = params.lam * params.line_factor / (SQRT_2PI * sz)
    return (amp / u * np.exp(-((z - params.H) ** 2) / (2.0 * sz**2)))[()]


def revised_gpm_grad(pos, u, params: PlumeParams) -> np.ndarray:
    """Partials (dC/dx, dC/dy, dC/dz, dC/du), shape (..., 4)."""
    pos = np.asarray(pos, dtype=float)
    u = _effective_wind(u, params)
    c = np.asarray(revised_gpm(pos, u, params))
    z = pos[..., 2]
    out = np.zeros(c.shape + (4,))
    out[..., 2] = c * (params.H - z) / params.sigma_z**2
    out[..., 3] = -c / u
    return out


def revised_gpm_dH(pos, u, params: PlumeParams):
    """Partial of the revised plume with respect to the source height H."""
    pos = np.asarray(pos, dtype=float)
    c = revised_gpm(pos, u, params)
    return (c * (pos[..., 2] - params.H) / params.sigma_z**2)[()]
