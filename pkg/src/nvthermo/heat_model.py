"""Steady-state conduction around point heat sources."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GLASS_CONDUCTIVITY = 1.0  # W/(m K)
WATER_CONDUCTIVITY = 0.6  # W/(m K)


@dataclass(frozen=True)
class HeatSource:
    position: tuple
    q_dot: float  # W

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position))
        if self.q_dot < 0:
            raise ValueError(f"q_dot must be non-negative, got {self.q_dot}")


@dataclass(frozen=True)
class HeatScene:
    sources: tuple
    conductivity: float = GLASS_CONDUCTIVITY
    source_radius: float = 50e-9

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.conductivity > 0:
            raise ValueError(f"conductivity must be positive, got {self.conductivity}")
        if self.source_radius < 0:
            raise ValueError(f"source_radius must be non-negative, got {self.source_radius}")


@dataclass(frozen=True)
class LaserSpot:
    position: tuple
    power: float  # W
    waist: float  # m, 1/e^2 intensity radius
    absorption_efficiency: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position))
        if self.power < 0:
            raise ValueError(f"power must be non-negative, got {self.power}")
        if not self.waist > 0:
            raise ValueError(f"waist must be positive, got {self.waist}")
        if not 0 <= self.absorption_efficiency <= 1:
            raise ValueError(f"absorption_efficiency must lie in [0, 1], got {self.absorption_efficiency}")


def _vec(v) -> tuple:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape == (2,):
        a = np.append(a, 0.0)
    if a.shape != (3,):
        raise ValueError(f"position must have 2 or 3 components, got {v!r}")
    return tuple(float(x) for x in a)


def point_source_dT(q_dot: float, conductivity: float, r) -> np.ndarray | float:
    """``q_dot / (4 pi kappa r)``."""
    return q_dot / (4.0 * np.pi * conductivity * np.asarray(r, dtype=float))


def steady_state_dT(scene: HeatScene, probe) -> float:
    """Temperature rise (K) at ``probe`` from all sources of ``scene``.

    Distances below ``source_radius`` are clamped to it.
    """
    x = np.asarray(_vec(probe))
    total = 0.0
    for src in scene.sources:
        r = float(np.linalg.norm(x - np.asarray(src.position)))
        r_eff = max(r, scene.source_radius)
        if r_eff == 0:
            raise ValueError("probe coincides with a source and source_radius is zero")
        total += src.q_dot / (4.0 * np.pi * scene.conductivity * r_eff)
    return total


def laser_to_heat(spot: LaserSpot, np_position) -> float:
    """Heat (W) deposited in a particle at ``np_position`` by a Gaussian spot."""
    offset = np.asarray(_vec(np_position)) - np.asarray(spot.position)
    r2 = float(np.dot(offset, offset))
    return spot.power * spot.absorption_efficiency * float(np.exp(-2.0 * r2 / spot.waist**2))


@dataclass(frozen=True)
class HeatProfileFit:
    amplitude: float  # K m, q_dot / (4 pi kappa)
    amplitude_error: float
    q_dot: float
    q_dot_error: float
    dT_at_source: float
    dT_at_source_error: float
    chi2: float
    n_readings: int

    def predict(self, r) -> np.ndarray | float:
        return self.amplitude / np.asarray(r, dtype=float)


def fit_heat_profile(readings, conductivity: float, source_radius: float) -> HeatProfileFit:
    """Weighted least squares of ``A / r`` through ``(r, dT, sigma)`` readings."""
    rows = sorted((float(r), float(t), float(s)) for r, t, s in readings)
    if not rows:
        raise ValueError("no readings")
    if not conductivity > 0 or not source_radius > 0:
        raise ValueError("conductivity and source_radius must be positive")
    r, dt, sig = map(np.array, zip(*rows))
    if np.any(r <= 0):
        raise ValueError("distances must be positive")
    if np.any(sig <= 0):
        raise ValueError("sigma must be positive")
    if len(r) > 1 and np.ptp(r) == 0:
        raise ValueError("readings must be at distinct distances")
    x = 1.0 / r
    wts = 1.0 / sig**2
    sxx = float(np.sum(wts * x * x))
    amp = float(np.sum(wts * x * dt) / sxx)
    amp_err = float(1.0 / np.sqrt(sxx))
    chi2 = float(np.sum(wts * (dt - amp * x) ** 2))
    q = 4.0 * np.pi * conductivity
    return HeatProfileFit(amp, amp_err, amp * q, amp_err * q, amp / source_radius,
                          amp_err / source_radius, chi2, len(r))


def solution_heating(absorbed_power: float, conductivity: float, effective_radius: float) -> float:
    """Steady temperature rise of a medium absorbing ``absorbed_power`` within ``effective_radius``."""
    if absorbed_power < 0:
        raise ValueError("absorbed_power must be non-negative")
    if not conductivity > 0 or not effective_radius > 0:
        raise ValueError("conductivity and effective_radius must be positive")
    return float(point_source_dT(absorbed_power, conductivity, effective_radius))


def solution_heating_radius(absorbed_power: float, conductivity: float, dT: float) -> float:
    """Effective radius at which ``absorbed_power`` produces the rise ``dT``."""
    if not absorbed_power > 0 or not conductivity > 0 or not dT > 0:
        raise ValueError("arguments must be positive")
    return absorbed_power / (4.0 * np.pi * conductivity * dT)
