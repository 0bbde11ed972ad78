"""Spin-1 ground-state model of the NV center.

All frequencies are angular (rad/s). The basis order is ``(|-1>, |0>, |+1>)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

TWO_PI = 2.0 * np.pi

#: NV electron gyromagnetic ratio, 2pi * 28.025 GHz/T.
NV_GYROMAGNETIC = TWO_PI * 28.025e9

#: Validity window of the linear zero-field-splitting model (K).
TEMPERATURE_WINDOW = (200.0, 600.0)

IDX_M1, IDX_0, IDX_P1 = 0, 1, 2

SZ = np.diag([-1.0, 0.0, 1.0]).astype(complex)
SZ2 = np.diag([1.0, 0.0, 1.0]).astype(complex)

# |0> and the bright state |B> = (|+1> + |-1>)/sqrt(2)
KET_0 = np.array([0.0, 1.0, 0.0], dtype=complex)
KET_B = np.array([1.0, 0.0, 1.0], dtype=complex) / np.sqrt(2.0)
KET_D = np.array([-1.0, 0.0, 1.0], dtype=complex) / np.sqrt(2.0)

_STATE_TOL = 1e-12


@dataclass(frozen=True)
class NVEnsembleParams:
    """Physical constants of an NV sensor.

    Attributes
    ----------
    delta0 : float
        Zero-field splitting at ``t_ref`` (rad/s).
    t_ref : float
        Reference temperature (K).
    d_delta_dT : float
        Temperature slope of the splitting (rad/s/K). Negative for diamond.
    t_coh : float
        Echo coherence time (s).
    t1 : float
        Longitudinal relaxation time (s).
    n_nv : int
        Number of NV centers contributing to the signal.
    readout_factor : float
        Dimensionless readout/initialization efficiency ``C``.
    stretch_exp : float
        Exponent of the stretched-exponential coherence envelope.
    """

    delta0: float = TWO_PI * 2.87e9
    t_ref: float = 300.0
    d_delta_dT: float = -TWO_PI * 77e3
    t_coh: float = 0.5e-3
    t1: float = 6e-3
    n_nv: int = 1
    readout_factor: float = 0.03
    stretch_exp: float = 2.0

    def __post_init__(self):
        if not self.delta0 > 0:
            raise ValueError(f"delta0 must be positive, got {self.delta0}")
        if not self.t_coh > 0:
            raise ValueError(f"t_coh must be positive, got {self.t_coh}")
        if not self.t1 > 0:
            raise ValueError(f"t1 must be positive, got {self.t1}")
        if self.n_nv < 1:
            raise ValueError(f"n_nv must be >= 1, got {self.n_nv}")
        if not 0 < self.readout_factor <= 1:
            raise ValueError(f"readout_factor must lie in (0, 1], got {self.readout_factor}")
        if not self.stretch_exp > 0:
            raise ValueError(f"stretch_exp must be positive, got {self.stretch_exp}")
        if self.d_delta_dT == 0:
            raise ValueError("d_delta_dT must be nonzero")

    def envelope(self, t_total) -> np.ndarray | float:
        """Coherence envelope ``exp(-(t/t_coh)**p)`` after total free evolution ``t_total``."""
        return np.exp(-((np.asarray(t_total) / self.t_coh) ** self.stretch_exp))


@dataclass(frozen=True)
class FieldEnvironment:
    """Quasi-static environment seen by the spin.

    ``trap_detunings`` is a sequence of ``(detuning, weight)`` pairs; each
    component shifts both ``|+-1>`` levels by ``detuning`` and the observed
    signal is the weighted mixture.
    """

    b_shift: float = 0.0
    trap_detunings: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    gyromagnetic: float = NV_GYROMAGNETIC

    def __post_init__(self):
        traps = tuple((float(d), float(w)) for d, w in self.trap_detunings)
        if not traps:
            raise ValueError("trap_detunings must contain at least one component")
        weights = np.array([w for _, w in traps])
        if np.any(weights < 0):
            raise ValueError("trap weights must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"trap weights must sum to 1, got {weights.sum()}")
        object.__setattr__(self, "trap_detunings", traps)

    @classmethod
    def from_field(cls, b_tesla: float, **kwargs) -> FieldEnvironment:
        gyro = kwargs.get("gyromagnetic", NV_GYROMAGNETIC)
        return cls(b_shift=gyro * b_tesla, **kwargs)


@dataclass(frozen=True)
class SpinState:
    """Density matrix over ``(|-1>, |0>, |+1>)``."""

    rho: np.ndarray = field(repr=False)

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (3, 3):
            raise ValueError(f"rho must be 3x3, got shape {rho.shape}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_ket(cls, ket) -> SpinState:
        ket = np.asarray(ket, dtype=complex)
        ket = ket / np.linalg.norm(ket)
        return cls(np.outer(ket, ket.conj()))

    @classmethod
    def ground(cls) -> SpinState:
        return cls.from_ket(KET_0)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.rho)).copy()

    def check(self, tol: float = _STATE_TOL) -> None:
        """Raise ``ValueError`` if the state is not a valid density matrix."""
        rho = self.rho
        if np.max(np.abs(rho - rho.conj().T)) > tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1.0) > tol:
            raise ValueError(f"trace is {np.trace(rho).real}, expected 1")
        if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -tol:
            raise ValueError("density matrix has negative eigenvalues")


def zfs_at_temperature(params: NVEnsembleParams, temp: float) -> float:
    """Zero-field splitting at ``temp`` using the linear model about ``t_ref``."""
    lo, hi = TEMPERATURE_WINDOW
    if not lo <= temp <= hi:
        raise ValueError(f"temperature {temp} K outside the validity window [{lo:g} K, {hi:g} K]")
    return params.delta0 + params.d_delta_dT * (temp - params.t_ref)


def ground_hamiltonian(
    params: NVEnsembleParams,
    env: FieldEnvironment,
    temp: float,
    frame: float = 0.0,
    extra_detuning: float = 0.0,
) -> np.ndarray:
    """Ground-manifold Hamiltonian ``Delta(T) Sz^2 + b_shift Sz``.

    ``frame`` subtracts a rotating-frame carrier from the ``|+-1>`` energies and
    ``extra_detuning`` adds a common shift to them (used for trap components).
    """
    delta = zfs_at_temperature(params, temp) + extra_detuning - frame
    return delta * SZ2 + env.b_shift * SZ


def evolve(
    state: SpinState,
    h: np.ndarray,
    duration: float,
    params: NVEnsembleParams,
    elapsed: float = 0.0,
    damping: bool = True,
) -> SpinState:
    """Propagate ``state`` under ``h`` for ``duration`` seconds.

    Coherences between ``|0>`` and ``|+-1>`` are multiplied by
    ``E(elapsed + duration) / E(elapsed)`` with ``E`` the stretched-exponential
    envelope, so consecutive calls compose exactly when ``elapsed`` tracks the
    free-evolution time already spent.
    """
    if duration < 0:
        raise ValueError(f"duration must be non-negative, got {duration}")
    rho = state.rho
    if duration == 0:
        return state
    h = np.asarray(h, dtype=complex)
    if np.count_nonzero(h - np.diag(np.diag(h))) == 0:
        energies = np.real(np.diag(h))
        phase = np.exp(-1j * np.subtract.outer(energies, energies) * duration)
        out = rho * phase
    else:
        u = expm(-1j * h * duration)
        out = u @ rho @ u.conj().T
    if damping:
        p, t_coh = params.stretch_exp, params.t_coh
        factor = np.exp((elapsed / t_coh) ** p - ((elapsed + duration) / t_coh) ** p)
        mask = np.ones((3, 3))
        mask[IDX_0, [IDX_M1, IDX_P1]] = factor
        mask[[IDX_M1, IDX_P1], IDX_0] = factor
        out = out * mask
    return SpinState(0.5 * (out + out.conj().T))
