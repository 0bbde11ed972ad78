"""Fluorescence, CW-ESR spectra and photon shot noise."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from nvthermo.rng import make_rng


@dataclass(frozen=True)
class PhotonModel:
    """Optical readout model.

    ``rate_baseline`` is the fluorescence rate of ``|0>`` (counts/s) before the
    dimensionless ``collection_factor``; ``|+-1>`` fluoresce less by ``contrast``.
    """

    rate_baseline: float = 1.0e5
    contrast: float = 0.3
    readout_window: float = 300e-9
    collection_factor: float = 1.0

    def __post_init__(self):
        for name in ("rate_baseline", "contrast", "readout_window", "collection_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.contrast < 1:
            raise ValueError(f"contrast must be < 1, got {self.contrast}")

    @property
    def bright_counts_per_shot(self) -> float:
        """Mean photons detected from ``|0>`` in one readout window."""
        return self.rate_baseline * self.readout_window * self.collection_factor

    @property
    def readout_factor(self) -> float:
        """Equivalent readout efficiency ``C`` at half population transfer.

        Ratio of the spin-projection-limited phase uncertainty to the
        photon-shot-noise-limited one for a single shot.
        """
        n = self.bright_counts_per_shot
        return self.contrast * np.sqrt(n) / (2.0 * np.sqrt(1.0 - self.contrast / 2.0))

    @classmethod
    def for_readout_factor(cls, readout_factor: float, contrast: float = 0.3,
                           readout_window: float = 300e-9) -> PhotonModel:
        """Photon model whose single-shot readout efficiency equals ``readout_factor``."""
        n = (2.0 * readout_factor * np.sqrt(1.0 - contrast / 2.0) / contrast) ** 2
        return cls(rate_baseline=n / readout_window, contrast=contrast,
                   readout_window=readout_window, collection_factor=1.0)


@dataclass(frozen=True)
class ESRSpectrumModel:
    """Double-dip CW-ESR spectrum with Lorentzian lines.

    Dips sit at ``center -+ half_splitting``; ``linewidth`` is the half width
    at half maximum of each dip.
    """

    center: float
    half_splitting: float
    linewidth: float
    contrast: float
    rate_baseline: float

    def __post_init__(self):
        if not self.linewidth > 0:
            raise ValueError(f"linewidth must be positive, got {self.linewidth}")
        if not 0 < self.contrast < 1:
            raise ValueError(f"contrast must lie in (0, 1), got {self.contrast}")
        if not self.rate_baseline > 0:
            raise ValueError(f"rate_baseline must be positive, got {self.rate_baseline}")

    def replace(self, **changes) -> ESRSpectrumModel:
        return replace(self, **changes)

    @property
    def norm(self) -> float:
        """Peak value of the summed unit-peak dip profile."""
        return _profile_peak(abs(self.half_splitting) / self.linewidth)


def _lorentz(x):
    return 1.0 / (1.0 + x * x)


def _dip_profile(u, x):
    """Sum of unit-peak Lorentzians at ``-+x`` (in linewidth units)."""
    return _lorentz(u + x) + _lorentz(u - x)


@lru_cache(maxsize=256)
def _profile_peak(x: float) -> float:
    # the summed profile peaks at the midpoint or close to a dip center
    grid = np.linspace(0.0, x + 1.0, 401)
    k = int(np.argmax(_dip_profile(grid, x)))
    step = grid[1] - grid[0]
    lo, hi = max(grid[k] - step, 0.0), grid[k] + step
    res = minimize_scalar(lambda u: -_dip_profile(u, x), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-12 * max(1.0, x)})
    return float(max(-res.fun, _dip_profile(grid[k], x)))


def esr_rate(model: ESRSpectrumModel, omega):
    """Fluorescence rate (counts/s) of the spectrum at microwave frequency ``omega``."""
    u = (np.asarray(omega, dtype=float) - model.center) / model.linewidth
    x = model.half_splitting / model.linewidth
    depth = _dip_profile(u, x) / model.norm
    rate = model.rate_baseline * (1.0 - model.contrast * depth)
    return float(rate) if np.ndim(rate) == 0 else rate


def esr_rate_derivative(model: ESRSpectrumModel, omega):
    """Analytic d(rate)/d(omega) in counts/s per rad/s."""
    u = (np.asarray(omega, dtype=float) - model.center) / model.linewidth
    x = model.half_splitting / model.linewidth
    dl = lambda v: -2.0 * v / (1.0 + v * v) ** 2
    d = (dl(u + x) + dl(u - x)) / model.norm
    out = -model.rate_baseline * model.contrast * d / model.linewidth
    return float(out) if np.ndim(out) == 0 else out


def sample_counts(rate, duration: float, shots: int = 1, seed=None):
    """Poisson photon counts with mean ``rate * duration * shots``.

    ``seed`` may be an integer, a ``SeedSequence`` or an existing generator.
    """
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0):
        raise ValueError("rate must be non-negative")
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    rng = make_rng(seed)
    counts = rng.poisson(rate * duration * shots)
    return int(counts) if counts.ndim == 0 else counts


def simulate_esr_scan(model: ESRSpectrumModel, freqs, dwell: float, seed=None,
                      noiseless: bool = False) -> np.ndarray:
    """Counts recorded at each frequency of ``freqs`` with ``dwell`` seconds per point.

    With ``noiseless`` the expected counts ``esr_rate * dwell`` are returned.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if freqs.size == 0:
        raise ValueError("freqs must be non-empty")
    if not dwell > 0:
        raise ValueError(f"dwell must be positive, got {dwell}")
    expected = esr_rate(model, freqs) * dwell
    if noiseless:
        return np.asarray(expected, dtype=float)
    return make_rng(seed).poisson(expected).astype(float)


def readout_signal(populations, photon: PhotonModel) -> float:
    """Fluorescence rate (counts/s) for level populations ``(p-1, p0, p+1)``."""
    p = np.asarray(populations, dtype=float)
    if p.shape != (3,):
        raise ValueError(f"populations must have three entries, got shape {p.shape}")
    if np.any(p < -1e-9) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid populations {p}")
    dark = p[0] + p[2]
    return photon.rate_baseline * (1.0 - photon.contrast * dark) * photon.collection_factor
