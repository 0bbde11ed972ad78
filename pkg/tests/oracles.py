"""Independent reference implementations used as test oracles.

None of these import the code under test beyond plain data containers.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import curve_fit


def rk4_density(rho0, h, duration, steps=4000):
    """Integrate d(rho)/dt = -i [H, rho] with classical fourth-order Runge-Kutta."""
    rho = np.array(rho0, dtype=complex)
    h = np.asarray(h, dtype=complex)
    dt = duration / steps
    f = lambda r: -1j * (h @ r - r @ h)
    for _ in range(steps):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


def double_lorentzian(w, center, half_splitting, linewidth, depth, baseline):
    """Plain double Lorentzian; ``depth`` is the per-dip amplitude (unnormalized)."""
    l = lambda x: 1.0 / (1.0 + ((w - x) / linewidth) ** 2)
    return baseline * (1.0 - depth * (l(center - half_splitting) + l(center + half_splitting)))


def fit_center_by_curve_fit(freqs, counts, p0):
    """Brute-force double-Lorentzian fit; returns the fitted center."""
    f0 = p0[0]
    scale = np.array([p0[2], p0[2], p0[2], 1.0, p0[4]])
    x0 = np.array([0.0, p0[1] / scale[1], 1.0, p0[3], 1.0])
    model = lambda w, *x: double_lorentzian(w, f0 + x[0] * scale[0], *(np.array(x[1:]) * scale[1:]))
    popt, _ = curve_fit(model, freqs, counts, p0=x0, maxfev=20000, xtol=1e-14, ftol=1e-14)
    return f0 + popt[0] * scale[0]


def central_difference(fn, x, h):
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def linear_fit_accuracy_mc(n, trials, rng, sigma=1.0):
    """Sampling distribution of the zero-intercept residual accuracy."""
    p = np.linspace(1.0, 2.0, n)
    y = 3.0 * p + rng.normal(0.0, sigma, size=(trials, n))
    m = y @ p / (p @ p)
    resid = y - m[:, None] * p
    return np.sqrt(np.sum(resid**2, axis=1) / (n - 1))
