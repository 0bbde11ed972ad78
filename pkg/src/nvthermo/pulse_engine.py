"""Pulse sequences and their execution against the spin model.

Sequence programs are plain text, one element per line::

    drive f=<Hz> rabi=<Hz> phase=<rad> dur=<s>
    delay <s>
    swap_pm
    readout

Blank lines and ``#`` comments are ignored. Frequencies in the text are in Hz
and are converted to rad/s on parsing.

When a sequence contains no ``drive`` element it is run with ideal pulses: an
instantaneous pi/2 rotation on the ``|0> <-> |B>`` transition prepares the
superposition and its inverse maps the coherence back to populations before
readout.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from nvthermo.measurement import PhotonModel, readout_signal
from nvthermo.spin_model import (
    IDX_0,
    IDX_M1,
    IDX_P1,
    KET_0,
    KET_B,
    TWO_PI,
    FieldEnvironment,
    NVEnsembleParams,
    SpinState,
    evolve,
    ground_hamiltonian,
)


class SequenceSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Drive:
    carrier: float  # rad/s
    rabi: float  # rad/s, coupling of |0> to each of |+-1>
    phase: float
    duration: float


@dataclass(frozen=True)
class Delay:
    duration: float


@dataclass(frozen=True)
class SwapPM:
    """2pi echo pulse exchanging ``|+1>`` and ``|-1>``."""


@dataclass(frozen=True)
class Readout:
    pass


Element = Drive | Delay | SwapPM | Readout


@dataclass(frozen=True)
class PulseSequence:
    elements: tuple = ()
    label: str = ""

    def __post_init__(self):
        elements = tuple(self.elements)
        for el in elements:
            if isinstance(el, (Drive, Delay)) and el.duration < 0:
                raise ValueError(f"negative duration in {el}")
        n_readout = sum(isinstance(el, Readout) for el in elements)
        if n_readout > 1:
            raise ValueError("a sequence may contain at most one readout")
        if n_readout and not isinstance(elements[-1], Readout):
            raise ValueError("readout must be the last element")
        object.__setattr__(self, "elements", elements)

    def __len__(self):
        return len(self.elements)

    @property
    def free_evolution_time(self) -> float:
        return sum(el.duration for el in self.elements if isinstance(el, Delay))

    @property
    def has_drives(self) -> bool:
        return any(isinstance(el, Drive) for el in self.elements)

    def to_text(self) -> str:
        lines = []
        for el in self.elements:
            if isinstance(el, Drive):
                lines.append(
                    f"drive f={el.carrier / TWO_PI!r} rabi={el.rabi / TWO_PI!r} "
                    f"phase={el.phase!r} dur={el.duration!r}"
                )
            elif isinstance(el, Delay):
                lines.append(f"delay {el.duration!r}")
            elif isinstance(el, SwapPM):
                lines.append("swap_pm")
            else:
                lines.append("readout")
        return "\n".join(lines) + ("\n" if lines else "")


def echo_sequence(tau: float) -> PulseSequence:
    """2pi-echo thermometry program with free evolution ``tau`` on each side."""
    return PulseSequence((Delay(tau), SwapPM(), Delay(tau), Readout()), label="echo")


def ramsey_sequence(total: float) -> PulseSequence:
    return PulseSequence((Delay(total), Readout()), label="ramsey")


_DRIVE_KEYS = ("f", "rabi", "phase", "dur")


def _parse_number(token: str, lineno: int, column: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise SequenceSyntaxError(f"expected a number, got {token!r}", lineno, column) from None
    if not np.isfinite(value):
        raise SequenceSyntaxError(f"non-finite value {token!r}", lineno, column)
    return value


def parse_sequence(text: str, label: str = "") -> PulseSequence:
    """Parse a sequence program; see the module docstring for the grammar."""
    elements = []
    readout_line = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        tokens = [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", line)]
        head, col = tokens[0]
        args = tokens[1:]
        if readout_line is not None:
            raise SequenceSyntaxError(f"element after readout (line {readout_line})", lineno, col)
        if head == "delay":
            if len(args) != 1:
                raise SequenceSyntaxError("delay takes exactly one duration", lineno, col)
            value = _parse_number(args[0][0], lineno, args[0][1])
            if value < 0:
                raise SequenceSyntaxError(f"negative duration {value}", lineno, args[0][1])
            elements.append(Delay(value))
        elif head == "drive":
            values = {}
            for tok, tcol in args:
                key, sep, val = tok.partition("=")
                if not sep or key not in _DRIVE_KEYS:
                    raise SequenceSyntaxError(f"unexpected drive argument {tok!r}", lineno, tcol)
                if key in values:
                    raise SequenceSyntaxError(f"duplicate drive argument {key!r}", lineno, tcol)
                values[key] = _parse_number(val, lineno, tcol + len(key) + 1)
            missing = [k for k in _DRIVE_KEYS if k not in values]
            if missing:
                raise SequenceSyntaxError(f"drive is missing {', '.join(missing)}", lineno, col)
            if values["dur"] < 0:
                raise SequenceSyntaxError(f"negative duration {values['dur']}", lineno, col)
            elements.append(
                Drive(TWO_PI * values["f"], TWO_PI * values["rabi"], values["phase"], values["dur"])
            )
        elif head in ("swap_pm", "readout"):
            if args:
                raise SequenceSyntaxError(f"{head} takes no arguments", lineno, args[0][1])
            if head == "swap_pm":
                elements.append(SwapPM())
            else:
                elements.append(Readout())
                readout_line = lineno
        else:
            raise SequenceSyntaxError(f"unknown element {head!r}", lineno, col)
    return PulseSequence(tuple(elements), label=label)


@dataclass(frozen=True)
class SequenceResult:
    populations: np.ndarray = field(repr=False)
    expected_signal: float
    accumulated_phase: float
    state: SpinState = field(repr=False, default=None)


def bright_rotation(angle: float, phase: float = 0.0) -> np.ndarray:
    """Unitary rotating ``|0> <-> |B>`` by ``angle`` about an equatorial axis at ``phase``."""
    gen = np.exp(-1j * phase) * np.outer(KET_B, KET_0.conj())
    gen = gen + gen.conj().T
    return expm(-0.5j * angle * gen)


def swap_unitary(fidelity: float = 1.0) -> np.ndarray:
    """Exchange of ``|+1>`` and ``|-1>``; partial for ``fidelity < 1``.

    The partial swap is ``exp(i theta) (cos theta - i sin theta X)`` on the
    ``|+-1>`` block with ``sin^2 theta = fidelity``, which reduces to the exact
    permutation at unit fidelity.
    """
    if not 0 <= fidelity <= 1:
        raise ValueError(f"swap fidelity must lie in [0, 1], got {fidelity}")
    if fidelity == 1:
        u = np.zeros((3, 3), dtype=complex)
        u[IDX_P1, IDX_M1] = u[IDX_M1, IDX_P1] = u[IDX_0, IDX_0] = 1.0
        return u
    theta = np.arcsin(np.sqrt(fidelity))
    g = np.exp(1j * theta)
    u = np.zeros((3, 3), dtype=complex)
    u[IDX_0, IDX_0] = 1.0
    u[IDX_M1, IDX_M1] = u[IDX_P1, IDX_P1] = g * np.cos(theta)
    u[IDX_M1, IDX_P1] = u[IDX_P1, IDX_M1] = -1j * g * np.sin(theta)
    return u


def drive_hamiltonian(rabi: float, phase: float) -> np.ndarray:
    """RWA coupling of ``|0>`` to each ``|+-1>`` level with Rabi frequency ``rabi``."""
    h = np.zeros((3, 3), dtype=complex)
    for idx in (IDX_M1, IDX_P1):
        h[idx, IDX_0] = 0.5 * rabi * np.exp(-1j * phase)
        h[IDX_0, idx] = 0.5 * rabi * np.exp(1j * phase)
    return h


def _frame_shift(rho: np.ndarray, angle: float) -> np.ndarray:
    """Move ``rho`` into a frame whose ``|+-1>`` phases advance by ``angle``."""
    v = np.array([np.exp(1j * angle), 1.0, np.exp(1j * angle)])
    return rho * np.outer(v, v.conj())


def _apply(rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    return u @ rho @ u.conj().T


def _propagate(seq, params, env, temp, mw_carrier, extra_detuning, ideal, swap_fidelity, damping):
    rho = SpinState.ground().rho
    if ideal:
        rho = _apply(rho, bright_rotation(np.pi / 2))
    h_free = ground_hamiltonian(params, env, temp, frame=mw_carrier, extra_detuning=extra_detuning)
    t = 0.0
    elapsed = 0.0
    for el in seq.elements:
        if isinstance(el, Delay):
            rho = evolve(SpinState(rho), h_free, el.duration, params, elapsed, damping).rho
            elapsed += el.duration
            t += el.duration
        elif isinstance(el, SwapPM):
            rho = _apply(rho, swap_unitary(swap_fidelity))
        elif isinstance(el, Drive):
            offset = el.carrier - mw_carrier
            rho = _frame_shift(rho, offset * t)
            h = ground_hamiltonian(params, env, temp, frame=el.carrier, extra_detuning=extra_detuning)
            h = h + drive_hamiltonian(el.rabi, el.phase)
            rho = evolve(SpinState(rho), h, el.duration, params, damping=False).rho
            t += el.duration
            rho = _frame_shift(rho, -offset * t)
    coherence = rho[IDX_M1, IDX_0] + rho[IDX_P1, IDX_0]
    if ideal:
        rho = _apply(rho, bright_rotation(-np.pi / 2))
    return rho, coherence


def run_sequence(
    seq: PulseSequence,
    params: NVEnsembleParams,
    env: FieldEnvironment,
    temp: float,
    mw_carrier: float,
    photon: PhotonModel | None = None,
    ideal_pulses: bool | None = None,
    swap_fidelity: float = 1.0,
    damping: bool = True,
) -> SequenceResult:
    """Run ``seq`` from ``|0>`` in the rotating frame of ``mw_carrier``.

    Trap components of ``env`` are propagated separately and mixed with their
    weights. ``expected_signal`` is the readout fluorescence normalized to the
    ``|0>`` level, so it lies in ``[1 - contrast, 1]``.

    ``accumulated_phase`` is the phase of the ``|0>``/``|B>`` coherence before
    the final mapping pulse, relative to its value right after preparation.
    """
    photon = photon or PhotonModel()
    ideal = (not seq.has_drives) if ideal_pulses is None else ideal_pulses
    rho = np.zeros((3, 3), dtype=complex)
    coherence = 0.0
    for detuning, weight in env.trap_detunings:
        r, c = _propagate(seq, params, env, temp, mw_carrier, detuning, ideal, swap_fidelity, damping)
        rho = rho + weight * r
        coherence = coherence + weight * c
    state = SpinState(0.5 * (rho + rho.conj().T))
    pops = np.clip(state.populations, 0.0, 1.0)
    pops = pops / pops.sum()
    signal = readout_signal(pops, photon) / (photon.rate_baseline * photon.collection_factor)
    # ideal preparation leaves sum_m <m|rho|0> = -i/sqrt(2)
    phase = float(-np.angle(coherence / -1j)) if abs(coherence) > 0 else 0.0
    return SequenceResult(pops, float(signal), phase, state)


def echo_fringe(
    tau,
    params: NVEnsembleParams,
    env: FieldEnvironment,
    temp_offset: float = 0.0,
    mw_detuning: float = 0.0,
    photon: PhotonModel | None = None,
):
    """Closed-form normalized echo signal after free evolution ``2 tau``.

    ``mw_detuning`` is the splitting at the base temperature minus the carrier.
    Vectorized over ``tau``.
    """
    photon = photon or PhotonModel()
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    t = 2.0 * tau
    offset = 1.0 - photon.contrast / 2.0
    amplitude = photon.contrast / 2.0
    base = mw_detuning + params.d_delta_dT * temp_offset
    fringe = sum(w * np.cos(t * (base + d)) for d, w in env.trap_detunings)
    out = offset + amplitude * params.envelope(t) * fringe
    return float(out) if out.ndim == 0 else out


def echo_slope(tau, params, env, mw_detuning=0.0, photon=None) -> float:
    """Derivative of the normalized echo signal with respect to accumulated phase."""
    photon = photon or PhotonModel()
    t = 2.0 * tau
    amplitude = photon.contrast / 2.0
    return float(-amplitude * params.envelope(t)
                 * sum(w * np.sin(t * (mw_detuning + d)) for d, w in env.trap_detunings))
