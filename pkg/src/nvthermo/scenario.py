"""Scenario configuration: schema, validation and (de)serialization.

Scenarios are YAML documents with snake_case keys in SI units. Frequencies are
given in Hz (keys ending in ``_hz``) and converted to rad/s when the physics
objects are built. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from nvthermo.heat_model import HeatScene, HeatSource, LaserSpot
from nvthermo.measurement import ESRSpectrumModel, PhotonModel
from nvthermo.spin_model import TWO_PI, FieldEnvironment, NVEnsembleParams

class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats such as ``2.87e9``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                    |[-+]?\.(?:inf|Inf|INF)
                    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)

PROTOCOLS = ("four_point", "echo", "esr_scan", "heat_profile", "sensitivity_sweep")


class ScenarioError(ValueError):
    """Invalid scenario file; ``key`` is the dotted path of the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class NVConfig:
    zfs_hz: float = 2.87e9
    d_zfs_dT_hz: float = -77.0e3
    t_ref: float = 300.0
    t_coh: float = 1.0e-6
    t1: float = 1.0e-3
    n_nv: int = 1
    readout_factor: float = 0.03
    stretch_exp: float = 1.0


@dataclass(frozen=True)
class SpectrumConfig:
    half_splitting_hz: float = 10.0e6
    linewidth_hz: float = 5.0e6
    contrast: float = 0.1
    rate_baseline: float = 1.0e6


@dataclass(frozen=True)
class ProbeConfig:
    id: str
    position: tuple = (0.0, 0.0, 0.0)
    nv: dict = field(default_factory=dict)
    spectrum: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SourceConfig:
    position: tuple = (0.0, 0.0, 0.0)
    q_dot: float = 0.0


@dataclass(frozen=True)
class HeatConfig:
    conductivity: float = 1.0
    source_radius: float = 50e-9
    sources: tuple = (SourceConfig(),)


@dataclass(frozen=True)
class LaserConfig:
    position: tuple = (0.0, 0.0, 0.0)
    waist: float = 0.3e-6
    absorption_efficiency: float = 1.0
    powers: tuple = ()


@dataclass(frozen=True)
class FourPointSettings:
    dwell: float = 1.0
    delta_omega_hz: float | None = None
    mirrored_ordering: bool = True
    field_drift_hz: float = 0.0


@dataclass(frozen=True)
class EchoSettings:
    contrast: float = 0.3
    trap_detunings_hz: tuple = ((0.0, 1.0),)
    trace_detuning_hz: float = 0.0
    trace_max_time: float = 600e-6
    trace_points: int = 121
    trace_shots: int = 200000
    evolution_time: float = 500e-6
    integration_time: float = 30.0
    trials: int = 2000
    init_time: float = 10e-6
    readout_time: float = 300e-9


@dataclass(frozen=True)
class ScanSettings:
    span_hz: float = 60.0e6
    points: int = 201
    dwell: float = 1.0


@dataclass(frozen=True)
class SensitivitySettings:
    n_nv: tuple = (1, 10, 100, 1000)
    t_coh: tuple = (1e-3, 3e-3)
    integration_time: tuple = (0.3, 3.0, 30.0)
    evolution_time: float = 500e-6
    trials: int = 2000
    ultimate_n_nv: int = 1000
    ultimate_t_coh: float = 3e-3


@dataclass(frozen=True)
class Scenario:
    protocol: str
    seed: int = 0
    ambient_temperature: float = 300.0
    output_dir: str | None = None
    nv: NVConfig = NVConfig()
    spectrum: SpectrumConfig = SpectrumConfig()
    probes: tuple = ()
    heat: HeatConfig = HeatConfig()
    laser: LaserConfig = LaserConfig()
    four_point: FourPointSettings = FourPointSettings()
    echo: EchoSettings = EchoSettings()
    scan: ScanSettings = ScanSettings()
    sensitivity: SensitivitySettings = SensitivitySettings()

    # -- physics objects ----------------------------------------------------

    def nv_params(self, probe: ProbeConfig | None = None) -> NVEnsembleParams:
        cfg = self.nv
        if probe is not None and probe.nv:
            cfg = _merge(cfg, probe.nv, f"probes[{probe.id}].nv")
        return NVEnsembleParams(
            delta0=TWO_PI * cfg.zfs_hz, t_ref=cfg.t_ref, d_delta_dT=TWO_PI * cfg.d_zfs_dT_hz,
            t_coh=cfg.t_coh, t1=cfg.t1, n_nv=cfg.n_nv, readout_factor=cfg.readout_factor,
            stretch_exp=cfg.stretch_exp,
        )

    def spectrum_model(self, center: float, probe: ProbeConfig | None = None) -> ESRSpectrumModel:
        cfg = self.spectrum
        if probe is not None and probe.spectrum:
            cfg = _merge(cfg, probe.spectrum, f"probes[{probe.id}].spectrum")
        return ESRSpectrumModel(center, TWO_PI * cfg.half_splitting_hz, TWO_PI * cfg.linewidth_hz,
                                cfg.contrast, cfg.rate_baseline)

    def heat_scene(self, q_dots=None) -> HeatScene:
        srcs = self.heat.sources
        q = [s.q_dot for s in srcs] if q_dots is None else list(q_dots)
        return HeatScene(tuple(HeatSource(s.position, qi) for s, qi in zip(srcs, q)),
                         self.heat.conductivity, self.heat.source_radius)

    def laser_spot(self, power: float) -> LaserSpot:
        return LaserSpot(self.laser.position, power, self.laser.waist, self.laser.absorption_efficiency)

    def field_environment(self) -> FieldEnvironment:
        return FieldEnvironment(trap_detunings=tuple((TWO_PI * d, w) for d, w in self.echo.trap_detunings_hz))

    def echo_photon_model(self, params: NVEnsembleParams | None = None) -> PhotonModel:
        params = params or self.nv_params()
        return PhotonModel.for_readout_factor(params.readout_factor, self.echo.contrast,
                                              self.echo.readout_time)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> Scenario:
        scenario = _build(cls, data, "")
        _validate(scenario)
        return scenario


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file, applying defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ScenarioError(f"parse error at {where}: {exc.problem}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping")
    return Scenario.from_dict(data)


def dump_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(scenario.to_yaml())


def shipped_scenarios() -> dict[str, Path]:
    """Scenario files installed with the package, keyed by file stem."""
    folder = Path(__file__).with_name("scenarios")
    return {p.stem: p for p in sorted(folder.glob("*.yaml"))}


# ---------------------------------------------------------------------------
# generic dataclass building
# ---------------------------------------------------------------------------

def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


_ELEMENT_TYPES = {
    ("Scenario", "probes"): ProbeConfig,
    ("HeatConfig", "sources"): SourceConfig,
}


def _coerce(value, hint, key):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None:
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        if not isinstance(value, bool):
            raise ScenarioError(f"expected true/false, got {value!r}", key)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"expected an integer, got {value!r}", key)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"expected a number, got {value!r}", key)
        if not math.isfinite(value):
            raise ScenarioError(f"expected a finite number, got {value!r}", key)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ScenarioError(f"expected a string, got {value!r}", key)
        return value
    if hint is dict:
        if not isinstance(value, dict):
            raise ScenarioError("expected a mapping", key)
        return dict(value)
    return value


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ScenarioError("expected a mapping", prefix or None)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ScenarioError("unknown key", f"{prefix}{k}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ScenarioError("required key missing", f"{prefix}{f.name}")
            continue
        key = f"{prefix}{f.name}"
        value = data[f.name]
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _build(hint, value, key + ".")
        elif hint is tuple:
            kwargs[f.name] = _build_tuple(cls, f.name, value, key)
        else:
            kwargs[f.name] = _coerce(value, hint, key)
    return cls(**kwargs)


def _build_tuple(cls, name, value, key):
    if not isinstance(value, (list, tuple)):
        raise ScenarioError("expected a list", key)
    elem = _ELEMENT_TYPES.get((cls.__name__, name))
    if elem is not None:
        return tuple(_build(elem, v, f"{key}[{i}].") for i, v in enumerate(value))
    out = []
    for i, v in enumerate(value):
        if isinstance(v, (list, tuple)):
            out.append(tuple(_coerce(x, float, f"{key}[{i}]") for x in v))
        elif isinstance(v, str):
            out.append(v)
        else:
            out.append(_coerce(v, float, f"{key}[{i}]") if not isinstance(v, int) or isinstance(v, bool)
                       else v)
    return tuple(out)


def _merge(base, overrides: dict, key: str):
    names = {f.name for f in dataclasses.fields(base)}
    for k in overrides:
        if k not in names:
            raise ScenarioError("unknown key", f"{key}.{k}")
    merged = _to_plain(base)
    merged.update(overrides)
    return _build(type(base), merged, key + ".")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _positive(value, key):
    if not value > 0:
        raise ScenarioError(f"must be positive, got {value}", key)


def _position(value, key):
    if len(value) not in (2, 3):
        raise ScenarioError("position needs 2 or 3 components", key)
    if any(abs(x) > 1.0 for x in value):
        raise ScenarioError("position components are in metres and must be below 1 m", key)


def _validate(s: Scenario) -> None:
    if s.protocol not in PROTOCOLS:
        raise ScenarioError(f"unknown protocol {s.protocol!r}; expected one of {', '.join(PROTOCOLS)}",
                            "protocol")
    if not 0 <= s.seed < 2**64:
        raise ScenarioError("seed must be an unsigned 64-bit integer", "seed")
    if not 200.0 <= s.ambient_temperature <= 600.0:
        raise ScenarioError("must lie in [200 K, 600 K]", "ambient_temperature")

    for name in ("zfs_hz", "t_coh", "t1", "n_nv", "readout_factor", "stretch_exp"):
        _positive(getattr(s.nv, name), f"nv.{name}")
    if s.nv.readout_factor > 1:
        raise ScenarioError("must not exceed 1", "nv.readout_factor")
    if s.nv.zfs_hz > 1e11:
        raise ScenarioError("frequency in Hz looks implausible", "nv.zfs_hz")
    for name in ("linewidth_hz", "contrast", "rate_baseline"):
        _positive(getattr(s.spectrum, name), f"spectrum.{name}")
    if s.spectrum.half_splitting_hz < 0:
        raise ScenarioError("must be non-negative", "spectrum.half_splitting_hz")
    if s.spectrum.contrast >= 1:
        raise ScenarioError("must be below 1", "spectrum.contrast")

    ids = [p.id for p in s.probes]
    if len(set(ids)) != len(ids):
        raise ScenarioError("probe ids must be unique", "probes")
    for i, p in enumerate(s.probes):
        _position(p.position, f"probes[{i}].position")
        s.nv_params(p)
        s.spectrum_model(TWO_PI * s.nv.zfs_hz, p)

    _positive(s.heat.conductivity, "heat.conductivity")
    if s.heat.source_radius < 0:
        raise ScenarioError("must be non-negative", "heat.source_radius")
    for i, src in enumerate(s.heat.sources):
        _position(src.position, f"heat.sources[{i}].position")
        if src.q_dot < 0:
            raise ScenarioError("must be non-negative", f"heat.sources[{i}].q_dot")

    _position(s.laser.position, "laser.position")
    _positive(s.laser.waist, "laser.waist")
    if not 0 <= s.laser.absorption_efficiency <= 1:
        raise ScenarioError("must lie in [0, 1]", "laser.absorption_efficiency")
    if any(p < 0 for p in s.laser.powers):
        raise ScenarioError("powers must be non-negative", "laser.powers")

    _positive(s.four_point.dwell, "four_point.dwell")
    if s.four_point.delta_omega_hz is not None:
        _positive(s.four_point.delta_omega_hz, "four_point.delta_omega_hz")

    e = s.echo
    for name in ("contrast", "trace_max_time", "trace_points", "trace_shots", "evolution_time",
                 "integration_time", "trials"):
        _positive(getattr(e, name), f"echo.{name}")
    if e.init_time < 0 or e.readout_time <= 0:
        raise ScenarioError("timing must be non-negative", "echo.init_time")
    try:
        s.field_environment()
    except ValueError as exc:
        raise ScenarioError(str(exc), "echo.trap_detunings_hz") from exc

    _positive(s.scan.span_hz, "scan.span_hz")
    _positive(s.scan.points, "scan.points")
    _positive(s.scan.dwell, "scan.dwell")

    sv = s.sensitivity
    for name in ("n_nv", "t_coh", "integration_time"):
        values = getattr(sv, name)
        if not values or any(not v > 0 for v in values):
            raise ScenarioError("must be a non-empty list of positive values", f"sensitivity.{name}")
    _positive(sv.evolution_time, "sensitivity.evolution_time")
    _positive(sv.trials, "sensitivity.trials")
