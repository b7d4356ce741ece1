"""Run configuration: parsing, validation, canonical serialization.

The format is line oriented: ``section.key = value`` with optional SI unit
suffixes (Hz, kHz, MHz, GHz, uK, mK, K, uW, mW, W, um, mm, m, us, ms, s,
rad/s, Hz/s family, Hz/W family). Comments start with ``#``. Frequency-valued
keys that are physically angular (trap frequencies, the Rabi window) convert
Hz-family suffixes by 2*pi; bare numbers are taken in the stored base unit,
which is what the canonical serializer emits so that parse(serialize(c)) is
exact.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .physics import (Apparatus, BeamConfig, BeamRole, HyperfineSpectrum,
                      RateModel, TrapConfig, TWO_PI,
                      DIODE_SHIFT_COEFF, DIODE_SCATTER_COEFF, DIODE_WAIST,
                      FIBER_SHIFT_COEFF, FIBER_SCATTER_COEFF, FIBER_WAIST)
from .experiment import DecayProtocol, MicrowaveScanProtocol, OpticalScanProtocol

AUTO_FIT_MODELS = ("none", "exp", "double-exp", "multi-gauss", "temperature")


class ConfigError(ValueError):
    """Configuration parse or validation failure, with a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class CloudSettings:
    n_phys: float = 1.8e6
    n_sim: int = 20000
    temperature: float = 18e-6


@dataclass
class RunConfig:
    trap: TrapConfig
    diode: BeamConfig
    fiber: BeamConfig
    cloud: CloudSettings
    spectrum: HyperfineSpectrum
    protocol: DecayProtocol | OpticalScanProtocol | MicrowaveScanProtocol
    auto_fit: str = "none"
    seed: int = 1
    out_prefix: str = "run"

    def apparatus(self) -> Apparatus:
        return Apparatus(trap=self.trap, diode=self.diode, fiber=self.fiber,
                         rates=RateModel(), spectrum=self.spectrum)

    @property
    def protocol_name(self) -> str:
        return {DecayProtocol: "decay", OpticalScanProtocol: "optical-scan",
                MicrowaveScanProtocol: "microwave-scan"}[type(self.protocol)]


_UNITS = {
    "frequency": {"": 1.0, "Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "angular": {"": 1.0, "rad/s": 1.0, "Hz": TWO_PI, "kHz": TWO_PI * 1e3,
                "MHz": TWO_PI * 1e6, "GHz": TWO_PI * 1e9},
    "time": {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6},
    "power": {"": 1.0, "W": 1.0, "mW": 1e-3, "uW": 1e-6},
    "length": {"": 1.0, "m": 1.0, "mm": 1e-3, "um": 1e-6},
    "temperature": {"": 1.0, "K": 1.0, "mK": 1e-3, "uK": 1e-6},
    "scan_rate": {"": 1.0, "Hz/s": 1.0, "kHz/s": 1e3, "MHz/s": 1e6, "GHz/s": 1e9},
    "slope": {"": 1.0, "Hz/W": 1.0, "kHz/W": 1e3, "MHz/W": 1e6},
    "plain": {"": 1.0},
}

# key -> (kind, (lo, hi) legal range or None, is_list)
_NUMERIC_KEYS: dict[str, tuple[str, tuple[float, float] | None, bool]] = {
    "trap.omega_x": ("angular", (0.0, TWO_PI * 1e6), False),
    "trap.omega_r": ("angular", (0.0, TWO_PI * 1e6), False),
    "trap.bottom_frequency": ("frequency", (0.0, 2e10), False),
    "trap.center_x": ("length", (-1e-2, 1e-2), False),
    "trap.center_y": ("length", (-1e-2, 1e-2), False),
    "trap.center_z": ("length", (-1e-2, 1e-2), False),
    "beams.diode.power": ("power", (0.0, 100.0), False),
    "beams.diode.waist": ("length", (1e-6, 1e-2), False),
    "beams.diode.shift_coefficient": ("slope", (-1e10, 0.0), False),
    "beams.diode.scatter_coefficient": ("plain", (0.0, 1e8), False),
    "beams.diode.duty_cycle": ("plain", (0.0, 1.0), False),
    "beams.fiber.power": ("power", (0.0, 100.0), False),
    "beams.fiber.waist": ("length", (1e-6, 1e-2), False),
    "beams.fiber.shift_coefficient": ("slope", (0.0, 1e10), False),
    "beams.fiber.scatter_coefficient": ("plain", (0.0, 1e8), False),
    "beams.fiber.duty_cycle": ("plain", (0.0, 1.0), False),
    "cloud.n_phys": ("plain", (1.0, 1e12), False),
    "cloud.n_sim": ("plain", (1.0, 1e7), False),
    "cloud.T": ("temperature", (1e-7, 1e-3), False),
    "spectrum.line_offsets": ("frequency", (-1e10, 1e10), True),
    "spectrum.line_weights": ("plain", (0.0, 1e6), True),
    "spectrum.base_fwhm": ("frequency", (1.0, 1e9), False),
    "spectrum.shift_slope": ("slope", (-1e9, 1e9), False),
    "spectrum.broadening_slope": ("slope", (-1e9, 1e9), False),
    "run.seed": ("plain", (0.0, float(2 ** 64 - 1)), False),
}

_PROTOCOL_NUMERIC: dict[str, dict[str, tuple[str, tuple[float, float] | None]]] = {
    "decay": {
        "ramp_duration": ("time", (0.0, 1e4)),
        "hold_after_ramp": ("time", (0.0, 1e4)),
        "observe_duration": ("time", (0.0, 1e4)),
        "bin_width": ("time", (1e-6, 10.0)),
        "diode_power": ("power", (0.0, 100.0)),
        "fiber_power": ("power", (0.0, 100.0)),
        "diode_detuning": ("frequency", (-1e10, 1e10)),
        "heating_factor": ("plain", (1.0, 100.0)),
    },
    "optical-scan": {
        "scan_rate": ("scan_rate", (-1e12, 1e12)),
        "span": ("frequency", (1.0, 1e10)),
        "start_detuning": ("frequency", (-1e10, 1e10)),
        "bin_width": ("time", (1e-6, 10.0)),
        "fiber_power": ("power", (0.0, 100.0)),
        "diode_power": ("power", (0.0, 100.0)),
        "thermalize_hold": ("time", (0.0, 1e4)),
        "heating_factor": ("plain", (1.0, 100.0)),
    },
    "microwave-scan": {
        "f_start": ("frequency", (0.0, 2e10)),
        "f_end": ("frequency", (0.0, 2e10)),
        "duration": ("time", (1e-6, 1e4)),
        "rabi_frequency": ("angular", (0.0, TWO_PI * 1e9)),
        "bin_width": ("time", (1e-6, 10.0)),
        "axis_origin": ("frequency", (0.0, 2e10)),
        "fiber_power": ("power", (0.0, 100.0)),
        "diode_power": ("power", (0.0, 100.0)),
        "heating_factor": ("plain", (1.0, 100.0)),
        "residual_line_amplitude": ("plain", (0.0, 1e3)),
        "residual_line_scale": ("plain", (1e-3, 100.0)),
    },
}

_PROTOCOL_ENUMS: dict[str, dict[str, tuple[str, ...]]] = {
    "decay": {"fiber_ramp": ("instant", "linear"),
              "heating_mode": ("none", "adiabatic-heuristic")},
    "optical-scan": {"heating_mode": ("none", "adiabatic-heuristic")},
    "microwave-scan": {"simulation_mode": ("analytic", "monte-carlo"),
                       "fiber_ramp": ("instant", "linear"),
                       "heating_mode": ("none", "adiabatic-heuristic")},
}

_STRING_KEYS = {
    "protocol.type": ("decay", "optical-scan", "microwave-scan"),
    "protocol.auto_fit": AUTO_FIT_MODELS,
    "run.out_prefix": None,
}


def _parse_number(token: str, key: str, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse number {token!r}", line) from None


def _parse_value(key: str, kind: str, raw: str, line: int, is_list: bool):
    table = _UNITS[kind]
    parts = raw.split()
    unit = ""
    if len(parts) >= 2 and parts[-1] in table:
        unit = parts[-1]
        raw = " ".join(parts[:-1])
    elif len(parts) >= 2 and not is_list:
        raise ConfigError(f"{key}: unknown unit {parts[-1]!r}", line)
    factor = table[unit]
    if is_list:
        items = [s for s in (piece.strip() for piece in raw.split(",")) if s]
        if not items:
            raise ConfigError(f"{key}: empty list", line)
        return tuple(_parse_number(s, key, line) * factor for s in items)
    if "," in raw:
        raise ConfigError(f"{key}: expected a single value", line)
    return _parse_number(raw.strip(), key, line) * factor


def _check_range(key: str, value: float, legal: tuple[float, float] | None, line: int):
    if legal is None:
        return
    lo, hi = legal
    if not lo <= value <= hi:
        raise ConfigError(f"{key}: value {value:g} outside legal range [{lo:g}, {hi:g}]", line)


def _read_lines(text: str) -> dict[str, tuple[str, int]]:
    entries: dict[str, tuple[str, int]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", number)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", number)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", number)
        entries[key] = (value, number)
    return entries


def parse_config(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse and validate a configuration, applying defaults for absent keys.

    ``overrides`` maps keys to raw value strings applied on top of the file
    (used by the seed flag and the sweep command). Unknown keys are rejected
    with their line number; validation errors name the key and its legal
    range. Exactly one protocol must be configured.
    """
    entries = _read_lines(text)
    if overrides:
        for key, value in overrides.items():
            entries[key] = (str(value), 0)

    values: dict[str, object] = {}
    proto_entries: dict[str, tuple[str, int]] = {}
    for key, (raw, line) in entries.items():
        if key in _NUMERIC_KEYS:
            kind, legal, is_list = _NUMERIC_KEYS[key]
            value = _parse_value(key, kind, raw, line, is_list)
            if is_list:
                for v in value:
                    _check_range(key, v, legal, line)
            else:
                _check_range(key, value, legal, line)
            values[key] = value
        elif key in _STRING_KEYS:
            allowed = _STRING_KEYS[key]
            if allowed is not None and raw not in allowed:
                raise ConfigError(f"{key}: {raw!r} not one of {allowed}", line)
            values[key] = raw
        elif key.startswith("protocol."):
            proto_entries[key.split(".", 1)[1]] = (raw, line)
        else:
            raise ConfigError(f"unknown key {key!r}", line)

    if "type" not in proto_entries and "protocol.type" not in values:
        raise ConfigError("exactly one protocol required (missing protocol.type)")
    ptype = values.get("protocol.type")
    if ptype is None:
        raw, line = proto_entries.pop("type")
        if raw not in _STRING_KEYS["protocol.type"]:
            raise ConfigError(f"protocol.type: {raw!r} not one of "
                              f"{_STRING_KEYS['protocol.type']}", line)
        ptype = raw
    else:
        proto_entries.pop("type", None)

    auto_fit = "none"
    if "auto_fit" in proto_entries:
        raw, line = proto_entries.pop("auto_fit")
        if raw not in AUTO_FIT_MODELS:
            raise ConfigError(f"protocol.auto_fit: {raw!r} not one of {AUTO_FIT_MODELS}", line)
        auto_fit = raw
    auto_fit = values.get("protocol.auto_fit", auto_fit)

    numeric = _PROTOCOL_NUMERIC[ptype]
    enums = _PROTOCOL_ENUMS[ptype]
    proto_kwargs: dict[str, object] = {}
    for name, (raw, line) in proto_entries.items():
        full = f"protocol.{name}"
        if name in numeric:
            kind, legal = numeric[name]
            value = _parse_value(full, kind, raw, line, False)
            _check_range(full, value, legal, line)
            proto_kwargs[name] = value
        elif name in enums:
            if raw not in enums[name]:
                raise ConfigError(f"{full}: {raw!r} not one of {enums[name]}", line)
            proto_kwargs[name] = raw
        else:
            raise ConfigError(f"unknown key {full!r} for protocol {ptype!r}", line)

    def take(key: str, default):
        return values.get(key, default)

    try:
        trap = TrapConfig(
            omega_x=take("trap.omega_x", TWO_PI * 17.0),
            omega_r=take("trap.omega_r", TWO_PI * 240.0),
            center=(take("trap.center_x", 0.0), take("trap.center_y", 0.0),
                    take("trap.center_z", 0.0)),
            bottom_frequency=take("trap.bottom_frequency", 6.835e9),
        )
        diode = BeamConfig(
            role=BeamRole.DIODE_778,
            power=take("beams.diode.power", 300e-6),
            waist=take("beams.diode.waist", DIODE_WAIST),
            shift_coefficient=take("beams.diode.shift_coefficient", DIODE_SHIFT_COEFF),
            scatter_coefficient=take("beams.diode.scatter_coefficient", DIODE_SCATTER_COEFF),
            duty_cycle=take("beams.diode.duty_cycle", 1.0),
        )
        fiber = BeamConfig(
            role=BeamRole.FIBER_1080,
            power=take("beams.fiber.power", 1.0),
            waist=take("beams.fiber.waist", FIBER_WAIST),
            shift_coefficient=take("beams.fiber.shift_coefficient", FIBER_SHIFT_COEFF),
            scatter_coefficient=take("beams.fiber.scatter_coefficient", FIBER_SCATTER_COEFF),
            duty_cycle=take("beams.fiber.duty_cycle", 1.0),
        )
        cloud = CloudSettings(
            n_phys=float(take("cloud.n_phys", 1.8e6)),
            n_sim=int(take("cloud.n_sim", 20000)),
            temperature=take("cloud.T", 18e-6),
        )
        spectrum = HyperfineSpectrum(
            line_offsets=tuple(take("spectrum.line_offsets", (0.0, 7.73e6, 18.59e6, 32.08e6))),
            line_weights=tuple(take("spectrum.line_weights", (1.0, 1.0, 1.0, 1.0))),
            base_linewidth_fwhm=take("spectrum.base_fwhm", 2.6e6),
            shift_slope=take("spectrum.shift_slope", 2.4e6),
            broadening_slope=take("spectrum.broadening_slope", 3.0e6),
        )
        protocol_cls = {"decay": DecayProtocol, "optical-scan": OpticalScanProtocol,
                        "microwave-scan": MicrowaveScanProtocol}[ptype]
        protocol = protocol_cls(**proto_kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    seed = int(take("run.seed", 1))
    return RunConfig(trap=trap, diode=diode, fiber=fiber, cloud=cloud,
                     spectrum=spectrum, protocol=protocol, auto_fit=auto_fit,
                     seed=seed, out_prefix=str(take("run.out_prefix", "run")))


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse_config(serialize_config(c)) reproduces c exactly.

    All values are written in their stored base units (rad/s for angular
    frequencies), so no unit conversion happens on the way back in.
    """
    lines = []

    def emit(key: str, value):
        if isinstance(value, tuple):
            lines.append(f"{key} = {', '.join(repr(float(v)) for v in value)}")
        elif isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")

    emit("trap.omega_x", cfg.trap.omega_x)
    emit("trap.omega_r", cfg.trap.omega_r)
    emit("trap.center_x", cfg.trap.center[0])
    emit("trap.center_y", cfg.trap.center[1])
    emit("trap.center_z", cfg.trap.center[2])
    emit("trap.bottom_frequency", cfg.trap.bottom_frequency)
    for label, beam in (("diode", cfg.diode), ("fiber", cfg.fiber)):
        emit(f"beams.{label}.power", beam.power)
        emit(f"beams.{label}.waist", beam.waist)
        emit(f"beams.{label}.shift_coefficient", beam.shift_coefficient)
        emit(f"beams.{label}.scatter_coefficient", beam.scatter_coefficient)
        emit(f"beams.{label}.duty_cycle", beam.duty_cycle)
    emit("cloud.n_phys", cfg.cloud.n_phys)
    emit("cloud.n_sim", cfg.cloud.n_sim)
    emit("cloud.T", cfg.cloud.temperature)
    emit("spectrum.line_offsets", tuple(cfg.spectrum.line_offsets))
    emit("spectrum.line_weights", tuple(cfg.spectrum.line_weights))
    emit("spectrum.base_fwhm", cfg.spectrum.base_linewidth_fwhm)
    emit("spectrum.shift_slope", cfg.spectrum.shift_slope)
    emit("spectrum.broadening_slope", cfg.spectrum.broadening_slope)
    emit("protocol.type", cfg.protocol_name)
    numeric = _PROTOCOL_NUMERIC[cfg.protocol_name]
    enums = _PROTOCOL_ENUMS[cfg.protocol_name]
    for name in list(numeric) + list(enums):
        value = getattr(cfg.protocol, name)
        if value is None:
            continue
        emit(f"protocol.{name}", value)
    emit("protocol.auto_fit", cfg.auto_fit)
    emit("run.seed", cfg.seed)
    emit("run.out_prefix", cfg.out_prefix)
    return "\n".join(lines) + "\n"


def config_digest(cfg: RunConfig) -> str:
    """SHA-256 of the canonical serialization; recorded in every output file."""
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


def override_config(cfg: RunConfig, key: str, raw_value: str) -> RunConfig:
    """Return a copy of ``cfg`` with one key replaced, re-validating everything."""
    text = serialize_config(cfg)
    return parse_config(text, overrides={key: raw_value})
