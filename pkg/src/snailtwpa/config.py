"""Run configuration: flat INI sections with typed, validated keys.

Unknown sections or keys are errors.  Frequencies are given in GHz.  ``e_j2`` and
``c_farad`` accept the word ``calibrate`` to solve them from the calibration targets.
"""

import configparser
from dataclasses import dataclass, field, fields, replace
import os

from .mixing import TIERS

CALIBRATE = "calibrate"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceBlock:
    alpha: float = 0.16
    e_j2: str = CALIBRATE  # GHz or "calibrate"
    c_farad: str = CALIBRATE  # F or "calibrate"
    ratio: float = 1.5
    n_light: int = 2
    repetitions: int = 147
    z_term: float = 50.0
    target_z_ohm: float = 50.0
    target_edge_ghz: float = 11.5
    target_flux: float = 0.38


@dataclass(frozen=True)
class OperatingBlock:
    flux: float = 0.38
    fp_ghz: float = 6.2
    power_dbm: float = -91.4
    cells: int = 0  # 0: repetitions * supercell length
    signal_start_ghz: float = 0.2
    signal_stop_ghz: float = 6.0
    signal_step_ghz: float = 0.1
    flux_start: float = 0.0
    flux_stop: float = 0.5
    flux_points: int = 501
    f_start_ghz: float = 0.05
    f_stop_ghz: float = 30.0
    f_points: int = 600
    tone_power_dbm: float = -111.0
    harmonic_start_ghz: float = 1.0
    harmonic_stop_ghz: float = 14.0
    harmonic_step_ghz: float = 0.1
    shg_f_ghz: float = 5.0
    shg_eps_ratio: float = 0.1
    shg_periods: float = 3.0
    oracle_cells: int = 60
    oracle_freqs_ghz: str = "1.4,2.0,2.4,3.0,3.4,4.0,4.4,5.0,5.4,5.8"


@dataclass(frozen=True)
class ExecutionBlock:
    tier: str = "cascaded"
    oracle: bool = False
    rectification: bool = True
    out: str = "out"
    jobs: int = 1
    seed: int = 0


@dataclass(frozen=True)
class NoiseBlock:
    data: str = ""
    n_in: float = 0.5
    f_ghz: float = 6.034


@dataclass(frozen=True)
class RunConfig:
    device: DeviceBlock = field(default_factory=DeviceBlock)
    operating: OperatingBlock = field(default_factory=OperatingBlock)
    execution: ExecutionBlock = field(default_factory=ExecutionBlock)
    noise: NoiseBlock = field(default_factory=NoiseBlock)

    def validate(self):
        d, o, e = self.device, self.operating, self.execution
        for name in ("e_j2", "c_farad"):
            v = getattr(d, name)
            if v != CALIBRATE:
                try:
                    if float(v) <= 0:
                        raise ValueError
                except ValueError:
                    raise ConfigError(f"device.{name} must be a positive number or '{CALIBRATE}', got {v!r}") from None
        if (d.e_j2 == CALIBRATE) != (d.c_farad == CALIBRATE):
            raise ConfigError("device.e_j2 and device.c_farad must both be numbers or both 'calibrate'")
        if not 0 < d.alpha < 1:
            raise ConfigError(f"device.alpha must lie in (0, 1), got {d.alpha}")
        if d.ratio <= 0 or d.n_light < 0 or d.repetitions < 1 or d.z_term <= 0:
            raise ConfigError("device ratio, n_light, repetitions and z_term must be positive")
        if e.tier not in TIERS:
            raise ConfigError(f"execution.tier must be one of {TIERS}, got {e.tier!r}")
        if e.jobs < 1:
            raise ConfigError("execution.jobs must be >= 1")
        if o.cells < 0 or (o.cells and o.cells % (d.n_light + 1)):
            raise ConfigError(f"operating.cells must be a multiple of {d.n_light + 1}")
        if o.signal_step_ghz <= 0 or o.signal_stop_ghz <= o.signal_start_ghz:
            raise ConfigError("signal grid must be increasing with a positive step")
        if o.flux_points < 2 or o.f_points < 2:
            raise ConfigError("grids need at least two points")
        try:
            self.oracle_freqs()
        except ValueError:
            raise ConfigError(f"operating.oracle_freqs_ghz is not a list of numbers: {o.oracle_freqs_ghz!r}") from None
        return self

    def oracle_freqs(self):
        return [float(v) * 1e9 for v in self.operating.oracle_freqs_ghz.split(",") if v.strip()]

    def n_cells(self):
        return self.operating.cells or self.device.repetitions * (self.device.n_light + 1)

    def to_ini(self):
        lines = []
        for sec in fields(self):
            block = getattr(self, sec.name)
            lines.append(f"[{sec.name}]")
            for f in fields(block):
                v = getattr(block, f.name)
                if isinstance(v, bool):
                    v = "true" if v else "false"
                elif isinstance(v, float):
                    v = repr(v)
                lines.append(f"{f.name} = {v}")
            lines.append("")
        return "\n".join(lines)


def _convert(raw, typ, where):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {typ.__name__}") from None


_TYPES = {"float": float, "int": int, "bool": bool, "str": str}


def _field_type(f):
    t = f.type
    return _TYPES.get(t, t) if isinstance(t, str) else t


def load_config(path=None, overrides=None) -> RunConfig:
    """Read an INI file (optional) and apply ``{section: {key: value}}`` overrides."""
    cfg = RunConfig()
    blocks = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    values = {name: {} for name in blocks}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in cp.sections():
            if sec not in blocks:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for key, raw in cp.items(sec):
                values[sec][key] = raw
    for sec, kv in (overrides or {}).items():
        for key, val in kv.items():
            if val is not None:
                values[sec][key] = val
    new = {}
    for name, block in blocks.items():
        known = {f.name: f for f in fields(block)}
        kw = {}
        for key, raw in values[name].items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            typ = _field_type(known[key])
            kw[key] = raw if not isinstance(raw, str) else _convert(raw, typ, f"{name}.{key}")
        new[name] = replace(block, **kw)
    return RunConfig(**new).validate()
