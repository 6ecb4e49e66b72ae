"""Run configuration: JSON file + ``--section.key=value`` overrides.

Schema (all sections optional; defaults shown by the dataclasses below)::

    {
      "seed": 0,
      "system": {"D": 5.55, "E": 1.85, "g": 2.0023, "frame": [0, 0, 0]},
      "field":  {"axis": [0, 0, 1], "magnitude": 0.0,
                 "grid": {"start": 0, "stop": 200, "num": 201}},
      "bath":   {"crystal": "builtin:dense_proton", "r_bath": 2.0, "r_dipole": 0.8,
                 "overrides": null, "max_spins": 20000},
      "cce":    {"max_order": 2, "mode": "sampled", "n_mc": 100, "qubit": ["0", "-"],
                 "tau": {"start": 0, "stop": 20, "num": 50}, "mf_axis": "z",
                 "auto_extend": 3, "workers": 1, "fit": "envelope"},
      "optics": {...},
      "output": {"directory": "out", "format": "csv"}
    }

Grids are either an explicit list or ``{"start", "stop", "num"}`` (linear).
The ``cce.tau`` grid holds the free-evolution half time tau in us; output
times are 2 tau. Relative file paths resolve against the config file's
directory; ``builtin:<name>`` refers to the crystal specs shipped in
``molqubit/data``.

Seeds: one master ``seed``; each module draws ``child_seed(seed, name)``,
the first 8 bytes of sha256("<seed>:<name>") as an unsigned integer.
"""

import copy
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass
from dataclasses import field as dc_field
from importlib import resources
from pathlib import Path

import numpy as np

from .spin import LABELS

OUTPUT_ENV = "MOLQUBIT_OUTPUT_DIR"
BUILTIN_PREFIX = "builtin:"


class ConfigError(ValueError):
    pass


def child_seed(seed, name):
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def resolve_grid(spec, what="grid"):
    """List or {start, stop, num} -> float array."""
    if isinstance(spec, dict):
        extra = set(spec) - {"start", "stop", "num"}
        if extra or not {"start", "stop", "num"} <= set(spec):
            raise ConfigError(f"{what}: expected keys start, stop, num; got {sorted(spec)}")
        num = spec["num"]
        if not isinstance(num, int) or num < 1:
            raise ConfigError(f"{what}.num must be a positive integer")
        return np.linspace(float(spec["start"]), float(spec["stop"]), num)
    try:
        arr = np.asarray(spec, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{what}: expected a list of numbers or {{start, stop, num}}") from None
    if arr.ndim != 1 or len(arr) == 0:
        raise ConfigError(f"{what}: must be a non-empty 1-D list")
    return arr


def _finite(name, v, positive=False, nonneg=False):
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise ConfigError(f"{name} must be a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{name} must be > 0, got {v}")
    if nonneg and v < 0:
        raise ConfigError(f"{name} must be >= 0, got {v}")


def _vec3(name, v):
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ConfigError(f"{name} must be a list of 3 numbers")
    for x in v:
        _finite(name, x)
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class SystemConfig:
    D: float = 5.55
    E: float = 1.85
    g: float = 2.0023
    frame: tuple = (0.0, 0.0, 0.0)

    def validate(self):
        _finite("system.D", self.D)
        _finite("system.E", self.E)
        _finite("system.g", self.g, positive=True)
        _vec3("system.frame", list(self.frame))
        if abs(self.E) > abs(self.D) / 3 + 1e-12:
            raise ConfigError(f"system: |E| = {abs(self.E)} exceeds |D|/3 = {abs(self.D) / 3}")


@dataclass(frozen=True)
class FieldConfig:
    axis: tuple = (0.0, 0.0, 1.0)
    magnitude: float = 0.0
    grid: object = dc_field(default_factory=lambda: {"start": 0.0, "stop": 200.0, "num": 201})

    def validate(self):
        a = np.asarray(_vec3("field.axis", list(self.axis)))
        if np.linalg.norm(a) == 0:
            raise ConfigError("field.axis must be nonzero")
        _finite("field.magnitude", self.magnitude)
        g = resolve_grid(self.grid, "field.grid")
        if np.any(np.diff(g) <= 0):
            raise ConfigError("field.grid must be strictly ascending")

    @property
    def unit_axis(self):
        a = np.asarray(self.axis, dtype=float)
        return a / np.linalg.norm(a)

    @property
    def vector(self):
        return self.unit_axis * self.magnitude

    @property
    def b_grid(self):
        return resolve_grid(self.grid, "field.grid")


@dataclass(frozen=True)
class BathConfig:
    crystal: str = "builtin:dense_proton"
    r_bath: float = 2.0
    r_dipole: float = 0.8
    overrides: object = None
    max_spins: int = 20000

    def validate(self):
        if not isinstance(self.crystal, str) or not self.crystal:
            raise ConfigError("bath.crystal must be a path or builtin:<name>")
        _finite("bath.r_bath", self.r_bath, positive=True)
        _finite("bath.r_dipole", self.r_dipole, nonneg=True)
        if not isinstance(self.max_spins, int) or self.max_spins < 1:
            raise ConfigError("bath.max_spins must be a positive integer")


@dataclass(frozen=True)
class CCEConfig:
    max_order: int = 2
    mode: str = "sampled"
    n_mc: int = 100
    qubit: tuple = ("0", "-")
    tau: object = dc_field(default_factory=lambda: {"start": 0.0, "stop": 20.0, "num": 50})
    mf_axis: str = "z"
    auto_extend: int = 3
    workers: int = 1
    fit: str = "envelope"

    def validate(self):
        if self.max_order not in (1, 2, 3):
            raise ConfigError(f"cce.max_order must be 1, 2 or 3, got {self.max_order!r}")
        if self.mode not in ("mixed", "sampled"):
            raise ConfigError(f"cce.mode must be 'mixed' or 'sampled', got {self.mode!r}")
        if not isinstance(self.n_mc, int) or self.n_mc < 1:
            raise ConfigError("cce.n_mc must be a positive integer")
        q = tuple(self.qubit)
        if len(q) != 2 or q[0] == q[1] or any(x not in LABELS for x in q):
            raise ConfigError(f"cce.qubit must be two distinct tags from {LABELS}, got {self.qubit!r}")
        t = resolve_grid(self.tau, "cce.tau")
        if np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ConfigError("cce.tau must be non-negative and strictly ascending")
        if self.mf_axis not in ("z", "hyperfine"):
            raise ConfigError("cce.mf_axis must be 'z' or 'hyperfine'")
        if not isinstance(self.auto_extend, int) or self.auto_extend < 0:
            raise ConfigError("cce.auto_extend must be a non-negative integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("cce.workers must be a positive integer")
        if self.fit not in ("envelope", "raw"):
            raise ConfigError("cce.fit must be 'envelope' or 'raw'")

    @property
    def tau_grid(self):
        return resolve_grid(self.tau, "cce.tau")


@dataclass(frozen=True)
class OpticsConfig:
    """Rate and protocol parameters. Rates in 1/us, frequencies in GHz, times in us.

    The rate defaults are placeholders of plausible magnitude, not measured values.
    """

    R0: float = 0.02
    holeburn_R0: float = 1e-5
    gamma_h: float = 3.0
    k_dec: float = 1.0
    branching: tuple = (1 / 3, 1 / 3, 1 / 3)
    T1: float = 1210.0
    k_mw: float = 1.0
    mw_pair: tuple = ("0", "+")
    laser: float = 0.0
    pulse: float = 2000.0
    init: float = 2000.0
    read: float = 50.0
    mw_linewidth: float = 0.1
    mw_grid: object = dc_field(default_factory=lambda: {"start": 0.0, "stop": 10.0, "num": 201})
    t1_waits: object = dc_field(default_factory=lambda: {"start": 0.0, "stop": 6000.0, "num": 31})
    zpl_nm: float = 1016.0
    gamma_inh: float = 50.0
    ensemble_samples: int = 801
    ensemble_shape: str = "gaussian"
    df_grid: object = dc_field(default_factory=lambda: {"start": -20.0, "stop": 20.0, "num": 401})

    def validate(self):
        for k in ("R0", "holeburn_R0", "k_dec", "k_mw", "read", "init", "pulse"):
            _finite(f"optics.{k}", getattr(self, k), nonneg=True)
        for k in ("gamma_h", "mw_linewidth", "zpl_nm", "gamma_inh"):
            _finite(f"optics.{k}", getattr(self, k), positive=True)
        _finite("optics.laser", self.laser)
        if not (isinstance(self.T1, (int, float)) and self.T1 > 0):
            raise ConfigError("optics.T1 must be > 0 (use 1e300 for no relaxation)")
        b = list(self.branching)
        if len(b) != 3 or any(x < 0 for x in b) or abs(sum(b) - 1) > 1e-9:
            raise ConfigError("optics.branching must be 3 non-negative fractions summing to 1")
        p = tuple(self.mw_pair)
        if len(p) != 2 or p[0] == p[1] or any(x not in LABELS for x in p):
            raise ConfigError(f"optics.mw_pair must be two distinct tags from {LABELS}")
        if not isinstance(self.ensemble_samples, int) or self.ensemble_samples < 2:
            raise ConfigError("optics.ensemble_samples must be an integer >= 2")
        if self.ensemble_shape not in ("gaussian", "flat"):
            raise ConfigError("optics.ensemble_shape must be 'gaussian' or 'flat'")
        resolve_grid(self.mw_grid, "optics.mw_grid")
        if np.any(resolve_grid(self.t1_waits, "optics.t1_waits") < 0):
            raise ConfigError("optics.t1_waits must be non-negative")
        resolve_grid(self.df_grid, "optics.df_grid")


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    format: str = "csv"

    def validate(self):
        if not isinstance(self.directory, str) or not self.directory:
            raise ConfigError("output.directory must be a non-empty string")
        if self.format != "csv":
            raise ConfigError(f"output.format: only 'csv' is supported, got {self.format!r}")


SECTIONS = {
    "system": SystemConfig,
    "field": FieldConfig,
    "bath": BathConfig,
    "cce": CCEConfig,
    "optics": OpticsConfig,
    "output": OutputConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    system: SystemConfig = dc_field(default_factory=SystemConfig)
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    bath: BathConfig = dc_field(default_factory=BathConfig)
    cce: CCEConfig = dc_field(default_factory=CCEConfig)
    optics: OpticsConfig = dc_field(default_factory=OpticsConfig)
    output: OutputConfig = dc_field(default_factory=OutputConfig)
    base_dir: str = "."

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        for name in SECTIONS:
            getattr(self, name).validate()
        crystal_path(self)
        overrides_path(self)
        return self

    def seed_for(self, module):
        return child_seed(self.seed, module)

    def to_dict(self):
        out = {"seed": self.seed}
        for name in SECTIONS:
            out[name] = _plain(dataclasses.asdict(getattr(self, name)))
        return out

    @property
    def output_dir(self):
        env = os.environ.get(OUTPUT_ENV)
        if env:
            return Path(env)
        d = Path(self.output.directory)
        return d if d.is_absolute() else Path(self.base_dir) / d


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _resolve_path(cfg, p):
    path = Path(p)
    return path if path.is_absolute() else Path(cfg.base_dir) / path


def builtin_crystals():
    return sorted(f.name[:-5] for f in resources.files("molqubit.data").iterdir() if f.name.endswith(".json"))


def crystal_path(cfg):
    c = cfg.bath.crystal
    if c.startswith(BUILTIN_PREFIX):
        name = c[len(BUILTIN_PREFIX):]
        if name not in builtin_crystals():
            raise ConfigError(f"bath.crystal: unknown builtin {name!r}; available: {builtin_crystals()}")
        return Path(str(resources.files("molqubit.data") / f"{name}.json"))
    path = _resolve_path(cfg, c)
    if not path.is_file():
        raise ConfigError(f"bath.crystal: file not found: {path}")
    return path


def overrides_path(cfg):
    if cfg.bath.overrides in (None, ""):
        return None
    path = _resolve_path(cfg, cfg.bath.overrides)
    if not path.is_file():
        raise ConfigError(f"bath.overrides: file not found: {path}")
    return path


def _section_from(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {unknown}; known: {sorted(known)}")
    kw = {}
    for k, v in data.items():
        kw[k] = tuple(v) if isinstance(v, list) and k in ("frame", "axis", "qubit", "branching", "mw_pair") else v
    return cls(**kw)


def from_dict(data, base_dir="."):
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    unknown = sorted(set(data) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {unknown}; known: {['seed', *SECTIONS]}")
    kw = {name: _section_from(name, cls, data.get(name, {})) for name, cls in SECTIONS.items()}
    cfg = RunConfig(seed=data.get("seed", 0), base_dir=str(base_dir), **kw)
    return cfg.validate()


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data, overrides):
    """Apply ``section.key=value`` strings to a raw config dict (values parsed as JSON when possible)."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        if parts == ["seed"]:
            data["seed"] = _parse_value(value)
            continue
        if len(parts) != 2 or parts[0] not in SECTIONS:
            raise ConfigError(f"override {item!r}: key must be 'seed' or <section>.<key> with section in {list(SECTIONS)}")
        section, k = parts
        known = {f.name for f in dataclasses.fields(SECTIONS[section])}
        if k not in known:
            raise ConfigError(f"override {item!r}: unknown key {k!r} in section {section!r}; known: {sorted(known)}")
        data.setdefault(section, {})[k] = _parse_value(value)
    return data


def load_config(path=None, overrides=()):
    """Load, override and validate. ``path=None`` starts from defaults."""
    if path is None:
        data, base = {}, Path.cwd()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        base = p.resolve().parent
    return from_dict(apply_overrides(data, overrides), base)
