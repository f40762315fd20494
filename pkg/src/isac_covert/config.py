"""Experiment configuration: a versioned TOML schema with line-anchored errors.

Complex numbers are written as ``"re,im"`` strings.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .comms import SymbolFrame
from .covert import WardenChannel
from .scenario import (
    ArrayGeometry,
    ClutterDopplerMode,
    ClutterDopplerModel,
    DopplerGrid,
    NoiseModel,
    Scatterer,
    ScattererKind,
    Scenario,
)
from .sca import DesignParams, PhaseMode

CONFIG_SCHEMA = "isac-config/1"
DESK_GEOMETRY = ArrayGeometry(4, 4, 16)

_KNOWN = {
    "": {"schema", "seed", "geometry", "target", "clutter", "doppler", "noise", "design",
         "symbols", "warden", "sweep", "verify", "output"},
    "geometry": {"num_tx", "num_rx", "num_slots"},
    "target": {"angle", "delay", "power_dbm"},
    "clutter": {"angle", "delay", "power_dbm"},
    "doppler": {"grid", "count", "start", "stop", "clutter_mode", "clutter_coefficients",
                "eval_grid", "eval_count", "baseline"},
    "noise": {"radar_dbm", "warden_dbm"},
    "design": {"papr_cap", "amp_floor", "phase_tol", "covert_eps", "penalty", "stop_tol_db",
               "max_outer", "phase_mode", "feas_tol", "gap_tol", "max_inner"},
    "symbols": {"bits", "key"},
    "warden": {"h", "path_gain_db", "key"},
    "sweep": {"xi", "eps", "snr_db", "ser_trials"},
    "verify": {"instances", "echo_draws", "kl_samples", "willie_trials"},
    "output": {"dir"},
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class SweepSpec:
    xi: tuple[float, ...] = (math.pi / 12, math.pi / 6, math.pi / 4)
    eps: tuple[float, ...] = (0.05, 0.1, 0.2)
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    ser_trials: int = 10_000


@dataclass(frozen=True)
class VerifySpec:
    instances: int = 10
    echo_draws: int = 100_000
    kl_samples: int = 20_000
    willie_trials: int = 20_000


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    params: DesignParams
    seed: int
    bits: str | None = None  # explicit bit string, else a seeded random frame
    symbol_key: int = 0
    warden_h: tuple[complex, ...] | None = None
    warden_path_gain_db: float | None = -128.0
    warden_key: int = 0
    eval_grid: DopplerGrid | None = None
    baseline_grid: DopplerGrid | None = None
    sweep: SweepSpec = field(default_factory=SweepSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)
    out_dir: str = "out"

    def symbols(self) -> SymbolFrame:
        n = self.scenario.geometry.tx_dim
        if self.bits is not None:
            frame = SymbolFrame.from_bitstring(self.bits)
            if len(frame) != n:
                raise ConfigError(f"symbols.bits encodes {len(frame)} symbols, need {n}")
            return frame
        return SymbolFrame.random(n, self.seed, self.symbol_key)

    def warden(self) -> WardenChannel:
        noise = self.scenario.noise
        if self.warden_h is not None:
            if len(self.warden_h) != self.scenario.geometry.num_tx:
                raise ConfigError(
                    f"warden.h has {len(self.warden_h)} entries, need {self.scenario.geometry.num_tx}"
                )
            return WardenChannel(list(self.warden_h), noise.warden_noise)
        return WardenChannel.rayleigh(
            self.scenario.geometry.num_tx, self.warden_path_gain_db, noise.warden_noise_dbm,
            self.seed, self.warden_key,
        )

    def with_geometry(self, geometry: ArrayGeometry) -> "ExperimentConfig":
        sc = self.scenario
        return replace(
            self,
            scenario=Scenario(geometry, sc.target, sc.clutters, sc.doppler_grid, sc.noise,
                              sc.clutter_doppler),
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))


# -- parsing --------------------------------------------------------------------


def _locate(text: str, path: tuple) -> int | None:
    """1-based line of a key given as (table, [array index,] key), best effort."""
    table, *rest = path
    index = rest[0] if rest and isinstance(rest[0], int) else None
    key = rest[-1] if rest and isinstance(rest[-1], str) else None
    current, seen = "", -1
    header_line = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\[\s*([\w.]+)\s*\]\]$", line) or re.match(r"^\[\s*([\w.]+)\s*\]$", line)
        if m:
            current = m.group(1)
            if current == table:
                seen += 1
                if index is None or seen == index:
                    header_line = no
            continue
        in_table = current == table and (index is None or seen == index)
        if table == "" and current == "":
            in_table = True
        if in_table and key and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return header_line


class _Reader:
    def __init__(self, data: dict, text: str, source: str):
        self.data, self.text, self.source = data, text, source

    def fail(self, message, path):
        raise ConfigError(message, _locate(self.text, path), self.source)

    def table(self, name, index=None) -> dict:
        value = self.data.get(name, {}) if index is None else self.data[name][index]
        if not isinstance(value, dict):
            self.fail(f"'{name}' must be a table", (name,))
        path = (name, index) if index is not None else (name,)
        for key in value:
            if key not in _KNOWN[name]:
                self.fail(f"unknown key '{name}.{key}'", (*path, key))
        return value

    def get(self, tbl, name, key, kind, default=None, index=None, required=False):
        path = (name, index, key) if index is not None else (name, key)
        if key not in tbl:
            if required:
                self.fail(f"missing required key '{name}.{key}'", path[:-1])
            return default
        value = tbl[key]
        try:
            return _coerce(value, kind)
        except (TypeError, ValueError) as exc:
            self.fail(f"{name}.{key}: {exc}", path)


def _coerce(value, kind):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    if kind == "floats":
        if not isinstance(value, list) or not value:
            raise TypeError("expected a nonempty array of numbers")
        return tuple(_coerce(v, float) for v in value)
    if kind == "complex":
        if not isinstance(value, list) or not value:
            raise TypeError('expected a nonempty array of "re,im" strings')
        return tuple(parse_complex(v) for v in value)
    if kind == "pairs":
        if not isinstance(value, list):
            raise TypeError("expected an array of [rho, offset] pairs")
        out = []
        for v in value:
            if not isinstance(v, list) or len(v) != 2:
                raise TypeError("expected an array of [rho, offset] pairs")
            out.append((_coerce(v[0], float), _coerce(v[1], float)))
        return tuple(out)
    raise AssertionError(kind)


def parse_complex(text) -> complex:
    if not isinstance(text, str):
        raise TypeError(f'expected a "re,im" string, got {text!r}')
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f'expected "re,im", got {text!r}')
    return complex(float(parts[0]), float(parts[1]))


def format_complex(z: complex) -> str:
    return f"{float(z.real)!r},{float(z.imag)!r}"


def _grid(r: _Reader, tbl, explicit_key, count_key, required=False) -> DopplerGrid | None:
    values = r.get(tbl, "doppler", explicit_key, "floats")
    count = r.get(tbl, "doppler", count_key, int)
    try:
        if values is not None:
            return DopplerGrid(values)
        if count is not None:
            start = r.get(tbl, "doppler", "start", float, -0.5)
            stop = r.get(tbl, "doppler", "stop", float, 0.5)
            return DopplerGrid.uniform(count, start, stop)
    except ValueError as exc:
        r.fail(f"doppler.{explicit_key}: {exc}", ("doppler", explicit_key))
    if required:
        return DopplerGrid((0.0,))
    return None


def loads(text: str, source: str = "<config>", desk_scale: bool = False) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", int(m.group(1)) if m else None, source)
    r = _Reader(data, text, source)
    for key in data:
        if key not in _KNOWN[""]:
            r.fail(f"unknown top-level key '{key}'", ("", key))

    schema = data.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        r.fail(f"unsupported schema {schema!r} (expected {CONFIG_SCHEMA!r})", ("", "schema"))
    seed = r.get(data, "", "seed", int, required=True) if "seed" in data else None
    if seed is None:
        r.fail("missing required key 'seed'", ("",))
    if not 0 <= seed < 2**64:
        r.fail("seed must be an unsigned 64-bit integer", ("", "seed"))

    try:
        g = r.table("geometry")
        geometry = ArrayGeometry(
            r.get(g, "geometry", "num_tx", int, required=True),
            r.get(g, "geometry", "num_rx", int, required=True),
            r.get(g, "geometry", "num_slots", int, required=True),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        r.fail(str(exc), ("geometry",))
    if desk_scale:
        geometry = DESK_GEOMETRY

    def scatterer(tbl, name, kind, index=None):
        try:
            return Scatterer(
                r.get(tbl, name, "angle", float, required=True, index=index),
                r.get(tbl, name, "delay", int, 0, index=index),
                r.get(tbl, name, "power_dbm", float, required=True, index=index),
                kind,
            )
        except ConfigError:
            raise
        except ValueError as exc:
            r.fail(str(exc), (name, index) if index is not None else (name,))

    target = scatterer(r.table("target"), "target", ScattererKind.TARGET)
    clutter_list = data.get("clutter", [])
    if not isinstance(clutter_list, list):
        r.fail("'clutter' must be an array of tables ([[clutter]])", ("clutter",))
    clutters = tuple(
        scatterer(r.table("clutter", i), "clutter", ScattererKind.CLUTTER, i)
        for i in range(len(clutter_list))
    )

    dop = r.table("doppler")
    grid = _grid(r, dop, "grid", "count", required=True)
    mode = r.get(dop, "doppler", "clutter_mode", str, "static")
    try:
        mode = ClutterDopplerMode(mode)
    except ValueError:
        r.fail(f"doppler.clutter_mode must be 'static' or 'affine', got {mode!r}",
               ("doppler", "clutter_mode"))
    coeffs = r.get(dop, "doppler", "clutter_coefficients", "pairs", ())
    if len(coeffs) > len(clutters):
        r.fail("more clutter Doppler coefficients than clutters",
               ("doppler", "clutter_coefficients"))
    eval_grid = _grid(r, dop, "eval_grid", "eval_count")
    baseline = r.get(dop, "doppler", "baseline", "floats")
    try:
        baseline = DopplerGrid(baseline) if baseline is not None else None
    except ValueError as exc:
        r.fail(f"doppler.baseline: {exc}", ("doppler", "baseline"))

    nz = r.table("noise")
    try:
        noise = NoiseModel(
            r.get(nz, "noise", "radar_dbm", float, required=True),
            r.get(nz, "noise", "warden_dbm", float, required=True),
        )
        scenario = Scenario(geometry, target, clutters, grid, noise,
                            ClutterDopplerModel(mode, coeffs))
    except ConfigError:
        raise
    except ValueError as exc:
        r.fail(str(exc), ("noise",))

    ds = r.table("design")
    kw: dict[str, Any] = {}
    for key, kind in (("papr_cap", float), ("amp_floor", float), ("phase_tol", float),
                      ("penalty", float), ("stop_tol_db", float), ("max_outer", int),
                      ("feas_tol", float), ("gap_tol", float), ("max_inner", int)):
        value = r.get(ds, "design", key, kind)
        if value is not None:
            kw[key] = value
    if "covert_eps" in ds:
        eps = ds["covert_eps"]
        kw["covert_eps"] = math.inf if eps == "off" else r.get(ds, "design", "covert_eps", float)
    mode_text = r.get(ds, "design", "phase_mode", str)
    if mode_text is not None:
        try:
            kw["phase_mode"] = PhaseMode(mode_text)
        except ValueError:
            r.fail(f"design.phase_mode must be 'wedge' or 'line', got {mode_text!r}",
                   ("design", "phase_mode"))
    try:
        params = DesignParams(**kw)
    except ValueError as exc:
        key = next((k for k in kw if k in str(exc)), None)
        r.fail(f"design: {exc}", ("design", key) if key else ("design",))

    sy = r.table("symbols")
    bits = r.get(sy, "symbols", "bits", str)
    symbol_key = r.get(sy, "symbols", "key", int, 0)
    if bits is not None:
        clean = "".join(bits.split())
        if set(clean) - {"0", "1"} or len(clean) != 2 * geometry.tx_dim:
            r.fail(f"symbols.bits must hold {2 * geometry.tx_dim} binary digits",
                   ("symbols", "bits"))

    wd = r.table("warden")
    h = r.get(wd, "warden", "h", "complex")
    gain = r.get(wd, "warden", "path_gain_db", float)
    if h is not None and gain is not None:
        r.fail("give either warden.h or warden.path_gain_db, not both", ("warden", "h"))
    if h is not None and len(h) != geometry.num_tx:
        r.fail(f"warden.h has {len(h)} entries, need {geometry.num_tx}", ("warden", "h"))
    if h is None and gain is None:
        gain = -128.0

    sw = r.table("sweep")
    default = SweepSpec()
    sweep = SweepSpec(
        r.get(sw, "sweep", "xi", "floats", default.xi),
        r.get(sw, "sweep", "eps", "floats", default.eps),
        r.get(sw, "sweep", "snr_db", "floats", default.snr_db),
        r.get(sw, "sweep", "ser_trials", int, default.ser_trials),
    )
    for x in sweep.xi:
        if not 0 < x < math.pi / 2:
            r.fail("sweep.xi values must lie in (0, pi/2)", ("sweep", "xi"))
    for e in sweep.eps:
        if not e >= 0:
            r.fail("sweep.eps values must be >= 0", ("sweep", "eps"))
    if sweep.ser_trials < 1000:
        r.fail("sweep.ser_trials must be >= 1000", ("sweep", "ser_trials"))

    vf = r.table("verify")
    dv = VerifySpec()
    verify = VerifySpec(
        r.get(vf, "verify", "instances", int, dv.instances),
        r.get(vf, "verify", "echo_draws", int, dv.echo_draws),
        r.get(vf, "verify", "kl_samples", int, dv.kl_samples),
        r.get(vf, "verify", "willie_trials", int, dv.willie_trials),
    )

    out = r.get(r.table("output"), "output", "dir", str, "out")
    return ExperimentConfig(
        scenario, params, seed, bits, symbol_key, h, gain,
        r.get(wd, "warden", "key", int, 0), eval_grid, baseline, sweep, verify, out,
    )


def load(path, desk_scale: bool = False) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(p))
    return loads(text, str(p), desk_scale)
