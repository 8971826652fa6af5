"""Run configuration: an INI document with fixed sections and keys.

Grammar: ``[section]`` headers, ``key = value`` lines, ``#`` or ``;`` comments
(whole-line or inline).  Every key is optional and falls back to the default
listed in ``SCHEMA``; unknown sections or keys are rejected.  Lists are comma
separated.
"""

from __future__ import annotations

import configparser
import copy
import re
from importlib import resources
from pathlib import Path

from .errors import ConfigError

POTENTIALS = ("harmonic", "free", "table")
INITIAL_KINDS = ("ground", "coherent", "gaussian", "eigenstate")
NOISE_KINDS = ("none", "dephasing", "lowering", "random")
METHODS = ("eigendecomposition", "crank_nicolson", "rk4", "exact_unitary_conjugation")

# section -> key -> (type, default)
SCHEMA = {
    "grid": {"n_points": (int, 256), "length": (float, 20.0)},
    "physics": {"mass": (float, 1.0), "omega": (float, 1.0), "mu": (float, 1.0),
                "potential": (str, "harmonic"), "potential_table": (list, []),
                "momentum_scheme": (str, "spectral")},
    "initial": {"kind": (str, "ground"), "displacement": (float, 0.0), "width": (float, 1.0),
                "momentum": (float, 0.0), "level": (int, 0)},
    "noise": {"kind": (str, "none"), "gamma": (float, 0.0),
              "xi_distribution": (str, "standard_gaussian"), "n_modes": (int, 16),
              "seed": (int, 0)},
    "integration": {"tau": (float, 0.01), "n_steps": (int, 1000),
                    "scheme": (str, "exact_split"), "method": (str, "")},
    "ensemble": {"trajectories": (int, 1000), "base_seed": (int, 0), "chunk_size": (int, 500)},
    "output": {"stride": (int, 10), "format": (str, "csv"), "prefix": (str, ""),
               "covariance_snapshots": (bool, False)},
    "converge": {"taus": (list, [0.002, 0.001]), "horizon": (float, 2.0),
                 "observable": (str, "norm")},
}


class SimulationConfig(dict):
    """Nested ``{section: {key: value}}`` mapping with every key present."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    def to_ini(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key, (kind, _) in keys.items():
                lines.append(f"{key} = {_format(self[section][key], kind)}")
            lines.append("")
        return "\n".join(lines)

    def echo(self) -> dict:
        return copy.deepcopy({s: dict(v) for s, v in self.items()})


def _format(value, kind):
    if kind is list:
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if kind is float:
        return repr(float(value))
    if kind is bool:
        return "true" if value else "false"
    return str(value)


def defaults() -> SimulationConfig:
    return SimulationConfig({s: {k: copy.copy(d) for k, (_, d) in keys.items()}
                             for s, keys in SCHEMA.items()})


def _line_of(text: str, section: str | None, key: str | None = None) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section:
            if re.match(rf"{re.escape(key)}\s*[=:]", line):
                return i
    return None


def _convert(raw: str, kind, where):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is list:
            return [float(v) for v in raw.replace("\n", ",").split(",") if v.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"cannot read {raw!r} as {kind.__name__}", *where) from None


def parse_config(text: str, path: str | None = None) -> SimulationConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed configuration: {exc.message if hasattr(exc, 'message') else exc}",
                          path, line) from None
    cfg = defaults()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", path, _line_of(text, section), section)
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", path,
                                  _line_of(text, section, key), f"{section}.{key}")
            where = (path, _line_of(text, section, key), f"{section}.{key}")
            cfg[section][key] = _convert(raw, SCHEMA[section][key][0], where)
    validate_config(cfg, text, path)
    return cfg


def validate_config(cfg: SimulationConfig, text: str = "", path: str | None = None) -> None:
    def fail(section, key, msg):
        raise ConfigError(msg, path, _line_of(text, section, key) if text else None,
                          f"{section}.{key}")

    def positive(section, key):
        if not cfg[section][key] > 0:
            fail(section, key, f"{section}.{key} must be positive, got {cfg[section][key]!r}")

    def choice(section, key, options):
        if cfg[section][key] not in options:
            fail(section, key, f"{section}.{key} must be one of {options}, got {cfg[section][key]!r}")

    if cfg.grid["n_points"] < 2:
        fail("grid", "n_points", "grid.n_points must be at least 2")
    for s, k in [("grid", "length"), ("physics", "mass"), ("physics", "omega"),
                 ("initial", "width"), ("integration", "tau"), ("output", "stride"),
                 ("ensemble", "trajectories"), ("ensemble", "chunk_size"),
                 ("converge", "horizon"), ("noise", "n_modes")]:
        positive(s, k)
    if cfg.physics["mu"] != 1.0:
        fail("physics", "mu", "physics.mu is fixed at 1 (natural units)")
    choice("physics", "potential", POTENTIALS)
    choice("physics", "momentum_scheme", ("spectral", "central_difference"))
    if cfg.physics["potential"] == "table" and len(cfg.physics["potential_table"]) != cfg.grid["n_points"]:
        fail("physics", "potential_table",
             f"physics.potential_table needs {cfg.grid['n_points']} values, "
             f"got {len(cfg.physics['potential_table'])}")
    choice("initial", "kind", INITIAL_KINDS)
    if cfg.initial["level"] < 0:
        fail("initial", "level", "initial.level must be nonnegative")
    choice("noise", "kind", NOISE_KINDS)
    choice("noise", "xi_distribution", ("standard_gaussian", "rademacher"))
    if cfg.noise["gamma"] < 0:
        fail("noise", "gamma", "noise.gamma must be nonnegative")
    if cfg.integration["n_steps"] < 0:
        fail("integration", "n_steps", "integration.n_steps must be nonnegative")
    choice("integration", "scheme", ("euler", "exact_split"))
    if cfg.integration["method"]:
        choice("integration", "method", METHODS)
    choice("output", "format", ("csv", "json"))
    choice("converge", "observable", ("norm", "x", "p", "H"))
    taus = cfg.converge["taus"]
    if len(taus) < 2 or any(t <= 0 for t in taus):
        fail("converge", "taus", "converge.taus needs at least two positive step sizes")


def load_config(path) -> SimulationConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", str(p)) from None
    return parse_config(text, str(p))


def preset_names() -> list[str]:
    files = resources.files("stochwave") / "presets"
    return sorted(f.name[:-4] for f in files.iterdir() if f.name.endswith(".ini"))


def load_preset(name: str) -> SimulationConfig:
    f = resources.files("stochwave") / "presets" / f"{name}.ini"
    if not f.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_config(f.read_text(), f"preset:{name}")
