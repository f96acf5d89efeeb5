"""Run configuration files.

A configuration is a flat TOML table whose keys carry their units, e.g.::

    generations = 50
    mu = 50
    lambda = 50
    altitudes_m = [2.0, 4.0, 6.0, 8.0]
    arch = "CTRNN"
    sigma_w_per_s_min = 0.05
    sigma_w_per_s_max = 0.15

Every key is optional.  Unknown keys, wrong types and environment ranges
wider than the allowed randomization table are all rejected at load time,
before any simulation runs.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

from divland.errors import DomainError
from divland.evo import EvoConfig
from divland.sim import TABLE_RANGES, ParamRanges

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib


class ConfigError(DomainError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


# config key -> (EvoConfig field, accepted python types)
_SCALARS = {
    "generations": ("generations", int),
    "mu": ("mu", int),
    "lambda": ("lam", int),
    "mutation_rate": ("mutation_rate", (int, float)),
    "mutation_scale": ("mutation_scale", (int, float)),
    "seed": ("seed", int),
    "arch": ("arch", str),
    "workers": ("workers", int),
}

# ParamRanges field -> key stem; the file uses ``<stem>_min`` / ``<stem>_max``
_RANGE_KEYS = {
    "delay": "delay_samples",
    "jitter": "jitter_prob",
    "sigma_w": "sigma_w_per_s",
    "sigma_p": "sigma_p_ratio",
    "tau_thrust": "tau_thrust_s",
    "freq": "freq_hz",
}

KNOWN_KEYS = frozenset(
    list(_SCALARS) + ["altitudes_m"] + [f"{s}_{b}" for s in _RANGE_KEYS.values() for b in ("min", "max")]
)


@dataclass(frozen=True)
class RunConfig:
    evo: EvoConfig
    source: str | None = None

    def snapshot(self) -> dict:
        return to_flat(self.evo)


def _typed(key, value, types):
    # bool is an int subclass; refuse it explicitly
    if isinstance(value, bool) or not isinstance(value, types):
        raise ConfigError(f"expected {getattr(types, '__name__', 'number')}, got {value!r}", key)
    return value


def from_flat(table: dict, base: EvoConfig | None = None) -> EvoConfig:
    """Build an :class:`EvoConfig` from a flat key table."""
    unknown = sorted(set(table) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    base = base or EvoConfig()
    kw = {}
    for key, (name, types) in _SCALARS.items():
        if key in table:
            kw[name] = _typed(key, table[key], types)
    if "altitudes_m" in table:
        alts = table["altitudes_m"]
        if not isinstance(alts, list) or not alts:
            raise ConfigError("expected a non-empty list of heights", "altitudes_m")
        kw["altitudes"] = tuple(float(_typed("altitudes_m", a, (int, float))) for a in alts)

    ranges = {}
    for name, stem in _RANGE_KEYS.items():
        lo, hi = getattr(base.ranges, name)
        lo = table.get(f"{stem}_min", lo)
        hi = table.get(f"{stem}_max", hi)
        types = int if name == "delay" else (int, float)
        _typed(f"{stem}_min", lo, types)
        _typed(f"{stem}_max", hi, types)
        tlo, thi = getattr(TABLE_RANGES, name)
        if not tlo <= lo <= hi <= thi:
            raise ConfigError(f"range [{lo}, {hi}] must satisfy {tlo} <= min <= max <= {thi}", stem)
        ranges[name] = (lo, hi)
    kw["ranges"] = ParamRanges(**ranges)

    fields = {**{k: getattr(base, k) for k in base.__dataclass_fields__}, **kw}
    try:
        return EvoConfig(**fields)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def to_flat(cfg: EvoConfig) -> dict:
    """Inverse of :func:`from_flat` (``workers`` is left out: it never affects results)."""
    out = {key: getattr(cfg, name) for key, (name, _) in _SCALARS.items() if name != "workers"}
    out["altitudes_m"] = list(cfg.altitudes)
    for name, stem in _RANGE_KEYS.items():
        out[f"{stem}_min"], out[f"{stem}_max"] = getattr(cfg.ranges, name)
    return out


def load_config(path, base: EvoConfig | None = None) -> RunConfig:
    """Read and validate a configuration file.

    Raises:
        ConfigError: malformed TOML or any invalid field.
        OSError: the file cannot be read for reasons other than absence.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        table = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return RunConfig(from_flat(table, base), str(path))
