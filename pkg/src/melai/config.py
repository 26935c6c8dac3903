"""Run configuration read from and written to INI files.

Sections: ``[run]`` for the experiment itself, then ``[neat]``, ``[nipes]`` and
``[arena]`` holding the fields of the matching parameter dataclasses.  Every
key is optional except ``[run] environment``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .arena import ArenaParams
from .controller import DEFAULT_HIDDEN
from .cppn_neat import NeatParams
from .morphogen import DEFAULT_RESOLUTION
from .nipes import NipesParams

VARIANTS = {"MEL": False, "MELAI": True}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    environment: str
    use_archive: bool = True
    per_body_budget: int = 200
    generations: int = 20
    total_budget: int = 80_000
    seed: int = 1
    hidden_size: int = DEFAULT_HIDDEN
    replicate: int = 0
    grid_resolution: int = DEFAULT_RESOLUTION
    parallel: bool = False
    workers: int = 1
    neat: NeatParams = field(default_factory=NeatParams)
    nipes: NipesParams = field(default_factory=NipesParams)
    arena: ArenaParams = field(default_factory=ArenaParams)

    def __post_init__(self):
        for name in ("per_body_budget", "generations", "total_budget", "hidden_size", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"[run] {name}: must be at least 1")

    @property
    def population_size(self) -> int:
        return self.neat.population_size

    @property
    def variant(self) -> str:
        return "MELAI" if self.use_archive else "MEL"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_RUN_KEYS = [f.name for f in dataclasses.fields(RunConfig) if f.name not in ("neat", "nipes", "arena")]
_SECTIONS = {"neat": NeatParams, "nipes": NipesParams, "arena": ArenaParams}


def _coerce(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None


def _build(cls, section: str, items: dict, extra_defaults: dict | None = None):
    defaults = {f.name: f.default for f in dataclasses.fields(cls) if f.default is not dataclasses.MISSING}
    defaults.update(extra_defaults or {})
    values = {}
    for key, raw in items.items():
        if key not in defaults:
            raise ConfigError(f"[{section}] {key}: unknown key")
        values[key] = _coerce(section, key, raw, defaults[key])
    try:
        return cls(**values)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"[{section}] {e}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    unknown = set(cp.sections()) - {"run", "matrix", *_SECTIONS}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    run = dict(cp["run"]) if cp.has_section("run") else {}
    if not run.get("environment", "").strip():
        raise ConfigError("[run] environment: required")

    variant = run.pop("variant", None)
    if variant is not None:
        if variant.strip().upper() not in VARIANTS:
            raise ConfigError(f"[run] variant: expected MEL or MELAI, got {variant!r}")
        if "use_archive" in run:
            raise ConfigError("[run] variant and use_archive are mutually exclusive")
        run["use_archive"] = str(VARIANTS[variant.strip().upper()])
    neat_items = dict(cp["neat"]) if cp.has_section("neat") else {}
    if "population_size" in run:
        neat_items.setdefault("population_size", run.pop("population_size"))

    sub = {name: _build(cls, name, dict(cp[name]) if cp.has_section(name) else {})
           for name, cls in _SECTIONS.items() if name != "neat"}
    sub["neat"] = _build(NeatParams, "neat", neat_items)
    cfg = _build(RunConfig, "run", run, {"environment": ""})
    return dataclasses.replace(cfg, **sub)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def config_to_text(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["run"] = {k: str(getattr(cfg, k)) for k in _RUN_KEYS}
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        cp[name] = {f.name: repr(v) if isinstance(v := getattr(obj, f.name), float) else str(v)
                    for f in dataclasses.fields(obj)}
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in cp[section].items()]
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_text(cfg))


# ---------------------------------------------------------------------------
# experiment matrix


@dataclass
class MatrixSpec:
    base: RunConfig
    variants: list[str]
    environments: list[str]
    splits: list[tuple[int, int]]


def parse_matrix(text: str) -> MatrixSpec:
    """A run config plus an optional ``[matrix]`` section.

    ``splits`` lists per-body budget and generation pairs as ``200x20``.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    m = dict(cp["matrix"]) if cp.has_section("matrix") else {}
    if cp.has_section("matrix"):
        cp.remove_section("matrix")
    if not cp.has_section("run"):
        cp.add_section("run")
    cp["run"].setdefault("environment", "amphitheatre")
    buf = []
    for s in cp.sections():
        buf.append(f"[{s}]")
        buf += [f"{k} = {v}" for k, v in cp[s].items()]
    base = parse_config("\n".join(buf))

    def listed(key, default):
        return [v.strip() for v in m.get(key, default).split(",") if v.strip()]

    variants = [v.upper() for v in listed("variants", "MEL, MELAI")]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"[matrix] variants: unknown variant {v!r}")
    envs = listed("environments", "amphitheatre, hard_race, two_rooms")
    splits = []
    for s in listed("splits", f"{base.per_body_budget}x{base.generations}"):
        try:
            b, g = s.lower().split("x")
            splits.append((int(b), int(g)))
        except ValueError:
            raise ConfigError(f"[matrix] splits: cannot parse {s!r}, expected BUDGETxGENERATIONS") from None
    unknown = set(m) - {"variants", "environments", "splits"}
    if unknown:
        raise ConfigError(f"[matrix] unknown key(s): {', '.join(sorted(unknown))}")
    return MatrixSpec(base, variants, envs, splits)
