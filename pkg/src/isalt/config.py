"""Experiment configuration: TOML files layered over built-in presets."""

import copy
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError
from .systems import SdeSystem

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DESK_GAPS = [10, 20, 40, 80, 120, 160, 200]
PAPER_GAPS = [1, 2, 4, 10, 20, 40, 80, 120, 160, 200]
LORENZ_GAPS = [20, 40, 80, 160, 240, 320, 400]

_DEFAULT_FAMILIES = ["is-em", "is-em-c0", "is-rk4", "is-rk4-c0", "is-ssbe"]

# per benchmark: (dt, long steps, horizon, gaps) at desk and paper scale
_SCALES = {
    "double-well-1d": {"desk": (1e-3, 200_000, 100.0, DESK_GAPS),
                       "paper": (1e-3, 2_000_000, 1000.0, PAPER_GAPS)},
    "gradient-2d": {"desk": (2e-3, 100_000, 100.0, DESK_GAPS),
                    "paper": (2e-3, 1_000_000, 1000.0, PAPER_GAPS)},
    "lorenz-3d": {"desk": (5e-4, 600_000, 100.0, LORENZ_GAPS),
                  "paper": (5e-4, 6_000_000, 1000.0, LORENZ_GAPS)},
}


def preset(name, system):
    """Config dictionary for ``name`` in {"desk", "paper"} and a benchmark id."""
    try:
        dt, long_steps, horizon, gaps = _SCALES[system][name]
    except KeyError:
        raise ConfigError(f"no preset {name!r} for system {system!r}") from None
    M = 100 if name == "desk" else 1000
    return {
        "system": {"benchmark": system},
        "data": {"dt": dt, "long_steps": long_steps, "M": M, "horizon": horizon,
                 "gaps": list(gaps), "seed": 1},
        "inference": {"families": list(_DEFAULT_FAMILIES), "svd_cutoff": 1e-12},
        "evaluate": {"sim_steps": 1_000_000, "bins": 100, "max_lag": 200, "burn_in": 0.1,
                     "seed": 7},
        "study": {
            "convergence": {"family": "is-rk4", "gap": 80 if 80 in gaps else gaps[len(gaps) // 2]},
            "residual_order": {"families": ["is-rk4", "is-em"]},
            "blowup_scan": {"schemes": ["plain-rk4", "plain-ssbe", "is-rk4", "is-ssbe"],
                            "steps": 100_000, "seeds": 10},
        },
        "output": f"runs/{system}-{name}",
    }


_LABEL = re.compile(r"^(is|plain)-(em|rk4|ssbe)(-c0)?$")


@dataclass(frozen=True)
class SchemeSpec:
    """A scheme label such as ``is-rk4-c0`` or ``plain-ssbe``."""

    family: str
    include_c0: bool = False
    plain: bool = False

    @classmethod
    def parse(cls, label):
        m = _LABEL.match(str(label).strip().lower())
        if not m:
            raise ConfigError(f"unknown scheme label {label!r}")
        plain = m.group(1) == "plain"
        if plain and m.group(3):
            raise ConfigError(f"plain schemes take no c0 term: {label!r}")
        return cls(m.group(2), bool(m.group(3)), plain)

    @property
    def label(self):
        kind = "plain" if self.plain else "is"
        return f"{kind}-{self.family}{'-c0' if self.include_c0 else ''}"


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    system_def: object
    dt: float
    long_steps: int
    M: int
    horizon: float
    gaps: list
    families: list
    seed: int = 1
    shared_path: bool = False
    x0: list = None
    svd_cutoff: float = 1e-12
    sim_steps: int = 1_000_000
    bins: int = 100
    max_lag: int = 200
    burn_in: float = 0.1
    sim_seed: int = 7
    study: dict = field(default_factory=dict)
    output: Path = Path("runs/default")
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def system(self):
        return SdeSystem.from_definition(self.system_def)

    @property
    def total_steps(self):
        """Fine steps per dataset trajectory (horizon rounded to a multiple of every gap)."""
        n = round(self.horizon / self.dt)
        lcm = math.lcm(*self.gaps)
        if n < lcm:
            raise ConfigError(f"horizon {self.horizon} shorter than lcm(gaps) = {lcm} fine steps")
        return (n // lcm) * lcm

    @property
    def schemes(self):
        return [SchemeSpec.parse(f) for f in self.families]

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        try:
            sysdoc = doc["system"]
            if isinstance(sysdoc, str):
                system_def = sysdoc
            elif "benchmark" in sysdoc:
                system_def = sysdoc["benchmark"]
            else:
                system_def = dict(sysdoc)
            data = doc["data"]
            inf = doc.get("inference", {})
            ev = doc.get("evaluate", {})
            out = Path(doc.get("output", "runs/default"))
            if base_dir is not None and not out.is_absolute():
                out = Path(base_dir) / out
            cfg = cls(system_def=system_def, dt=float(data["dt"]),
                      long_steps=int(data["long_steps"]), M=int(data["M"]),
                      horizon=float(data["horizon"]), gaps=[int(g) for g in data["gaps"]],
                      families=list(inf.get("families", _DEFAULT_FAMILIES)),
                      seed=int(data.get("seed", 1)), x0=data.get("x0"),
                      shared_path=bool(data.get("shared_path", False)),
                      svd_cutoff=float(inf.get("svd_cutoff", 1e-12)),
                      sim_steps=int(ev.get("sim_steps", 1_000_000)),
                      bins=int(ev.get("bins", 100)), max_lag=int(ev.get("max_lag", 200)),
                      burn_in=float(ev.get("burn_in", 0.1)), sim_seed=int(ev.get("seed", 7)),
                      study=dict(doc.get("study", {})), output=out, raw=doc)
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from None
        cfg.validate()
        return cfg

    def validate(self):
        if not self.gaps:
            raise ConfigError("gap list is empty")
        if any(g < 1 for g in self.gaps) or self.gaps != sorted(set(self.gaps)):
            raise ConfigError("gaps must be positive, distinct and ascending")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.M < 1 or self.long_steps < 2:
            raise ConfigError("need M >= 1 and long_steps >= 2")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in must lie in [0, 1)")
        if self.bins < 2 or self.max_lag < 0 or self.sim_steps < 1:
            raise ConfigError("bins >= 2, max_lag >= 0 and sim_steps >= 1 required")
        for f in self.families:
            if SchemeSpec.parse(f).plain:
                raise ConfigError(f"inference families must be is-* labels, got {f!r}")
        try:
            system = self.system
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid system definition: {exc}") from None
        if self.x0 is not None and len(self.x0) != system.d:
            raise ConfigError(f"x0 must have {system.d} entries")
        _ = self.total_steps

    def initial_state(self):
        system = self.system
        return list(system.default_x0) if self.x0 is None else [float(v) for v in self.x0]


def load_config(path=None, preset_name=None, system=None):
    """Read a TOML config, optionally layered over a preset.

    With only ``preset_name`` the benchmark comes from ``system``; a file's
    ``[system] benchmark`` entry selects the preset's benchmark otherwise.
    """
    doc = {}
    base_dir = None
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base_dir = Path(path).parent
    if preset_name is not None:
        bench = system
        sysdoc = doc.get("system")
        if bench is None and isinstance(sysdoc, dict):
            bench = sysdoc.get("benchmark")
        if bench is None:
            raise ConfigError("a preset needs a benchmark system")
        doc = _merge(preset(preset_name, bench), doc)
    elif system is not None:
        doc = _merge(doc, {"system": {"benchmark": system}})
    if not doc:
        raise ConfigError("give a config file or a preset")
    return ExperimentConfig.from_dict(doc, base_dir)
