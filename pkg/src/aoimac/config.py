"""Scenario, solver, learner and simulation settings plus the JSON experiment file.

All internal powers are linear; budgets in dB are converted only when an
experiment file is loaded.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .channel import RAYLEIGH, TABULATED, FadingModel
from .link_noma import COUPLING_MODES, SIC_STRICT

SATURATE = "saturate"
RESET = "reset-to-one"
AGE_OVERFLOW = (SATURATE, RESET)
SCHEMES = ("oma", "noma")
CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


@dataclass(frozen=True)
class ScenarioConfig:
    """System parameters shared by the solvers, the learner and the simulator.

    ``budget`` is the linear average power limit of source 0; the others get
    ``alpha * budget``. Slot length is 1.
    """

    n_sources: int = 2
    max_rounds: int = 4
    delta_max: int = 50
    K: int = 16
    rate_bits: float = 1.7
    weights: tuple[float, ...] = (1.0, 1.0)
    budget: float = 1.0
    alpha: float = 1.0
    rho: tuple[float, ...] = (0.5, 0.5)
    discount: float = 0.99
    age_overflow: str = SATURATE
    channel: FadingModel = field(default_factory=FadingModel)
    coupling_mode: str = SIC_STRICT

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        n = self.n_sources
        if n < 1:
            raise ConfigError("n_sources must be >= 1")
        if self.max_rounds < 1 or self.delta_max < self.max_rounds:
            raise ConfigError("need max_rounds >= 1 and delta_max >= max_rounds")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.rate_bits <= 0:
            raise ConfigError("rate_bits must be positive")
        if len(self.weights) != n or min(self.weights) <= 0:
            raise ConfigError("need one positive weight per source")
        if len(self.rho) != n or min(self.rho) <= 0 or sum(self.rho) > 1 + 1e-12:
            raise ConfigError("need one positive slot fraction per source with sum <= 1")
        if self.budget < 0 or self.alpha <= 0:
            raise ConfigError("budget must be >= 0 and alpha > 0")
        if not 0 < self.discount < 1:
            raise ConfigError("discount must lie in (0, 1)")
        if self.age_overflow not in AGE_OVERFLOW:
            raise ConfigError(f"age_overflow must be one of {AGE_OVERFLOW}")
        if self.coupling_mode not in COUPLING_MODES:
            raise ConfigError(f"coupling_mode must be one of {COUPLING_MODES}")

    @property
    def power_budgets(self) -> tuple[float, ...]:
        return (self.budget,) + (self.alpha * self.budget,) * (self.n_sources - 1)

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    @classmethod
    def full_scale(cls, **changes) -> "ScenarioConfig":
        """Full-scale setting (K=128, delta_max=100)."""
        return cls(K=128, delta_max=100, **changes)


@dataclass(frozen=True)
class SolverConfig:
    gamma_beta: float = 1e-4
    gamma_v: float = 1e-6
    max_sweeps: int = 10_000
    method: str = "auto"  # "jacobi" (value iteration), "policy", or "auto" (= policy)
    beta_cap: float = 2.0 ** 20
    max_alternations: int = 50

    def __post_init__(self):
        if self.gamma_beta <= 0 or self.gamma_v <= 0 or self.max_sweeps < 1:
            raise ConfigError("solver tolerances and sweep cap must be positive")
        if self.method not in ("auto", "jacobi", "policy"):
            raise ConfigError("method must be auto, jacobi or policy")


LR_SCHEDULES = ("global", "visits", "rescaled")


@dataclass(frozen=True)
class LearnerConfig:
    iterations: int = 10_000          # steps per episode
    episodes: int = 50
    eps0: float = 1.0
    eps_tau: float | None = None      # defaults to iterations / 10
    eps_min: float = 0.01
    zeta0: float = 5.0                # multiplier step zeta0 / (episode + zeta_offset)
    zeta_offset: float = 2.0
    beta_init: float = 0.0
    beta_per_step: bool = False
    gamma_delta: float = 0.5          # NOMA run-to-run convergence threshold
    max_runs: int = 10
    # "global": 1/sqrt(i); "visits": 1/sqrt(n(s,a)); "rescaled": (H+1)/(H+n(s,a))
    lr_schedule: str = "rescaled"
    lr_horizon: float | None = 3.0    # H; None means 1/(1-lambda)
    center_rate: float = 1e-4         # step of the running reward mean; 0 disables centering
    schedule_scope: str = "episode"   # step index i restarts each episode, or runs on ("run")
    log_every: int = 1000

    def __post_init__(self):
        if self.iterations < 1 or self.episodes < 1 or self.max_runs < 1:
            raise ConfigError("iterations, episodes and max_runs must be >= 1")
        if not (0 <= self.eps_min <= self.eps0 <= 1):
            raise ConfigError("need 0 <= eps_min <= eps0 <= 1")
        if self.zeta0 <= 0 or self.beta_init < 0 or self.zeta_offset < 0:
            raise ConfigError("zeta0 must be positive, beta_init and zeta_offset nonnegative")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.lr_horizon is not None and self.lr_horizon <= 0:
            raise ConfigError("lr_horizon must be positive")
        if not 0 <= self.center_rate < 1:
            raise ConfigError("center_rate must lie in [0, 1)")
        if self.schedule_scope not in ("episode", "run"):
            raise ConfigError("schedule_scope must be episode or run")

    @property
    def tau(self) -> float:
        return self.eps_tau if self.eps_tau is not None else self.iterations / 10


@dataclass(frozen=True)
class SimConfig:
    slots: int = 1_000_000
    seed: int = 0
    trace: bool = False
    trace_len: int = 100_000
    chunk: int = 1 << 16

    def __post_init__(self):
        if self.slots < 1:
            raise ConfigError("slots must be >= 1")


# ---------------------------------------------------------------------------
# Experiment file

DEFAULT_EXPERIMENT = {
    "version": CONFIG_VERSION,
    "scheme": "oma",
    "seed": 0,
    "scenario": {
        "n_sources": 2,
        "max_rounds": 4,
        "delta_max": 50,
        "rate_bits": 1.7,
        "weights": [1.0, 1.0],
        "budget_db": 0.0,
        "alpha": 1.0,
        "discount": 0.99,
        "age_overflow": SATURATE,
    },
    "channel": {"kind": RAYLEIGH, "K": 16, "table": None},
    "oma": {"rho": [0.5, 0.5], "rate_bits": None},
    "noma": {"rate_bits": None, "coupling_mode": SIC_STRICT},
    "solver": {f.name: f.default for f in fields(SolverConfig)},
    "learner": {f.name: f.default for f in fields(LearnerConfig)},
    "sim": {"slots": 1_000_000, "policy": "mixed", "fixed_index": 0, "trace": False},
    "sweep": {"axes": [], "schemes": [], "seeds": None},
    "output": {"dir": "results", "timing": True},
}

SIM_POLICIES = ("mixed", "deterministic", "fixed-power", "fixed-index")
SWEEP_SCHEMES = ("oma-opt", "oma-fixed", "oma-rl", "noma-opt", "noma-fixed", "noma-rl")


def _merge(default: dict, given: dict, path: str = "") -> dict:
    out = copy.deepcopy(default)
    for key, value in given.items():
        where = f"{path}{key}"
        if key not in default:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(default[key], dict) and default[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = _merge(default[key], value, where + ".")
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    """Parsed experiment file: a validated raw dict plus typed views."""

    raw: dict

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config 'version' must be {CONFIG_VERSION}")
        exp = cls(_merge(DEFAULT_EXPERIMENT, data))
        exp.validate()
        return exp

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2)

    # typed views -------------------------------------------------------
    @property
    def scheme(self) -> str:
        return self.raw["scheme"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def scenario(self, scheme: str | None = None) -> ScenarioConfig:
        try:
            return self._scenario(scheme or self.scheme)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as err:
            raise ConfigError(f"bad scenario or channel value: {err}") from err

    def _scenario(self, scheme: str) -> ScenarioConfig:
        sc, ch = self.raw["scenario"], self.raw["channel"]
        if ch["kind"] not in (RAYLEIGH, TABULATED):
            raise ConfigError(f"channel.kind must be {RAYLEIGH!r} or {TABULATED!r}")
        if ch["kind"] == TABULATED:
            if not ch.get("table"):
                raise ConfigError("custom-tabulated channel needs 'table' [[quantile, gain], ...]")
            model = FadingModel.tabulated(ch["table"])
        else:
            model = FadingModel(ch["kind"])
        rate = self.raw[scheme]["rate_bits"]
        return ScenarioConfig(
            n_sources=int(sc["n_sources"]),
            max_rounds=int(sc["max_rounds"]),
            delta_max=int(sc["delta_max"]),
            K=int(ch["K"]),
            rate_bits=float(rate if rate is not None else sc["rate_bits"]),
            weights=tuple(sc["weights"]),
            budget=db_to_linear(float(sc["budget_db"])),
            alpha=float(sc["alpha"]),
            rho=tuple(self.raw["oma"]["rho"]),
            discount=float(sc["discount"]),
            age_overflow=sc["age_overflow"],
            channel=model,
            coupling_mode=self.raw["noma"]["coupling_mode"],
        )

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(**self.raw["solver"])

    @property
    def learner(self) -> LearnerConfig:
        return LearnerConfig(**self.raw["learner"])

    @property
    def sim(self) -> SimConfig:
        s = self.raw["sim"]
        return SimConfig(slots=int(s["slots"]), seed=self.seed, trace=bool(s["trace"]))

    def with_value(self, path: str, value) -> "ExperimentConfig":
        """Copy with one dotted path set; ``oma.rho`` accepts a scalar for two sources."""
        raw = copy.deepcopy(self.raw)
        keys = path.split(".")
        node = raw
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"unknown config path {path!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config path {path!r}")
        if path == "oma.rho" and not isinstance(value, (list, tuple)):
            value = [float(value), 1.0 - float(value)]
        node[keys[-1]] = value
        exp = ExperimentConfig(raw)
        exp.validate()
        return exp

    def validate(self) -> None:
        raw = self.raw
        if raw["scheme"] not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        for scheme in SCHEMES:
            sc = self.scenario(scheme)
            if scheme == "noma" and raw["scheme"] == "noma" and sc.n_sources != 2:
                raise ConfigError("the NOMA solver supports exactly two sources")
        self.solver
        self.learner
        self.sim
        if raw["sim"]["policy"] not in SIM_POLICIES:
            raise ConfigError(f"sim.policy must be one of {SIM_POLICIES}")
        sweep = raw["sweep"]
        for scheme in sweep["schemes"]:
            if scheme not in SWEEP_SCHEMES:
                raise ConfigError(f"sweep scheme {scheme!r} not in {SWEEP_SCHEMES}")
        for axis in sweep["axes"]:
            if set(axis) != {"path", "values"} or not axis["values"]:
                raise ConfigError("each sweep axis needs 'path' and a non-empty 'values' list")
            node = raw
            for key in axis["path"].split("."):
                if not isinstance(node, dict) or key not in node:
                    raise ConfigError(f"sweep axis path {axis['path']!r} does not exist")
                node = node[key]


def scenario_dict(sc: ScenarioConfig) -> dict:
    d = asdict(sc)
    d["channel"] = asdict(sc.channel)
    return d
