"""Factory accidents with an M-shaped causal structure.

Exogenous age and weather feed a collider (clothing weight).  Age also drives
fatigue; fatigue and weather are the only causes of accidents::

    age ──► clothing ◄── weather
     │                     │
     ▼                     ▼
   fatigue ─────────► accidents

Clothing is written once at setup and never read again, so conditioning on it
in a regression opens the back-door path fatigue ← age → clothing ← weather →
accidents while leaving every simulated trajectory untouched.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

import numpy as np
from numba import njit

from .determinism import Rng, int_below, uniform
from .config import ConfigError, coerce_fields
from .worldio import pack_world, unpack_world

MODEL_ID = "accidents"

# 4-neighbourhood moves: (dx, dy)
_MOVES = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int64)


@dataclass(frozen=True)
class AccidentConstants:
    """Generative constants of the factory.

    Clothing and fatigue are linear in normalised age ``(age - min_age) /
    (max_age - min_age)``.  The per-tick accident probability is
    ``min(1, prob_scale * fatigue / fatigue_scale + weather_coef * weather)``
    where the fatigue term only applies when ``fatigue > danger_scale *
    danger``.
    """

    min_age: int = 18
    max_age: int = 65
    clothing_base: float = 1.0
    clothing_age: float = 2.0
    clothing_weather: float = 3.0
    clothing_noise: float = 0.25
    fatigue_base: float = 2.0
    fatigue_age: float = 6.0
    fatigue_noise: float = 2.0
    fatigue_increment: float = 0.05
    danger_scale: float = 10.0
    fatigue_scale: float = 10.0
    prob_scale: float = 0.8
    weather_coef: float = 0.4


@dataclass(frozen=True)
class AccidentsConfig:
    agents: int = 100
    grid_w: int = 10
    grid_h: int = 10
    run_length: int = 100
    focal_agent: int = 0
    treatment_delta: float = 1.0
    # zero the clothing column after setup (draws are still consumed)
    zero_clothing: bool = False
    constants: AccidentConstants = field(default_factory=AccidentConstants)

    def __post_init__(self):
        if self.agents < 1:
            raise ConfigError("agents must be >= 1")
        if self.grid_w < 1 or self.grid_h < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.run_length < 0:
            raise ConfigError("run_length must be >= 0")
        if not 0 <= self.focal_agent < self.agents:
            raise ConfigError("focal_agent must index an existing agent")
        c = self.constants
        if c.max_age <= c.min_age:
            raise ConfigError("max_age must exceed min_age")

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> AccidentsConfig:
        """Build from flat keys; constant names may appear at top level or under ``constants``."""
        raw = dict(raw)
        nested = raw.pop("constants", {})
        if isinstance(nested, AccidentConstants):
            nested = asdict(nested)
        const_keys = {f.name for f in fields(AccidentConstants)}
        top_keys = {f.name for f in fields(cls)} - {"constants"}
        unknown = set(raw) - const_keys - top_keys
        if unknown:
            raise ConfigError(f"unknown accidents config keys: {sorted(unknown)}")
        consts = {**nested, **{k: v for k, v in raw.items() if k in const_keys}}
        top = {k: v for k, v in raw.items() if k in top_keys}
        constants = AccidentConstants(**coerce_fields(AccidentConstants, consts))
        return cls(constants=constants, **coerce_fields(cls, top))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class FactoryWorld:
    config: AccidentsConfig
    weather: float
    danger: np.ndarray  # (grid_h, grid_w) float64
    age: np.ndarray  # int64
    clothing: np.ndarray
    fatigue: np.ndarray
    baseline_fatigue: np.ndarray
    accidents: np.ndarray  # int64
    pos_x: np.ndarray
    pos_y: np.ndarray

    @property
    def n_agents(self) -> int:
        return int(self.age.shape[0])

    def copy(self) -> FactoryWorld:
        arrays = {k: getattr(self, k).copy() for k in _ARRAY_FIELDS}
        return FactoryWorld(config=self.config, weather=self.weather, **arrays)


_ARRAY_FIELDS = (
    "danger",
    "age",
    "clothing",
    "fatigue",
    "baseline_fatigue",
    "accidents",
    "pos_x",
    "pos_y",
)


def setup_factory(config: AccidentsConfig, rng: Rng) -> FactoryWorld:
    """Draw weather, the danger grid and every worker, in that order."""
    c = config.constants
    s = rng.buffer
    weather = float(uniform(s))
    danger = rng.uniforms(config.grid_w * config.grid_h).reshape(config.grid_h, config.grid_w)
    n = config.agents
    age = np.empty(n, dtype=np.int64)
    clothing = np.empty(n)
    fatigue = np.empty(n)
    pos_x = np.empty(n, dtype=np.int64)
    pos_y = np.empty(n, dtype=np.int64)
    span = c.max_age - c.min_age
    for i in range(n):
        age[i] = c.min_age + int_below(s, span + 1)
        age_norm = (age[i] - c.min_age) / span
        eps_c = (2.0 * uniform(s) - 1.0) * c.clothing_noise
        clothing[i] = c.clothing_base + c.clothing_age * age_norm + c.clothing_weather * weather + eps_c
        eps_f = uniform(s) * c.fatigue_noise
        fatigue[i] = c.fatigue_base + c.fatigue_age * age_norm + eps_f
        pos_x[i] = int_below(s, config.grid_w)
        pos_y[i] = int_below(s, config.grid_h)
    if config.zero_clothing:
        clothing[:] = 0.0
    return FactoryWorld(
        config=config,
        weather=weather,
        danger=danger,
        age=age,
        clothing=clothing,
        fatigue=fatigue,
        baseline_fatigue=fatigue.copy(),
        accidents=np.zeros(n, dtype=np.int64),
        pos_x=pos_x,
        pos_y=pos_y,
    )


@njit(cache=True)
def _p_accident(fatigue, danger, weather, danger_scale, fatigue_scale, prob_scale, weather_coef):
    threshold_part = fatigue / fatigue_scale if fatigue > danger_scale * danger else 0.0
    p = threshold_part * prob_scale + weather_coef * weather
    return p if p < 1.0 else 1.0


def p_accident(fatigue: float, danger: float, weather: float, constants: AccidentConstants) -> float:
    """Probability that a worker with ``fatigue`` has an accident on a cell of ``danger``."""
    c = constants
    return float(
        _p_accident(fatigue, danger, weather, c.danger_scale, c.fatigue_scale, c.prob_scale, c.weather_coef)
    )


@njit(cache=True)
def _factory_tick(
    s, order, pos_x, pos_y, fatigue, baseline, accidents, danger, weather, moves,
    increment, danger_scale, fatigue_scale, prob_scale, weather_coef,
):
    h, w = danger.shape
    for k in range(order.shape[0]):
        a = order[k]
        m = int_below(s, 4)
        pos_x[a] = (pos_x[a] + moves[m, 0]) % w
        pos_y[a] = (pos_y[a] + moves[m, 1]) % h
        p = _p_accident(
            fatigue[a], danger[pos_y[a], pos_x[a]], weather,
            danger_scale, fatigue_scale, prob_scale, weather_coef,
        )
        if uniform(s) < p:
            accidents[a] += 1
            fatigue[a] = baseline[a]
        else:
            fatigue[a] += increment


def worker_tick(world: FactoryWorld, agent: int, rng: Rng) -> None:
    """Move one worker a single step, then check it for an accident."""
    _run_order(world, np.array([agent], dtype=np.int64), rng)


def _run_order(world: FactoryWorld, order: np.ndarray, rng: Rng) -> None:
    c = world.config.constants
    _factory_tick(
        rng.buffer, order, world.pos_x, world.pos_y, world.fatigue, world.baseline_fatigue,
        world.accidents, world.danger, world.weather, _MOVES,
        c.fatigue_increment, c.danger_scale, c.fatigue_scale, c.prob_scale, c.weather_coef,
    )


def focal_outcome(world: FactoryWorld) -> tuple[float, int]:
    """(baseline fatigue, accident count) of the configured focal worker."""
    i = world.config.focal_agent
    return float(world.baseline_fatigue[i]), int(world.accidents[i])


def focal_row(world: FactoryWorld) -> tuple[float, float, int]:
    i = world.config.focal_agent
    return float(world.baseline_fatigue[i]), float(world.clothing[i]), int(world.accidents[i])


def treat_fatigue(world: FactoryWorld, delta: float | None = None) -> None:
    """Raise every worker's fatigue and its reset baseline by ``delta``."""
    if delta is None:
        delta = world.config.treatment_delta
    if delta == 0:
        return
    world.fatigue += delta
    world.baseline_fatigue += delta


class AccidentsModel:
    """Engine adapter for the factory."""

    model_id = MODEL_ID

    def parse_config(self, raw: Mapping[str, Any] | AccidentsConfig) -> AccidentsConfig:
        if isinstance(raw, AccidentsConfig):
            return raw
        return AccidentsConfig.from_mapping(raw)

    def setup(self, config: AccidentsConfig, rng: Rng) -> FactoryWorld:
        return setup_factory(config, rng)

    def agent_count(self, world: FactoryWorld) -> int:
        return world.n_agents

    def act(self, world: FactoryWorld, order: np.ndarray, rng: Rng) -> None:
        _run_order(world, order, rng)

    def copy_world(self, world: FactoryWorld) -> FactoryWorld:
        return world.copy()

    def encode_world(self, world: FactoryWorld) -> bytes:
        meta = {"config": world.config.to_dict(), "weather": float(world.weather).hex()}
        return pack_world(MODEL_ID, meta, {k: getattr(world, k) for k in _ARRAY_FIELDS})

    def decode_world(self, blob: bytes) -> FactoryWorld:
        meta, arrays = unpack_world(MODEL_ID, blob)
        config = AccidentsConfig.from_mapping(meta["config"])
        return FactoryWorld(config=config, weather=float.fromhex(meta["weather"]), **arrays)

    def worlds_equal(self, a: FactoryWorld, b: FactoryWorld) -> bool:
        return (
            a.config == b.config
            and a.weather == b.weather
            and all(np.array_equal(getattr(a, k), getattr(b, k)) for k in _ARRAY_FIELDS)
        )


def constants_json(constants: AccidentConstants) -> str:
    return json.dumps(asdict(constants), sort_keys=True)


def with_constants(config: AccidentsConfig, **overrides: Any) -> AccidentsConfig:
    return replace(config, constants=replace(config.constants, **overrides))
