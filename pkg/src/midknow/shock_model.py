"""Attitude diffusion on a toroidal grid with an optional market shock.

Each agent holds an integer intensity for each of five ordinal responses; its
expressed attitude (high response) is the response with the largest intensity,
ties going to the lowest index.  Every tick each agent initiates one meeting,
with a Moore neighbour with probability ``p_local`` and otherwise with a
uniformly chosen other agent.  In a meeting the initiator's high response gains
one unit in the partner, then the partner's (re-read) high response gains one
unit in the initiator.

Responses are indexed 0..4 in code; index 4 is the most negative response and
the target of the shock.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Mapping

import numpy as np
from numba import njit

from .config import ConfigError, coerce_fields
from .determinism import Rng, int_below, uniform
from .worldio import pack_world, unpack_world

MODEL_ID = "shock"
N_RESPONSES = 5
NEGATIVE_RESPONSE = N_RESPONSES - 1
MAX_INITIAL_INTENSITY = 100
DIFFUSION_STEP = 1


@dataclass(frozen=True)
class ShockConfig:
    agents: int = 225
    p_local: float = 0.95
    shock_tick: int = 50
    shock_size: int = 10
    n_shocked: int = 50
    final_tick: int = 100
    shock_enabled: bool = True

    def __post_init__(self):
        side = math.isqrt(self.agents) if self.agents > 0 else 0
        if side * side != self.agents or side < 3:
            raise ConfigError(f"agents must be a square number >= 9, got {self.agents}")
        if not 0.0 <= self.p_local <= 1.0:
            raise ConfigError("p_local must lie in [0, 1]")
        if not 0 <= self.n_shocked <= self.agents:
            raise ConfigError("n_shocked must be between 0 and agents")
        if self.shock_size < 0:
            raise ConfigError("shock_size must be >= 0")
        if not 0 <= self.shock_tick <= self.final_tick:
            raise ConfigError("need 0 <= shock_tick <= final_tick")

    @property
    def side(self) -> int:
        return math.isqrt(self.agents)

    @property
    def target_response(self) -> int:
        return NEGATIVE_RESPONSE

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> ShockConfig:
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown shock config keys: {sorted(unknown)}")
        return cls(**coerce_fields(cls, raw))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def moore_neighbours(side: int) -> np.ndarray:
    """(side*side, 8) table of the Moore neighbours of each cell on a torus."""
    idx = np.arange(side * side)
    row, col = divmod(idx, side)
    cols = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            cols.append(((row + dr) % side) * side + (col + dc) % side)
    return np.stack(cols, axis=1).astype(np.int64)


@dataclass
class AttitudeWorld:
    config: ShockConfig
    intensities: np.ndarray  # (agents, 5) int64
    neighbours: np.ndarray  # derived from config, not serialized

    @property
    def n_agents(self) -> int:
        return int(self.intensities.shape[0])

    def copy(self) -> AttitudeWorld:
        return AttitudeWorld(self.config, self.intensities.copy(), self.neighbours)


@njit(cache=True)
def _high_response(row):
    best = 0
    for r in range(1, row.shape[0]):
        if row[r] > row[best]:
            best = r
    return best


@njit(cache=True)
def _fill_intensities(s, out, upper):
    for i in range(out.shape[0]):
        for r in range(out.shape[1]):
            out[i, r] = int_below(s, upper + 1)


@njit(cache=True)
def _diffuse(intens, a, b, step):
    intens[b, _high_response(intens[a])] += step
    intens[a, _high_response(intens[b])] += step


@njit(cache=True)
def _pick_partner(s, a, n, neighbours, p_local):
    # always two draws, whatever branch is taken
    if uniform(s) < p_local:
        return neighbours[a, int_below(s, neighbours.shape[1])]
    b = int_below(s, n - 1)
    return b + 1 if b >= a else b


@njit(cache=True)
def _meeting_tick(s, intens, neighbours, order, p_local, step):
    n = intens.shape[0]
    for k in range(order.shape[0]):
        a = order[k]
        b = _pick_partner(s, a, n, neighbours, p_local)
        _diffuse(intens, a, b, step)


@njit(cache=True)
def _count_response(intens, response):
    count = 0
    for i in range(intens.shape[0]):
        if _high_response(intens[i]) == response:
            count += 1
    return count


def setup_world(config: ShockConfig, rng: Rng) -> AttitudeWorld:
    world = AttitudeWorld(
        config=config,
        intensities=np.zeros((config.agents, N_RESPONSES), dtype=np.int64),
        neighbours=moore_neighbours(config.side),
    )
    init_attitudes(world, rng)
    return world


def init_attitudes(world: AttitudeWorld, rng: Rng) -> None:
    """Draw every intensity independently and uniformly from 0..100."""
    _fill_intensities(rng.buffer, world.intensities, MAX_INITIAL_INTENSITY)


def high_response(intensities) -> int:
    """Index of the strongest response; the lowest index wins ties.

    >>> high_response([7, 7, 0, 0, 0])
    0
    """
    return int(_high_response(np.asarray(intensities, dtype=np.int64)))


def meet(world: AttitudeWorld, initiator: int, rng: Rng) -> int:
    """Choose a meeting partner for ``initiator``."""
    return int(
        _pick_partner(rng.buffer, initiator, world.n_agents, world.neighbours, world.config.p_local)
    )


def diffuse(world: AttitudeWorld, a: int, b: int) -> None:
    if a == b:
        raise ValueError("an agent cannot meet itself")
    _diffuse(world.intensities, a, b, DIFFUSION_STEP)


def apply_shock(world: AttitudeWorld, rng: Rng, enabled: bool | None = None) -> np.ndarray:
    """Add ``shock_size`` to the negative response of ``n_shocked`` distinct agents.

    The shocked group is drawn even when the shock is disabled so that the
    shocked and unshocked branches of a pair consume the same draws and stay
    synchronized afterwards.  ``enabled`` overrides ``config.shock_enabled``.
    Returns the ids of the agents actually shocked.
    """
    cfg = world.config
    if enabled is None:
        enabled = cfg.shock_enabled
    chosen = rng.permutation(cfg.agents)[: cfg.n_shocked]
    if not enabled:
        return np.empty(0, dtype=np.int64)
    world.intensities[chosen, NEGATIVE_RESPONSE] += cfg.shock_size
    return chosen


def count_negative(world: AttitudeWorld) -> int:
    return int(_count_response(world.intensities, NEGATIVE_RESPONSE))


class ShockModel:
    """Engine adapter for the attitude model."""

    model_id = MODEL_ID

    def parse_config(self, raw: Mapping[str, Any] | ShockConfig) -> ShockConfig:
        if isinstance(raw, ShockConfig):
            return raw
        return ShockConfig.from_mapping(raw)

    def setup(self, config: ShockConfig, rng: Rng) -> AttitudeWorld:
        return setup_world(config, rng)

    def agent_count(self, world: AttitudeWorld) -> int:
        return world.n_agents

    def act(self, world: AttitudeWorld, order: np.ndarray, rng: Rng) -> None:
        _meeting_tick(
            rng.buffer, world.intensities, world.neighbours, order, world.config.p_local, DIFFUSION_STEP
        )

    def copy_world(self, world: AttitudeWorld) -> AttitudeWorld:
        return world.copy()

    def encode_world(self, world: AttitudeWorld) -> bytes:
        return pack_world(MODEL_ID, {"config": world.config.to_dict()}, {"intensities": world.intensities})

    def decode_world(self, blob: bytes) -> AttitudeWorld:
        meta, arrays = unpack_world(MODEL_ID, blob)
        config = ShockConfig.from_mapping(meta["config"])
        return AttitudeWorld(config, arrays["intensities"], moore_neighbours(config.side))

    def worlds_equal(self, a: AttitudeWorld, b: AttitudeWorld) -> bool:
        return a.config == b.config and np.array_equal(a.intensities, b.intensities)
