"""Simulation loop, snapshots and forks.

A :class:`SimState` bundles the tick counter, the generator and a model world.
Each :func:`step` draws a fresh activation order from the state's own
generator and lets every agent act once in that order.  Because every random
draw flows through that one generator, a snapshot of (tick, generator words,
world) pins down the entire future of the run: restoring it and replaying
gives bit-identical output, and two forks of it differ only in what is done to
them afterwards.

Snapshot file layout (all integers little-endian)::

    b"MKSN"  u32 format_version  payload  u64 checksum

    payload = u16 len(model_id) | model_id (utf-8) | u64 tick
              | RngState block | u64 len(world) | world bytes

The checksum is an 8-byte BLAKE2b digest of the payload.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Protocol

import numpy as np

from .accidents_model import AccidentsModel
from .determinism import Rng, RngState
from .shock_model import ShockModel

MAGIC = b"MKSN"
FORMAT_VERSION = 1


class Model(Protocol):
    model_id: str

    def parse_config(self, raw: Mapping[str, Any] | Any) -> Any: ...
    def setup(self, config: Any, rng: Rng) -> Any: ...
    def agent_count(self, world: Any) -> int: ...
    def act(self, world: Any, order: np.ndarray, rng: Rng) -> None: ...
    def copy_world(self, world: Any) -> Any: ...
    def encode_world(self, world: Any) -> bytes: ...
    def decode_world(self, blob: bytes) -> Any: ...


class UnknownModelError(KeyError):
    pass


class SnapshotError(ValueError):
    pass


class ChecksumError(SnapshotError):
    pass


class SnapshotVersionError(SnapshotError):
    pass


MODELS: dict[str, Model] = {}


def register_model(model: Model) -> None:
    MODELS[model.model_id] = model


def get_model(model_id: str) -> Model:
    try:
        return MODELS[model_id]
    except KeyError:
        raise UnknownModelError(f"unknown model id {model_id!r}; known: {sorted(MODELS)}") from None


register_model(ShockModel())
register_model(AccidentsModel())


@dataclass
class SimState:
    model_id: str
    tick: int
    rng: Rng
    world: Any

    @property
    def model(self) -> Model:
        return get_model(self.model_id)

    @property
    def config(self) -> Any:
        return self.world.config


def setup(model_id: str, config: Mapping[str, Any] | Any = None, seed: int = 0) -> SimState:
    """Create a tick-0 state; ``config`` may be a mapping or the model's config object."""
    model = get_model(model_id)
    cfg = model.parse_config({} if config is None else config)
    rng = Rng(seed)
    return SimState(model_id, 0, rng, model.setup(cfg, rng))


def step(state: SimState) -> SimState:
    """Advance one tick in place: reshuffle, every agent acts once, tick += 1."""
    model = state.model
    order = state.rng.permutation(model.agent_count(state.world))
    model.act(state.world, order, state.rng)
    state.tick += 1
    return state


def run_until(state: SimState, tick: int) -> SimState:
    if tick < state.tick:
        raise ValueError(f"cannot run backwards from tick {state.tick} to {tick}")
    model = state.model
    n = model.agent_count(state.world)
    rng = state.rng
    while state.tick < tick:
        model.act(state.world, rng.permutation(n), rng)
        state.tick += 1
    return state


def fork(state: SimState) -> tuple[SimState, SimState]:
    """Two independent copies of ``state``."""
    model = state.model
    return tuple(
        SimState(state.model_id, state.tick, state.rng.copy(), model.copy_world(state.world))
        for _ in range(2)
    )


@dataclass(frozen=True)
class Snapshot:
    format_version: int
    payload: bytes
    checksum: int

    def to_bytes(self) -> bytes:
        return (
            MAGIC
            + struct.pack("<I", self.format_version)
            + self.payload
            + struct.pack("<Q", self.checksum)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> Snapshot:
        if len(data) < 16 or data[:4] != MAGIC:
            raise SnapshotError("not a snapshot: bad magic bytes")
        (version,) = struct.unpack_from("<I", data, 4)
        (checksum,) = struct.unpack_from("<Q", data, len(data) - 8)
        return cls(version, bytes(data[8:-8]), checksum)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> Snapshot:
        return cls.from_bytes(Path(path).read_bytes())

    def verify(self) -> None:
        if self.format_version != FORMAT_VERSION:
            raise SnapshotVersionError(
                f"snapshot format {self.format_version} unsupported (expected {FORMAT_VERSION})"
            )
        if _digest(self.payload) != self.checksum:
            raise ChecksumError("snapshot checksum mismatch")


def _digest(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def snapshot(state: SimState) -> Snapshot:
    model = state.model
    mid = state.model_id.encode("utf-8")
    world = model.encode_world(state.world)
    payload = b"".join(
        [
            struct.pack("<H", len(mid)),
            mid,
            struct.pack("<Q", state.tick),
            state.rng.capture().to_bytes(),
            struct.pack("<Q", len(world)),
            world,
        ]
    )
    return Snapshot(FORMAT_VERSION, payload, _digest(payload))


def restore(snap: Snapshot) -> SimState:
    snap.verify()
    data = snap.payload
    try:
        (mlen,) = struct.unpack_from("<H", data, 0)
        model_id = data[2 : 2 + mlen].decode("utf-8")
        offset = 2 + mlen
        (tick,) = struct.unpack_from("<Q", data, offset)
        rng_state, offset = RngState.read_from(data, offset + 8)
        (wlen,) = struct.unpack_from("<Q", data, offset)
        offset += 8
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise SnapshotError("malformed snapshot payload") from exc
    world_blob = data[offset : offset + wlen]
    if len(world_blob) != wlen or offset + wlen != len(data):
        raise SnapshotError("world payload length mismatch")
    model = get_model(model_id)
    return SimState(model_id, tick, Rng.from_state(rng_state), model.decode_world(world_blob))


def states_equal(a: SimState, b: SimState) -> bool:
    """Bit-level equality of two states (generator words, tick and world)."""
    return snapshot(a).payload == snapshot(b).payload
