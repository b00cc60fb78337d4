from __future__ import annotations

import json

import numpy as np
import pytest

from midknow import engine
from midknow.worldio import pack_world, unpack_world

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class RecorderWorld:
    def __init__(self, config, firsts, positions):
        self.config = config
        self.firsts = firsts
        self.positions = positions


class RecorderModel:
    """Agents do nothing; the world logs who acted first and each agent's slot."""

    model_id = "recorder"

    def parse_config(self, raw):
        return {"agents": int(dict(raw).get("agents", 2))}

    def setup(self, config, rng):
        n = config["agents"]
        return RecorderWorld(config, [], np.zeros((n, n), dtype=np.int64))

    def agent_count(self, world):
        return world.config["agents"]

    def act(self, world, order, rng):
        world.firsts.append(int(order[0]))
        for slot, agent in enumerate(order):
            world.positions[agent, slot] += 1

    def copy_world(self, world):
        return RecorderWorld(dict(world.config), list(world.firsts), world.positions.copy())

    def encode_world(self, world):
        meta = {"config": world.config, "firsts": json.dumps(world.firsts)}
        return pack_world("recorder", meta, {"positions": world.positions})

    def decode_world(self, blob):
        meta, arrays = unpack_world("recorder", blob)
        return RecorderWorld(meta["config"], json.loads(meta["firsts"]), arrays["positions"])


@pytest.fixture(scope="session", autouse=True)
def recorder_model():
    engine.register_model(RecorderModel())
    yield
    engine.MODELS.pop("recorder", None)
