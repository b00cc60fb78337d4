"""Deterministic agent-based experiments with snapshot/restore pairing.

Two models ship with the package: ``shock`` (attitude diffusion hit by a
market shock) and ``accidents`` (a factory whose clothing variable is a
collider).  :mod:`midknow.harness` runs paired and unpaired campaigns on them
and :mod:`midknow.stats` analyses the results.
"""

from .determinism import Rng, RngState, derive_seed
from .engine import SimState, Snapshot, fork, restore, run_until, setup, snapshot, step

__version__ = "0.1.0"

__all__ = [
    "Rng",
    "RngState",
    "SimState",
    "Snapshot",
    "derive_seed",
    "fork",
    "restore",
    "run_until",
    "setup",
    "snapshot",
    "step",
]
