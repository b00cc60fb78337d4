import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from midknow import engine
from midknow.config import ConfigError
from midknow.determinism import Rng
from midknow.shock_model import (
    NEGATIVE_RESPONSE,
    ShockConfig,
    apply_shock,
    count_negative,
    diffuse,
    high_response,
    meet,
    moore_neighbours,
    setup_world,
)


def world(seed=1, **cfg):
    return setup_world(ShockConfig(**cfg), Rng(seed))


def test_defaults():
    cfg = ShockConfig()
    assert (cfg.agents, cfg.p_local, cfg.shock_tick, cfg.shock_size, cfg.n_shocked, cfg.final_tick) == (
        225, 0.95, 50, 10, 50, 100,
    )
    assert cfg.side == 15
    assert cfg.target_response == 4


def test_config_rejects_bad_values():
    for bad in ({"agents": 200}, {"p_local": 1.5}, {"n_shocked": 300}, {"shock_tick": 101}):
        with pytest.raises(ConfigError):
            ShockConfig(**bad)
    with pytest.raises(ConfigError):
        ShockConfig.from_mapping({"agnets": 225})


def test_config_from_text_values():
    cfg = ShockConfig.from_mapping({"agents": "100", "p_local": "0.5", "shock_enabled": "false"})
    assert cfg == ShockConfig(agents=100, p_local=0.5, shock_enabled=False)


def test_initial_intensities():
    w = world(3)
    assert w.intensities.shape == (225, 5)
    assert w.intensities.min() >= 0 and w.intensities.max() <= 100
    assert abs(w.intensities.mean() - 50) < 3
    assert np.array_equal(w.intensities, world(3).intensities)


def test_high_response_rules():
    assert high_response([1, 2, 3, 4, 5]) == 4
    assert high_response([7, 7, 0, 0, 0]) == 0
    assert high_response([100, 0, 0, 0, 95 + 10]) == NEGATIVE_RESPONSE


def test_moore_neighbours_torus():
    nb = moore_neighbours(15)
    assert nb.shape == (225, 8)
    assert sorted(nb[0]) == sorted([1, 14, 15, 16, 29, 210, 211, 224])
    for i in range(225):
        assert i not in nb[i]
        assert len(set(nb[i])) == 8


def test_meet_local_only():
    w = world(p_local=1.0)
    rng = Rng(5)
    for a in range(0, 225, 7):
        for _ in range(20):
            assert meet(w, a, rng) in w.neighbours[a]


def test_meet_global_uniform():
    w = world(p_local=0.0)
    rng = Rng(6)
    n = 100_000
    partners = np.array([meet(w, 17, rng) for _ in range(n)])
    assert 17 not in partners
    counts = np.bincount(partners, minlength=225)
    counts = np.delete(counts, 17)
    expected = n / 224
    # chi-square with 223 dof; 99.9th percentile is about 300
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 300


def test_meet_never_self():
    w = world(p_local=0.5)
    rng = Rng(7)
    assert all(meet(w, a, rng) != a for a in range(225) for _ in range(10))


def test_meet_consumes_two_draws():
    for p in (0.0, 0.5, 1.0):
        w = world(p_local=p)
        rng = Rng(8)
        for k in range(1, 50):
            meet(w, k, rng)
            assert rng.draws_so_far == 2 * k


def test_diffuse_mechanics():
    w = world()
    w.intensities[0] = [0, 9, 0, 0, 0]
    w.intensities[1] = [0, 0, 0, 9, 0]
    diffuse(w, 0, 1)
    assert list(w.intensities[1]) == [0, 1, 0, 9, 0]
    assert list(w.intensities[0]) == [0, 9, 0, 1, 0]


def test_diffuse_reads_partner_after_update():
    w = world()
    w.intensities[0] = [0, 5, 0, 0, 0]
    w.intensities[1] = [0, 4, 0, 5, 0]
    # the first increment creates a tie that the lowest index wins
    diffuse(w, 0, 1)
    assert list(w.intensities[1]) == [0, 5, 0, 5, 0]
    assert list(w.intensities[0]) == [0, 6, 0, 0, 0]


def test_diffuse_same_top():
    w = world()
    w.intensities[2] = [8, 1, 1, 1, 1]
    w.intensities[3] = [9, 0, 0, 0, 0]
    diffuse(w, 2, 3)
    assert w.intensities[2, 0] == 9 and w.intensities[3, 0] == 10


def test_diffuse_self_rejected():
    with pytest.raises(ValueError):
        diffuse(world(), 4, 4)


@given(st.integers(0, 2**32), st.integers(0, 224), st.integers(0, 223))
@settings(max_examples=40, deadline=None)
def test_diffuse_adds_two_units(seed, a, b):
    w = world(seed)
    b = b + 1 if b >= a else b
    before = w.intensities.sum()
    diffuse(w, a, b)
    assert w.intensities.sum() == before + 2


def test_shock_size_and_targets():
    w = world(2)
    before = w.intensities.copy()
    chosen = apply_shock(w, Rng(3))
    assert len(chosen) == len(set(chosen.tolist())) == 50
    delta = w.intensities - before
    assert (delta[:, :4] == 0).all()
    assert sorted(np.flatnonzero(delta[:, 4]).tolist()) == sorted(chosen.tolist())
    assert (delta[chosen, 4] == 10).all()


def test_disabled_shock_changes_nothing_but_keeps_stream():
    w = world(2, shock_enabled=False)
    before = w.intensities.copy()
    r_off, r_on = Rng(3), Rng(3)
    apply_shock(w, r_off)
    apply_shock(world(2), r_on)
    assert np.array_equal(w.intensities, before)
    assert r_off.capture() == r_on.capture()


def test_shock_everyone():
    w = world(2, n_shocked=225)
    before = w.intensities.copy()
    apply_shock(w, Rng(1))
    assert ((w.intensities - before)[:, 4] == 10).all()


def test_count_negative():
    w = world()
    w.intensities[:] = [0, 0, 0, 0, 1]
    assert count_negative(w) == 225
    w.intensities[:] = [1, 0, 0, 0, 0]
    assert count_negative(w) == 0
    w2 = world(9)
    assert count_negative(w2) == count_negative(w2)


def test_total_intensity_growth_without_shock():
    cfg = ShockConfig(agents=81, shock_tick=10, final_tick=30)
    s = engine.setup("shock", cfg, 12)
    initial = s.world.intensities.sum()
    engine.run_until(s, 30)
    assert s.world.intensities.sum() == initial + 2 * 81 * 30


def test_intensities_never_decrease():
    s = engine.setup("shock", {"agents": 49, "n_shocked": 10}, 13)
    prev = s.world.intensities.copy()
    for _ in range(20):
        engine.step(s)
        assert (s.world.intensities >= prev).all()
        prev = s.world.intensities.copy()
