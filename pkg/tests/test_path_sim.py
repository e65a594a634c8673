import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from levy_valley_lab.levy_model import preset
from levy_valley_lab.path_sim import (
    GRID,
    JUMP_LEFT,
    JUMP_RIGHT,
    NotReached,
    SamplePath,
    first_passage_below,
    read_path_csv,
    reflected,
    running_infimum,
    simulate,
    time_reverse,
    trapezoid_exp,
    truncated_exponential_functional,
    write_path_csv,
)


def test_grid_and_jump_rows():
    spec = preset("bm-expjumps:1")
    p = simulate(spec, 50.0, 0.1, np.random.default_rng(0))
    assert p.t[0] == 0.0 and p.v[0] == 0.0
    assert np.all(np.diff(p.t) >= 0)
    left = np.flatnonzero(p.kind == JUMP_LEFT)
    assert np.array_equal(p.kind[left + 1], np.full(len(left), JUMP_RIGHT))
    assert np.array_equal(p.t[left], p.t[left + 1])
    assert np.all(p.v[left + 1] < p.v[left])  # only negative jumps
    grid = p.t[p.kind == GRID]
    assert np.allclose(grid, 0.1 * np.round(grid / 0.1))
    assert len(grid) == 501


def test_brownian_increment_moments():
    spec = preset("bm-kappa:1")
    p = simulate(spec, 2000.0, 0.5, np.random.default_rng(1))
    dv = np.diff(p.v)
    assert dv.mean() == pytest.approx(-0.25, abs=0.03)
    assert dv.var() == pytest.approx(0.5, rel=0.05)


def test_jump_count_and_sizes():
    spec = preset("bm-expjumps:1")
    p = simulate(spec, 4000.0, 0.1, np.random.default_rng(2))
    sizes = np.array([s for _, s in p.jumps])
    assert len(sizes) == pytest.approx(4000, rel=0.05)
    assert stats.kstest(-sizes, "expon").statistic < 0.03


def test_trapezoid_by_hand():
    p = SamplePath.from_grid_and_jumps([0.0, 1.0, 0.0], 1.0, [(1.5, 2.0, -1.0)])
    # rows: (0,0) (1,1) (1.5,2) (1.5,-1) (2,0)
    expected = (
        0.5 * (1 + math.e)
        + 0.25 * (math.e + math.e**2)
        + 0.25 * (math.exp(-1) + 1)
    )
    assert trapezoid_exp(p) == pytest.approx(expected)


def test_running_infimum_and_reflection():
    p = SamplePath.from_grid([0.0, -1.0, 0.5, -2.0, 1.0])
    assert list(running_infimum(p).v) == [0.0, -1.0, -1.0, -2.0, -2.0]
    assert list(reflected(p).v) == [0.0, 0.0, 1.5, 0.0, 3.0]


def test_first_passage_below():
    p = SamplePath.from_grid_and_jumps([0.0, -0.5, -0.4], 1.0, [(1.5, -0.45, -3.0)])
    assert first_passage_below(p, 1.0) == 3  # the right row of the jump
    with pytest.raises(NotReached):
        first_passage_below(p, 5.0)


def test_time_reverse_turns_down_jumps_up():
    spec = preset("bm-expjumps:1")
    p = simulate(spec, 20.0, 0.1, np.random.default_rng(3))
    r = time_reverse(p)
    down = sorted(round(-s, 12) for _, s in p.jumps)
    up = sorted(round(s, 12) for _, s in r.jumps)
    assert down == up and all(s > 0 for _, s in r.jumps)


def test_time_reverse_increments_in_law():
    spec = preset("bm-expjumps:1")
    p = simulate(spec, 3000.0, 0.5, np.random.default_rng(4))
    r = time_reverse(p)
    inc_p = p.values[1:] - p.values[:-1]
    inc_r = -(r.values[1:] - r.values[:-1])
    assert stats.ks_2samp(inc_p, inc_r).statistic < 0.02


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), horizon=st.floats(1.0, 30.0))
def test_time_reverse_involution(seed, horizon):
    p = simulate(preset("bm-expjumps:3/8"), horizon, 0.1, np.random.default_rng(seed))
    rr = time_reverse(time_reverse(p))
    assert np.allclose(rr.t, p.t) and np.allclose(rr.v, p.v)
    assert np.array_equal(rr.kind, p.kind)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_reflection_nonnegative(seed):
    p = simulate(preset("bm-expjumps:1"), 20.0, 0.05, np.random.default_rng(seed))
    assert np.all(reflected(p).v >= 0)
    assert np.all(np.diff(running_infimum(p).v) <= 0)


def test_csv_round_trip(tmp_path):
    p = simulate(preset("bm-expjumps:1"), 10.0, 0.1, np.random.default_rng(5))
    f = tmp_path / "path.csv"
    write_path_csv(p, f)
    assert f.read_text().splitlines()[0] == "t,v,is_jump"
    q = read_path_csv(f)
    assert np.array_equal(q.t, p.t) and np.array_equal(q.v, p.v)
    assert np.array_equal(q.kind, p.kind)
    assert q.step == pytest.approx(0.1)


def test_csv_rejects_unpaired_jump(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("t,v,is_jump\n0,0,0\n0.5,1,1\n1,0,0\n")
    with pytest.raises(ValueError):
        read_path_csv(f)


def test_truncated_functional_is_dufresne_like():
    spec = preset("bm-kappa:1")
    rng = np.random.default_rng(6)
    I = np.array([truncated_exponential_functional(spec, 0.01, None, rng) for _ in range(2000)])
    # I = 2/Gamma(1) for this environment
    assert stats.kstest(2.0 / I, "expon").statistic < 0.04


def test_seeded_determinism():
    a = simulate(preset("bm-expjumps:1"), 30.0, 0.1, np.random.default_rng(9))
    b = simulate(preset("bm-expjumps:1"), 30.0, 0.1, np.random.default_rng(9))
    assert np.array_equal(a.v, b.v) and np.array_equal(a.t, b.t)
