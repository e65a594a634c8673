import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import levy_valley_lab.valleys as valleys_mod
from levy_valley_lab.levy_model import preset
from levy_valley_lab.path_sim import (
    SamplePath,
    simulate,
    time_reverse,
    trapezoid_exp,
    write_path_csv,
    read_path_csv,
)
from levy_valley_lab.valleys import (
    build_standard_valleys,
    default_delta,
    find_h_extrema,
    first_ascend,
    iter_standard_valleys,
    sample_R,
    sample_V_hat_up_killed,
    sample_V_up_killed,
    tau_pm,
    valley_functionals,
)
from oracles import h_extrema_oracle


def _pairs(ext):
    return sorted((e.position, e.kind) for e in ext)


def test_hand_checkable_extrema():
    p = SamplePath.from_grid([0, -3, 1, -4, 2])
    assert [(e.position, e.kind) for e in find_h_extrema(p, 2)] == [
        (1.0, "min"), (2.0, "max"), (3.0, "min"),
    ]


def test_monotone_path_has_no_extrema():
    assert find_h_extrema(SamplePath.from_grid(np.arange(20.0)), 0.5) == []
    assert find_h_extrema(SamplePath.from_grid([0.0, 1.0]), 0.5) == []


def test_large_jump_is_both_extrema():
    # a drop of 5 at t=1.5 is an h-maximum (left value) and an h-minimum (right value)
    p = SamplePath.from_grid_and_jumps([0.0, 0.5, -4.0, -3.0], 1.0, [(1.5, 1.0, -4.5)])
    ext = find_h_extrema(p, 1.0)
    assert [(e.position, e.kind) for e in ext] == [(1.5, "max"), (1.5, "min")]
    assert ext[0].value == 1.0 and ext[1].value == -4.5


def test_boundary_is_never_reported():
    p = SamplePath.from_grid([-5.0, 0.0, -0.1, 0.0, -5.0])
    positions = [e.position for e in find_h_extrema(p, 1.0)]
    assert 0.0 not in positions and 4.0 not in positions


def test_tie_goes_to_smaller_position():
    p = SamplePath.from_grid([3.0, 0.0, 2.0, 0.0, 3.0])
    mins = [e.position for e in find_h_extrema(p, 1.0) if e.kind == "min"]
    assert mins == [1.0, 3.0]  # the max at 2 separates them by exactly 2 >= h
    mins = [e.position for e in find_h_extrema(p, 2.5) if e.kind == "min"]
    assert mins == [1.0]


@pytest.mark.parametrize("seed", range(25))
def test_matches_definitional_oracle(seed):
    rng = np.random.default_rng(seed)
    env = ["bm-kappa:0.5", "bm-expjumps:1", "bm-expjumps:3/8"][seed % 3]
    p = simulate(preset(env), 20.0, 0.05, rng)
    if seed % 2:
        p = time_reverse(p)  # exercise up-jumps too
    h = float(rng.uniform(0.3, 3.0))
    assert _pairs(find_h_extrema(p, h)) == h_extrema_oracle(p, h)


@settings(max_examples=60, deadline=None)
@given(steps=st.lists(st.integers(-3, 3), min_size=3, max_size=40), h=st.integers(1, 4))
def test_integer_paths_with_ties(steps, h):
    p = SamplePath.from_grid(np.cumsum([0] + steps).astype(float))
    ext = find_h_extrema(p, h)
    assert _pairs(ext) == h_extrema_oracle(p, h)
    assert all(a.kind != b.kind for a, b in zip(ext, ext[1:]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.floats(0.2, 2.0), extra=st.floats(0.1, 2.0))
def test_alternation_and_nesting(seed, h, extra):
    p = simulate(preset("bm-expjumps:1"), 15.0, 0.05, np.random.default_rng(seed))
    ext = find_h_extrema(p, h)
    pos = [e.position for e in ext]
    assert all(a.kind != b.kind for a, b in zip(ext, ext[1:]))
    assert all(a <= b for a, b in zip(pos, pos[1:]))
    small = {e.position for e in ext if e.kind == "min"}
    big = {e.position for e in find_h_extrema(p, h + extra) if e.kind == "min"}
    assert big <= small


def _check_invariants(val, h):
    seg = val.segment
    assert val.L_prev <= val.L_sharp <= val.m < val.tau_h < val.L
    assert seg.v[val.i_m] == 0.0
    assert seg.v[val.i_tau] >= h
    assert seg.v[val.i_L] <= h / 2
    assert seg.t[val.i_m] == val.m and seg.t[val.i_tau] == val.tau_h and seg.t[val.i_L] == val.L
    j0 = int(np.searchsorted(seg.t, val.L_sharp)) if val.complete else 0
    assert np.all(seg.v[j0 : val.i_tau + 1] >= 0)
    # tau_h is the first breakpoint at or above h after the bottom
    assert np.all(seg.v[val.i_m : val.i_tau] < h)
    # L is the first passage at or below h/2 after tau_h
    assert np.all(seg.v[val.i_tau : val.i_L] > h / 2)


@pytest.mark.parametrize("env,h", [("bm-kappa:1", 3.0), ("bm-expjumps:1", 3.0),
                                   ("bm-expjumps:3/8", 4.0)])
def test_standard_valley_invariants(env, h):
    spec = preset(env)
    vals = build_standard_valleys(spec, h, None, 6, 0.01, np.random.default_rng(1))
    prev_L = 0.0
    for i, val in enumerate(vals, start=1):
        assert val.index == i and val.L_prev == prev_L
        _check_invariants(val, h)
        prev_L = val.L
        f = valley_functionals(val)
        assert 0 < f.S <= f.A_of_L and f.R > 0


def test_sharp_passage_depth():
    spec = preset("bm-kappa:1")
    h, delta = 3.0, default_delta(1.0)
    for val in build_standard_valleys(spec, h, delta, 4, 0.01, np.random.default_rng(2)):
        seg = val.segment
        depth = math.exp((1 - delta) * spec.kappa * h)
        i_prev = 0
        i_sharp = int(np.searchsorted(seg.t, val.L_sharp))
        drop = seg.v[i_prev] - seg.v[i_sharp]
        assert drop >= depth
        assert np.all(seg.v[i_prev:i_sharp] - seg.v[i_prev] > -depth)


def test_bottom_mode_matches_full_mode(monkeypatch):
    monkeypatch.setattr(valleys_mod, "_COMPACT_ROWS", 5000)
    spec = preset("bm-expjumps:1")
    full = build_standard_valleys(spec, 5.0, None, 5, 0.01, np.random.default_rng(3), "full")
    bottom = build_standard_valleys(spec, 5.0, None, 5, 0.01, np.random.default_rng(3), "bottom")
    for a, b in zip(full, bottom):
        for k in ("L_prev", "L_sharp", "m", "tau_h", "L", "V_m"):
            assert getattr(a, k) == getattr(b, k)
        fa, fb = valley_functionals(a), valley_functionals(b)
        assert fa.R == pytest.approx(fb.R, rel=1e-12)
        assert fa.S == pytest.approx(fb.S, rel=1e-12)
        assert fa.A_of_L == pytest.approx(fb.A_of_L, rel=1e-12)


def test_functional_identity_and_tau_pm():
    spec = preset("bm-kappa:1")
    val = build_standard_valleys(spec, 4.0, None, 2, 0.01, np.random.default_rng(4))[1]
    seg, h = val.segment, val.h
    assert tau_pm(val, 0.0, -1) == val.m == tau_pm(val, 0.0, +1)
    assert tau_pm(val, h, +1) == val.tau_h
    # linear-scan oracle at h/2
    up = next(j for j in range(val.i_m + 1, len(seg.v)) if seg.v[j] >= h / 2)
    down = max(j for j in range(0, val.i_m) if seg.v[j] >= h / 2)
    assert tau_pm(val, h / 2, +1) == seg.t[up]
    assert tau_pm(val, h / 2, -1) == seg.t[down]
    f = valley_functionals(val)
    head = trapezoid_exp(seg, val.i_m, up)
    assert f.S + head == pytest.approx(f.A_of_L, rel=1e-12)
    assert f.R == pytest.approx(trapezoid_exp(seg, down, up, sign=-1.0), rel=1e-12)


def test_standard_bottoms_are_h_minima():
    spec = preset("bm-kappa:1")
    h = 3.0
    rng = np.random.default_rng(5)
    vals = build_standard_valleys(spec, h, None, 4, 0.01, rng, "full")
    for val in vals:
        # the bottom needs witnesses on both sides inside its own segment
        mins = {e.position for e in find_h_extrema(val.segment, h) if e.kind == "min"}
        assert val.m in mins


def test_decompose_fixed_path(tmp_path):
    spec = preset("bm-kappa:1")
    p = simulate(spec, 2000.0, 0.01, np.random.default_rng(6))
    f = tmp_path / "p.csv"
    write_path_csv(p, f)
    q = read_path_csv(f)
    vals = list(iter_standard_valleys(spec, 3.0, None, q.step, path=q))
    assert len(vals) >= 2
    for val in vals:
        _check_invariants(val, 3.0)


def test_first_ascend_injected_path():
    p = SamplePath.from_grid([0.0, -1.0, -2.5, -1.0, 0.0, 1.0])
    m_star, tau_star = first_ascend(None, 2.0, path=p)
    assert (m_star, tau_star) == (2.0, 4.0)


def test_first_ascend_random():
    spec = preset("bm-kappa:1")
    rng = np.random.default_rng(7)
    for _ in range(20):
        m_star, tau_star = first_ascend(spec, 2.0, 0.01, rng)
        assert 0 <= m_star < tau_star


def test_slope_samplers():
    spec = preset("bm-expjumps:1")
    rng = np.random.default_rng(8)
    up = sample_V_up_killed(spec, 3.0, 0.01, rng)
    assert up.t[0] == 0.0 and up.v[0] == 0.0 and up.v[-1] >= 3.0
    assert np.all(up.v[:-1] < 3.0) and np.all(up.v >= 0)
    hat, w = sample_V_hat_up_killed(spec, 3.0, 0.01, rng)
    assert hat.v[0] == 0.0 and hat.v[-1] >= 3.0
    assert 1 - math.exp(-spec.kappa * 3.0) <= w <= 1.0
    assert sample_R(spec, 3.0, 0.01, rng) > 0
