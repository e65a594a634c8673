"""
Local-time observables of a diffusion in a Levy potential.

The local time of the diffusion at its hitting time of ``r`` has the law of
the generalized Ornstein-Uhlenbeck process

    Z(x) = exp(V(x)) R(u(x)),    u(x) = int_0^x exp(-V(y)) dy,

where ``R`` is a squared Bessel process of dimension 2 started at 0. ``R``
is sampled exactly at the clock images of the environment breakpoints. The
recursion is carried out in local units so that neither ``u`` nor
``exp(V)`` has to be formed: with ``a_k = int exp(-(V - V_k))`` over
``[x_k, x_{k+1}]``,

    Z_{k+1} = exp(V_{k+1} - V_k) a_k [(N_1 + sqrt(Z_k / a_k))^2 + N_2^2],

which is the same transition as ``exp(V) R(u)`` with ``R`` updated over the
clock increment ``exp(-V_k) a_k``.

A direct simulator of the diffusion ``X = A^{-1}(B(T^{-1}(t)))`` is also
provided for cross-checks of hitting times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numba as nb
import numpy as np

from .levy_model import EnvironmentSpec
from .path_sim import (
    DEFAULT_STEP,
    JUMP_LEFT,
    JUMP_RIGHT,
    HorizonCapExceeded,
    SamplePath,
    simulate,
)
from .valleys import ValleyFunctionals

__all__ = [
    "ZPath",
    "sample_besq2",
    "z_process",
    "sup_and_argmax",
    "peak_and_duration_from_valley",
    "DiffusionTrace",
    "two_sided_environment",
    "simulate_diffusion_direct",
    "direct_hitting_time",
]


@dataclass(frozen=True, eq=False)
class ZPath:
    """Sampled Z-process.

    Attributes
    ----------
    positions : ndarray
        Breakpoint positions (jumps appear twice).
    log_clock : ndarray
        ``log u(x_k)``; ``-inf`` at 0. Stored in log form because ``u``
        overflows for long windows.
    z_values : ndarray
    cumulative_occupation : ndarray
        Trapezoid integral of ``Z`` from 0.
    """

    positions: np.ndarray
    log_clock: np.ndarray
    z_values: np.ndarray
    cumulative_occupation: np.ndarray

    @property
    def clock(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_clock)

    @property
    def occupation(self) -> float:
        return float(self.cumulative_occupation[-1])


@nb.njit(cache=True)
def _besq2_kernel(rng, times, start, out):
    x = start
    prev = 0.0
    for k in range(times.shape[0]):
        d = times[k] - prev
        if d > 0.0:
            n1 = rng.standard_normal()
            n2 = rng.standard_normal()
            a = n1 + math.sqrt(x / d)
            x = d * (a * a + n2 * n2)
            prev = times[k]
        out[k] = x


def sample_besq2(clock_times: Sequence[float], start: float = 0.0,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Exact squared Bessel(2) values at increasing times.

    The process starts at ``start`` at time 0. Over an increment ``d`` from
    state ``x`` the next state is ``d*((N1 + sqrt(x/d))**2 + N2**2)``, a
    scaled noncentral chi-square with two degrees of freedom.
    """
    times = np.asarray(clock_times, dtype=float)
    if np.any(np.diff(times) < 0) or (len(times) and times[0] < 0):
        raise ValueError("clock times must be nonnegative and increasing")
    rng = np.random.default_rng() if rng is None else rng
    out = np.empty(len(times))
    _besq2_kernel(rng, times, float(start), out)
    return out


@nb.njit(cache=True)
def _z_kernel(rng, t, v, z_out, lc_out, occ_out):
    z = 0.0
    lc = -np.inf
    occ = 0.0
    z_out[0] = 0.0
    lc_out[0] = lc
    occ_out[0] = 0.0
    for k in range(1, t.shape[0]):
        dx = t[k] - t[k - 1]
        dv = v[k] - v[k - 1]
        zp = z
        if dx > 0.0:
            a = 0.5 * dx * (1.0 + math.exp(-dv))
            n1 = rng.standard_normal()
            n2 = rng.standard_normal()
            b = n1 + math.sqrt(z / a)
            z = math.exp(dv) * a * (b * b + n2 * n2)
            inc = math.log(a) - v[k - 1]
            if lc == -np.inf:
                lc = inc
            elif inc > lc:
                lc = inc + math.log1p(math.exp(lc - inc))
            else:
                lc = lc + math.log1p(math.exp(inc - lc))
            occ += 0.5 * dx * (zp + z)
        else:
            z = z * math.exp(dv)
        z_out[k] = z
        lc_out[k] = lc
        occ_out[k] = occ


def z_process(env_path: SamplePath, rng: Optional[np.random.Generator] = None) -> ZPath:
    """Z-process along an environment path on ``[0, r]``.

    The clock is the trapezoid integral of ``exp(-V)``; ``R`` starts at 0 and
    is refreshed at every breakpoint; across a jump ``R`` is unchanged and
    ``Z`` moves with ``exp(V)``.
    """
    rng = np.random.default_rng() if rng is None else rng
    t = np.asarray(env_path.t, dtype=float)
    v = np.asarray(env_path.v, dtype=float) - env_path.v[0]
    n = len(t)
    z = np.empty(n)
    lc = np.empty(n)
    occ = np.empty(n)
    _z_kernel(rng, t, v, z, lc, occ)
    return ZPath(t.copy(), lc, z, occ)


def sup_and_argmax(z: ZPath) -> Tuple[float, float]:
    """Maximum of ``Z`` and the smallest position attaining it."""
    i = int(np.argmax(z.z_values))
    return float(z.z_values[i]), float(z.positions[i])


def peak_and_duration_from_valley(functionals: ValleyFunctionals,
                                  rng: Optional[np.random.Generator] = None):
    """Peak of local time and crossing time attributed to one valley.

    Draws ``e`` exponential with mean 2 and returns
    ``(e*S, e*S*R, (e, S, R))``.
    """
    rng = np.random.default_rng() if rng is None else rng
    e = float(rng.exponential(2.0))
    S, R = functionals.S, functionals.R
    return e * S, e * S * R, (e, S, R)


# ---------------------------------------------------------------------------
# direct simulation of the diffusion


@dataclass(frozen=True)
class DiffusionTrace:
    """Recorded diffusion positions.

    ``hit_time`` is the first time the position reached ``target`` (NaN if
    no target or not reached before the horizon).
    """

    times: np.ndarray
    positions: np.ndarray
    hit_time: float


def two_sided_environment(spec: EnvironmentSpec, right: float, left: float,
                          step: float = DEFAULT_STEP,
                          rng: Optional[np.random.Generator] = None) -> SamplePath:
    """Environment on ``[-left, right]`` with ``V(0) = 0``.

    The negative half uses an independent copy ``V'`` through
    ``V(-y) = -V'(y-)``, which keeps the increments stationary.
    """
    rng = np.random.default_rng() if rng is None else rng
    pos = simulate(spec, right, step, rng)
    neg = simulate(spec, left, step, rng)
    nk = neg.kind[::-1]
    nk = np.where(nk == JUMP_LEFT, JUMP_RIGHT, np.where(nk == JUMP_RIGHT, JUMP_LEFT, nk))
    t = np.concatenate((-neg.t[::-1][:-1], pos.t))
    v = np.concatenate((-neg.v[::-1][:-1], pos.v))
    k = np.concatenate((nk[:-1], pos.kind)).astype(np.int8)
    return SamplePath(step, t, v, k)


@nb.njit(cache=True)
def _cell_value(t, v, i, x):
    w = (x - t[i]) / (t[i + 1] - t[i])
    return v[i] + w * (v[i + 1] - v[i])


@nb.njit(cache=True)
def _lin_exp_integral(d, L, vs):
    # int_0^d exp(vs*s/L) ds for a linear segment of slope vs/L
    c = vs / L
    if abs(c * d) < 1e-10:
        return d * (1.0 + 0.5 * c * d)
    return math.expm1(c * d) / c


@nb.njit(cache=True)
def _lin_exp_inverse(target, L, vs):
    # solve int_0^d exp(c s) ds = target for d
    c = vs / L
    if abs(c * target) < 1e-10:
        return target * (1.0 - 0.5 * c * target)
    arg = c * target
    if arg <= -1.0:
        return np.inf
    return math.log1p(arg) / c


@nb.njit(cache=True)
def _move(t, v, i, x, v0, s):
    """Solve ``int_x^{x'} exp(V - v0) = s`` (signed) walking across cells.

    Returns ``(i', x', ok)``; ``ok`` is False when the walk leaves the rows.
    """
    n = t.shape[0]
    rem = abs(s)
    if s >= 0.0:
        while True:
            L = t[i + 1] - t[i]
            if L > 0.0:
                vx = _cell_value(t, v, i, x)
                dv = v[i + 1] - v[i]
                full = math.exp(vx - v0) * _lin_exp_integral(t[i + 1] - x, L, dv)
                if full >= rem:
                    d = _lin_exp_inverse(rem * math.exp(v0 - vx), L, dv)
                    return i, min(x + d, t[i + 1]), True
                rem -= full
                x = t[i + 1]
            i += 1
            if i >= n - 1:
                return n - 2, x, False
    while True:
        L = t[i + 1] - t[i]
        if L > 0.0:
            vx = _cell_value(t, v, i, x)
            dv = v[i + 1] - v[i]
            full = math.exp(vx - v0) * _lin_exp_integral(x - t[i], L, -dv)
            if full >= rem:
                d = _lin_exp_inverse(rem * math.exp(v0 - vx), L, -dv)
                return i, max(x - d, t[i]), True
            rem -= full
            x = t[i]
        i -= 1
        if i < 0:
            return 0, x, False


@nb.njit(cache=True)
def _direct_kernel(rng, t, v, x0_cell, x0, delta, horizon, target,
                   record_every, rec_t, rec_x):
    """Walk the diffusion in natural-scale increments.

    Each step moves the scale function by ``delta*N(0,1)`` in units of
    ``exp(V(X))`` and advances real time by the trapezoid of
    ``exp(-2(V - V(X)))`` over the Brownian step of variance
    ``(delta*exp(V(X)))**2``.
    Returns ``(status, time, position, n_records)``; status 0 when the
    horizon is reached, 1 when the target is hit, 2 when the walk leaves the
    environment.
    """
    i = x0_cell
    x = x0
    time = 0.0
    nrec = 0
    steps = 0
    while time < horizon:
        v0 = _cell_value(t, v, i, x)
        i, x, ok = _move(t, v, i, x, v0, delta * rng.standard_normal())
        if not ok:
            return 2, time, x, nrec
        v1 = _cell_value(t, v, i, x)
        time += delta * delta * 0.5 * (1.0 + math.exp(-2.0 * (v1 - v0)))
        steps += 1
        if record_every > 0 and steps % record_every == 0 and nrec < rec_t.shape[0]:
            rec_t[nrec] = time
            rec_x[nrec] = x
            nrec += 1
        if x >= target:
            return 1, time, x, nrec
    return 0, time, x, nrec


def simulate_diffusion_direct(
    env_path: SamplePath,
    brownian_step: float,
    horizon: float,
    rng: Optional[np.random.Generator] = None,
    target: float = math.inf,
    record_every: int = 1000,
    max_records: int = 100_000,
) -> DiffusionTrace:
    """Time-changed Brownian motion ``X = A^{-1}(B(T^{-1}(t)))``.

    ``B`` is advanced on an adaptive grid: each step has standard deviation
    ``brownian_step * exp(V(X))``, so that ``X`` moves by about
    ``brownian_step`` in space and real time advances by about
    ``brownian_step**2``. ``A^{-1}`` is evaluated exactly for the
    piecewise-linear interpolation of ``V``, relative to the current position
    so that no global scale function (which under- or overflows) is formed.

    Parameters
    ----------
    env_path : SamplePath
        Environment containing 0, e.g. from :func:`two_sided_environment`.
    brownian_step : float
    horizon : float
        Stop when real time exceeds this.
    target : float
        Stop when the position reaches this level; its time is ``hit_time``.

    Raises
    ------
    HorizonCapExceeded
        If the diffusion leaves the simulated environment.
    """
    rng = np.random.default_rng() if rng is None else rng
    t = np.asarray(env_path.t, dtype=float)
    v = np.asarray(env_path.v, dtype=float)
    v = v - env_path.value_at(0.0)
    cell = int(np.searchsorted(t, 0.0, side="right")) - 1
    cell = min(max(cell, 0), len(t) - 2)
    while t[cell + 1] == t[cell]:
        cell += 1
    rec_t = np.empty(max_records)
    rec_x = np.empty(max_records)
    status, time, x, nrec = _direct_kernel(
        rng, t, v, cell, 0.0, float(brownian_step), float(horizon), float(target),
        int(record_every), rec_t, rec_x,
    )
    if status == 2:
        raise HorizonCapExceeded("diffusion left the simulated environment")
    times = np.concatenate(([0.0], rec_t[:nrec], [time]))
    positions = np.concatenate(([0.0], rec_x[:nrec], [x]))
    return DiffusionTrace(times, positions, time if status == 1 else math.nan)


def direct_hitting_time(spec: EnvironmentSpec, r: float, brownian_step: float = 0.02,
                        step: float = DEFAULT_STEP,
                        rng: Optional[np.random.Generator] = None,
                        horizon: float = math.inf) -> float:
    """Hitting time of ``r`` by the directly simulated diffusion."""
    rng = np.random.default_rng() if rng is None else rng
    left = 60.0 / -spec.mean_slope + 20.0
    env = two_sided_environment(spec, r + 1.0, left, step, rng)
    tr = simulate_diffusion_direct(env, brownian_step, horizon, rng, target=r,
                                   record_every=0, max_records=1)
    return tr.hit_time
