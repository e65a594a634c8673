"""
Discretized cadlag trajectories of the potential.

A :class:`SamplePath` stores a uniform time grid together with exactly placed
jump instants. Internally every breakpoint is one *row* ``(t, v, kind)``; a
jump occupies two consecutive rows at the same time, its left value first and
its right value second. This is also the on-disk CSV layout, so the
trapezoidal rule, running extrema and passage scans can walk the rows
directly: a jump contributes an interval of zero length.

Between breakpoints the Brownian part is sampled exactly at the breakpoints
only; no bridge refinement is made for passage times.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numba as nb
import numpy as np

from .levy_model import EnvironmentSpec

__all__ = [
    "GRID",
    "JUMP_LEFT",
    "JUMP_RIGHT",
    "SamplePath",
    "HorizonCapExceeded",
    "NotReached",
    "PathStream",
    "simulate",
    "running_infimum",
    "reflected",
    "first_passage_below",
    "truncated_exponential_functional",
    "time_reverse",
    "trapezoid_exp",
    "write_path_csv",
    "read_path_csv",
    "DEFAULT_STEP",
    "DEFAULT_MAX_STEPS",
]

GRID = 0
JUMP_LEFT = 1
JUMP_RIGHT = 2

DEFAULT_STEP = 0.01
DEFAULT_MAX_STEPS = 2**20


class HorizonCapExceeded(RuntimeError):
    """The stopping event did not occur within the configured step budget."""


class NotReached(LookupError):
    """A passage level was not reached inside the available window."""


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Discretized trajectory stored as breakpoint rows.

    Parameters
    ----------
    step : float
        Grid spacing.
    t : ndarray
        Row times, nondecreasing; equal for the two rows of a jump.
    v : ndarray
        Row values.
    kind : ndarray of int8
        ``GRID``, ``JUMP_LEFT`` or ``JUMP_RIGHT``.
    """

    step: float
    t: np.ndarray
    v: np.ndarray
    kind: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    @property
    def times(self) -> np.ndarray:
        """Distinct breakpoint times (strictly increasing)."""
        return self.t[self.kind != JUMP_LEFT]

    @property
    def values(self) -> np.ndarray:
        """Right-continuous values at the distinct breakpoint times."""
        return self.v[self.kind != JUMP_LEFT]

    @property
    def left_values(self) -> np.ndarray:
        """Left limits at the distinct breakpoint times."""
        out = self.v[self.kind != JUMP_LEFT].copy()
        right = np.flatnonzero(self.kind[self.kind != JUMP_LEFT] == JUMP_RIGHT)
        out[right] = self.v[self.kind == JUMP_LEFT]
        return out

    @property
    def jumps(self) -> list[tuple[float, float]]:
        """Ordered ``(time, size)`` pairs."""
        idx = np.flatnonzero(self.kind == JUMP_RIGHT)
        return [(float(self.t[i]), float(self.v[i] - self.v[i - 1])) for i in idx]

    @property
    def is_jump(self) -> np.ndarray:
        return self.kind != GRID

    def with_values(self, v: np.ndarray) -> "SamplePath":
        return SamplePath(self.step, self.t, np.asarray(v, dtype=float), self.kind)

    def value_at(self, x: float) -> float:
        """Right-continuous value at ``x`` (linear between breakpoints)."""
        i = int(np.searchsorted(self.t, x, side="right")) - 1
        i = min(max(i, 0), len(self.t) - 1)
        if self.t[i] == x or i == len(self.t) - 1:
            return float(self.v[i])
        t0, t1 = self.t[i], self.t[i + 1]
        w = (x - t0) / (t1 - t0)
        return float((1 - w) * self.v[i] + w * self.v[i + 1])

    def slice_rows(self, lo: int, hi: int) -> "SamplePath":
        """Rows ``lo..hi`` inclusive as a new path (arrays are copies)."""
        return SamplePath(
            self.step, self.t[lo : hi + 1].copy(), self.v[lo : hi + 1].copy(),
            self.kind[lo : hi + 1].copy(),
        )

    @classmethod
    def from_grid(cls, values, step: float = 1.0, t0: float = 0.0) -> "SamplePath":
        """Path with breakpoints on a grid only (no jumps)."""
        v = np.asarray(values, dtype=float)
        t = t0 + step * np.arange(len(v), dtype=float)
        return cls(float(step), t, v, np.zeros(len(v), dtype=np.int8))

    @classmethod
    def from_grid_and_jumps(
        cls, values, step: float, jumps=(), t0: float = 0.0
    ) -> "SamplePath":
        """Grid values plus jumps given as ``(time, left, right)`` triples.

        Jump times must avoid grid points.
        """
        v = np.asarray(values, dtype=float)
        rows = [(t0 + k * step, float(x), GRID) for k, x in enumerate(v)]
        for tj, left, right in jumps:
            rows.append((float(tj), float(left), JUMP_LEFT))
            rows.append((float(tj), float(right), JUMP_RIGHT))
        rows.sort(key=lambda r: (r[0], r[2]))
        t = np.array([r[0] for r in rows])
        vv = np.array([r[1] for r in rows])
        kd = np.array([r[2] for r in rows], dtype=np.int8)
        return cls(float(step), t, vv, kd)


# ---------------------------------------------------------------------------
# compiled kernels


@nb.njit(cache=True)
def _draw_magnitude(rng, law, param):
    if law == 1:
        return rng.exponential(param)
    return param


@nb.njit(cache=True)
def _fill_chunk(
    rng, n_grid, step, q, gamma, rate, law, param,
    k0, t_prev, v, next_jump, out_t, out_v, out_k,
):
    """Advance the path by up to ``n_grid`` grid steps.

    Stops early when the output buffers cannot hold another grid step plus a
    jump. Returns ``(rows, steps_done, t_prev, v, next_jump)``.
    """
    cap = out_t.shape[0]
    pos = 0
    done = 0
    sq = math.sqrt(q)
    while done < n_grid:
        t_grid = (k0 + done + 1) * step
        while next_jump <= t_grid:
            if pos + 3 > cap:
                return pos, done, t_prev, v, next_jump
            dt = next_jump - t_prev
            if dt > 0.0:
                v += -gamma * dt + sq * math.sqrt(dt) * rng.standard_normal()
            out_t[pos] = next_jump
            out_v[pos] = v
            out_k[pos] = 1
            pos += 1
            v -= _draw_magnitude(rng, law, param)
            out_t[pos] = next_jump
            out_v[pos] = v
            out_k[pos] = 2
            pos += 1
            t_prev = next_jump
            next_jump += rng.exponential(1.0 / rate)
        if pos + 1 > cap:
            return pos, done, t_prev, v, next_jump
        dt = t_grid - t_prev
        v += -gamma * dt + sq * math.sqrt(dt) * rng.standard_normal()
        out_t[pos] = t_grid
        out_v[pos] = v
        out_k[pos] = 0
        pos += 1
        t_prev = t_grid
        done += 1
    return pos, done, t_prev, v, next_jump


@nb.njit(cache=True)
def _trapz_exp(t, v, lo, hi, sign, shift):
    """Trapezoid rule for exp(sign*(v - shift)) over rows lo..hi."""
    s = 0.0
    prev = math.exp(sign * (v[lo] - shift))
    for i in range(lo + 1, hi + 1):
        cur = math.exp(sign * (v[i] - shift))
        s += 0.5 * (t[i] - t[i - 1]) * (prev + cur)
        prev = cur
    return s


@nb.njit(cache=True)
def _running_min(v):
    out = np.empty_like(v)
    m = np.inf
    for i in range(v.shape[0]):
        if v[i] < m:
            m = v[i]
        out[i] = m
    return out


@nb.njit(cache=True)
def _first_at_or_below(v, start, level):
    for i in range(start, v.shape[0]):
        if v[i] <= level:
            return i
    return -1


@nb.njit(cache=True)
def _exp_functional_chunk(t, v, n, level, acc, prev_t, prev_e, started):
    """Accumulate the trapezoid of exp(v) until v <= level.

    Returns ``(hit, acc, prev_t, prev_e)``; ``hit`` is True when the level
    was crossed within the chunk.
    """
    i0 = 0
    if not started:
        prev_t = t[0]
        prev_e = math.exp(v[0])
        i0 = 1
        if v[0] <= level:
            return True, acc, prev_t, prev_e
    for i in range(i0, n):
        e = math.exp(v[i])
        acc += 0.5 * (t[i] - prev_t) * (prev_e + e)
        prev_t = t[i]
        prev_e = e
        if v[i] <= level:
            return True, acc, prev_t, prev_e
    return False, acc, prev_t, prev_e


# ---------------------------------------------------------------------------
# streaming simulation


class PathStream:
    """Incremental simulator of ``V`` started at ``(0, 0)``.

    Each call to :meth:`next_chunk` continues the same trajectory. The total
    number of grid steps is bounded by ``max_steps``.

    Parameters
    ----------
    spec : EnvironmentSpec
    step : float
    rng : numpy.random.Generator
    max_steps : int
        Budget of grid steps before :class:`HorizonCapExceeded` is raised.
    """

    def __init__(
        self,
        spec: EnvironmentSpec,
        step: float,
        rng: np.random.Generator,
        max_steps: int = DEFAULT_MAX_STEPS,
    ):
        if not step > 0:
            raise ValueError("step must be positive")
        self.spec = spec
        self.step = float(step)
        self.rng = rng
        self.max_steps = int(max_steps)
        self._q = float(spec.gaussian_coeff)
        self._gamma = float(spec.drift_coeff)
        self._rate, self._law, self._param = spec.jump_arrays()
        self.k = 0
        self.t_prev = 0.0
        self.v = 0.0
        self.next_jump = (
            rng.exponential(1.0 / self._rate) if self._rate > 0 else math.inf
        )

    @property
    def steps_used(self) -> int:
        return self.k

    def _capacity(self, n_grid: int) -> int:
        mean = self._rate * n_grid * self.step
        return int(n_grid + 2 * (mean + 6 * math.sqrt(mean) + 8)) + 4

    def next_chunk(self, n_grid: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Simulate ``n_grid`` further grid steps and return the new rows."""
        if self.k + n_grid > self.max_steps:
            n_grid = self.max_steps - self.k
            if n_grid <= 0:
                raise HorizonCapExceeded(
                    f"stopping event not reached within {self.max_steps} steps"
                )
        parts = []
        remaining = n_grid
        while remaining > 0:
            cap = self._capacity(remaining)
            ot = np.empty(cap)
            ov = np.empty(cap)
            ok = np.empty(cap, dtype=np.int8)
            pos, done, self.t_prev, self.v, self.next_jump = _fill_chunk(
                self.rng, remaining, self.step, self._q, self._gamma,
                self._rate, self._law, self._param,
                self.k, self.t_prev, self.v, self.next_jump, ot, ov, ok,
            )
            self.k += done
            remaining -= done
            parts.append((ot[:pos], ov[:pos], ok[:pos]))
        if len(parts) == 1:
            return parts[0]
        return tuple(np.concatenate([p[j] for p in parts]) for j in range(3))

    def chunk_sizes(self, first: int):
        """Doubling chunk sizes starting at ``first``."""
        n = max(int(first), 16)
        while True:
            yield n
            n = min(2 * n, 2**22)


class _RowBuffer:
    """Growable row storage with front trimming."""

    def __init__(self, capacity: int = 4096):
        self.t = np.empty(capacity)
        self.v = np.empty(capacity)
        self.k = np.empty(capacity, dtype=np.int8)
        self.n = 0
        self.offset = 0  # global index of row 0

    def append(self, t, v, k):
        m = len(t)
        if self.n + m > len(self.t):
            new = max(2 * len(self.t), self.n + m)
            for name in ("t", "v", "k"):
                old = getattr(self, name)
                arr = np.empty(new, dtype=old.dtype)
                arr[: self.n] = old[: self.n]
                setattr(self, name, arr)
        self.t[self.n : self.n + m] = t
        self.v[self.n : self.n + m] = v
        self.k[self.n : self.n + m] = k
        self.n += m

    def drop_before(self, local_index: int):
        """Discard rows before ``local_index``."""
        if local_index <= 0:
            return
        keep = self.n - local_index
        self.t[:keep] = self.t[local_index : self.n]
        self.v[:keep] = self.v[local_index : self.n]
        self.k[:keep] = self.k[local_index : self.n]
        self.n = keep
        self.offset += local_index

    def view(self):
        return self.t[: self.n], self.v[: self.n], self.k[: self.n]


def simulate(
    spec: EnvironmentSpec,
    horizon: float,
    step: float = DEFAULT_STEP,
    rng: Optional[np.random.Generator] = None,
) -> SamplePath:
    """Sample ``V`` on ``[0, horizon]``.

    Gaussian increments have variance ``Q*dt`` and mean ``-gamma*dt`` over
    every sub-interval between breakpoints; jump instants are exact
    exponential inter-arrivals inserted between grid points.

    Parameters
    ----------
    spec : EnvironmentSpec
    horizon : float
        Rounded up to a whole number of grid steps.
    step : float
    rng : numpy.random.Generator

    Returns
    -------
    SamplePath
    """
    if not 0 < step <= horizon:
        raise ValueError("need 0 < step <= horizon")
    rng = np.random.default_rng() if rng is None else rng
    n = int(math.ceil(horizon / step - 1e-9))
    stream = PathStream(spec, step, rng, max_steps=max(n, 1))
    t, v, k = stream.next_chunk(n)
    return SamplePath(
        float(step),
        np.concatenate(([0.0], t)),
        np.concatenate(([0.0], v)),
        np.concatenate(([GRID], k)).astype(np.int8),
    )


def running_infimum(path: SamplePath) -> SamplePath:
    """Pointwise running minimum over all rows (left and right values)."""
    return path.with_values(_running_min(path.v))


def reflected(path: SamplePath) -> SamplePath:
    """``V - inf V`` on the same rows; nonnegative."""
    return path.with_values(path.v - _running_min(path.v))


def first_passage_below(path: SamplePath, y: float) -> int:
    """Index of the first row with ``V <= -y``.

    A jump overshooting the level returns its right row.

    Raises
    ------
    NotReached
        If the level is not reached on the path.
    """
    i = _first_at_or_below(path.v, 0, -float(y))
    if i < 0:
        raise NotReached(f"level {-y} not reached before t={path.end}")
    return int(i)


def trapezoid_exp(path: SamplePath, lo: int = 0, hi: Optional[int] = None,
                  sign: float = 1.0, shift: float = 0.0) -> float:
    """Trapezoid integral of ``exp(sign*(V - shift))`` between rows ``lo`` and ``hi``."""
    hi = len(path) - 1 if hi is None else hi
    if hi <= lo:
        return 0.0
    return float(_trapz_exp(path.t, path.v, lo, hi, float(sign), float(shift)))


def truncated_exponential_functional(
    spec: EnvironmentSpec,
    step: float = DEFAULT_STEP,
    depth: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> float:
    """Trapezoid of ``exp(V)`` up to the first passage of ``V`` below ``-depth``.

    The neglected tail has mean at most ``exp(-depth)`` times the mean of the
    full functional. The default depth is ``12/kappa``.
    """
    rng = np.random.default_rng() if rng is None else rng
    depth = 12.0 / spec.kappa if depth is None else float(depth)
    level = -depth
    # expected passage time sets the first chunk
    first = int(min(2**16, max(256, 1.5 * depth / (-spec.mean_slope) / step)))
    stream = PathStream(spec, step, rng, max_steps=max_steps)
    acc, prev_t, prev_e = 0.0, 0.0, 1.0
    for n in stream.chunk_sizes(first):
        t, v, _ = stream.next_chunk(n)
        hit, acc, prev_t, prev_e = _exp_functional_chunk(
            t, v, len(t), level, acc, prev_t, prev_e, True
        )
        if hit:
            return float(acc)
    raise AssertionError("unreachable")


def time_reverse(path: SamplePath) -> SamplePath:
    """Reverse in time and re-center at the end point.

    On the same time axis ``[t0, T]`` the result is
    ``x -> V((T + t0 - x)-) - V(T)``, whose increments are the negated
    increments of ``V`` read backwards. Down-jumps become up-jumps of the
    same magnitude. Reversing twice gives ``V - V(t0)``, hence the original
    path whenever it starts at 0.
    """
    t_end = path.t[-1]
    t = (t_end - path.t[::-1]).copy()
    v = (path.v[::-1] - path.v[-1]).copy()
    k = path.kind[::-1].copy()
    k = np.where(k == JUMP_LEFT, JUMP_RIGHT, np.where(k == JUMP_RIGHT, JUMP_LEFT, k))
    t = t + path.t[0]
    return SamplePath(path.step, t, v, k.astype(np.int8))


def write_path_csv(path: SamplePath, dest) -> None:
    """Write rows as ``t,v,is_jump``; jumps occupy a left row then a right row."""
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "v", "is_jump"])
        for t, v, k in zip(path.t, path.v, path.kind):
            w.writerow([repr(float(t)), repr(float(v)), int(k != GRID)])


def read_path_csv(src, step: Optional[float] = None) -> SamplePath:
    """Inverse of :func:`write_path_csv`.

    Consecutive ``is_jump`` rows with equal times are a (left, right) pair.
    The grid step is inferred from the grid rows when not given.
    """
    ts, vs, js = [], [], []
    with open(src, newline="") as fh:
        for row in csv.DictReader(fh):
            ts.append(float(row["t"]))
            vs.append(float(row["v"]))
            js.append(int(row["is_jump"]))
    t = np.array(ts)
    v = np.array(vs)
    kind = np.zeros(len(t), dtype=np.int8)
    i = 0
    while i < len(t):
        if js[i]:
            if i + 1 >= len(t) or not js[i + 1] or t[i + 1] != t[i]:
                raise ValueError(f"unpaired jump row at line {i + 2}")
            kind[i], kind[i + 1] = JUMP_LEFT, JUMP_RIGHT
            i += 2
        else:
            i += 1
    if step is None:
        grid_t = t[kind == GRID]
        step = float(np.median(np.diff(grid_t))) if len(grid_t) > 1 else 1.0
    return SamplePath(float(step), t, v, kind)
