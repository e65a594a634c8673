"""
Valley decomposition of a spectrally negative potential.

Two notions of valleys are provided.

* ``h``-extrema of a fixed window, detected with the witness definition:
  ``x`` is an ``h``-minimum when some ``u < x < v`` satisfy
  ``V(u) >= low(x) + h``, ``V(v-) >= low(x) + h`` and ``V >= low(x)`` on
  ``[u, v]``, where ``low(x) = min(V(x), V(x-))``.
* *Standard* valleys, built recursively along a forward simulation with the
  stopping times ``L_sharp`` (a deep first passage), ``tau_h`` (first ascent of
  ``h`` of the reflected process), its bottom ``m`` and the exit time ``L``
  (first return below ``V(m) + h/2``).

The standard valleys are the ones whose bottoms carry the functionals
``A``, ``S`` and ``R``; the slopes around the bottom are samples of the process
conditioned to stay positive.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numba as nb
import numpy as np

from .levy_model import EnvironmentSpec
from .path_sim import (
    DEFAULT_STEP,
    JUMP_RIGHT,
    NotReached,
    PathStream,
    SamplePath,
    _RowBuffer,
    _trapz_exp,
    time_reverse,
)

__all__ = [
    "HExtremum",
    "StandardValley",
    "ValleyFunctionals",
    "find_h_extrema",
    "default_delta",
    "default_valley_budget",
    "iter_standard_valleys",
    "build_standard_valleys",
    "tau_pm",
    "first_ascend",
    "valley_functionals",
    "sample_V_up_killed",
    "sample_V_hat_up_killed",
    "sample_R",
    "valley_record",
    "write_valleys_jsonl",
]


# ---------------------------------------------------------------------------
# h-extrema


@dataclass(frozen=True)
class HExtremum:
    position: float
    value: float
    kind: str  # "min" or "max"


@nb.njit(cache=True)
def _nearest_left_ge(vals, qpos, qthr, strict):
    """For each query, the largest ``j < qpos`` with ``vals[j] >= thr``.

    ``qpos`` must be sorted ascending. Uses a monotone stack (strictly
    decreasing values) and a binary search per query; -1 when none.
    """
    n = vals.shape[0]
    nq = qpos.shape[0]
    out = np.full(nq, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    q = 0
    for i in range(n + 1):
        while q < nq and qpos[q] == i:
            thr = qthr[q]
            lo, hi = 0, top  # find count of stack entries satisfying the test
            while lo < hi:
                mid = (lo + hi) // 2
                x = vals[stack[mid]]
                ok = x > thr if strict else x >= thr
                if ok:
                    lo = mid + 1
                else:
                    hi = mid
            if lo > 0:
                out[q] = stack[lo - 1]
            q += 1
        if i == n:
            break
        while top > 0 and vals[stack[top - 1]] <= vals[i]:
            top -= 1
        stack[top] = i
        top += 1
    return out


def _row_groups(kind: np.ndarray):
    """First and last row of every distinct time."""
    n = len(kind)
    starts = np.flatnonzero(kind != JUMP_RIGHT)
    ends = np.empty_like(starts)
    ends[:-1] = starts[1:] - 1
    ends[-1] = n - 1
    return starts, ends


def _h_minima_mask(v: np.ndarray, kind: np.ndarray, h: float) -> np.ndarray:
    """Which distinct times are h-minima.

    Scanning rows outward from ``x``, a witness row (value ``>= low + h``)
    must come before any bad row (``<= low`` on the left, ``< low`` on the
    right). Rows are enough: the path is linear between them, and a point
    just before or after a jump approaches either of its values.
    """
    n = len(v)
    starts, ends = _row_groups(kind)
    lo = np.minimum(v[starts], v[ends])
    bad_l = _nearest_left_ge(-v, starts, -lo, False)
    wit_l = _nearest_left_ge(v, starts, lo + h, False)
    ok_l = (wit_l >= 0) & (wit_l > bad_l)
    # right side on reversed rows
    rv = v[::-1].copy()
    qpos = (n - 1 - ends)[::-1].copy()
    rlo = lo[::-1].copy()
    bad_r = _nearest_left_ge(-rv, qpos, -rlo, True)[::-1]
    wit_r = _nearest_left_ge(rv, qpos, rlo + h, False)[::-1]
    ok_r = (wit_r >= 0) & (wit_r > bad_r)
    # a jump of size >= h witnesses itself on the side of its larger value
    ok_l |= v[starts] >= lo + h
    ok_r |= v[ends] >= lo + h
    interior = (starts > 0) & (ends < n - 1)
    return ok_l & ok_r & interior


def find_h_extrema(path: SamplePath, h: float) -> List[HExtremum]:
    """All ``h``-minima and ``h``-maxima strictly inside the window.

    Parameters
    ----------
    path : SamplePath
    h : float
        Positive height.

    Returns
    -------
    list of HExtremum
        Ordered by position. At a jump the minimum uses ``min(left, right)``
        and the maximum ``max(left, right)``; a jump larger than ``h`` can be
        both, and then appears twice in the order the path visits them. Equal values are resolved in
        favour of the smaller position. Boundary points serve as witnesses
        only.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    v = np.asarray(path.v, dtype=float)
    kind = np.asarray(path.kind, dtype=np.int8)
    if len(v) < 3:
        return []
    starts, ends = _row_groups(kind)
    is_min = _h_minima_mask(v, kind, h)
    is_max = _h_minima_mask(-v, kind, h)
    out = []
    for j in np.flatnonzero(is_min | is_max):
        s, e = starts[j], ends[j]
        x = float(path.t[s])
        lo_ext = HExtremum(x, float(min(v[s], v[e])), "min")
        hi_ext = HExtremum(x, float(max(v[s], v[e])), "max")
        if is_min[j] and is_max[j]:
            # a jump larger than h is both; list them in the order visited
            out.extend((hi_ext, lo_ext) if v[s] > v[e] else (lo_ext, hi_ext))
        elif is_min[j]:
            out.append(lo_ext)
        else:
            out.append(hi_ext)
    return out


# ---------------------------------------------------------------------------
# standard valleys


def default_delta(kappa: float) -> float:
    """0.25, clamped for ``kappa < 1`` so that ``kappa*(1 + 3*delta) < 1``."""
    if kappa >= 1:
        return 0.25
    return 0.9 * min(0.25, (1.0 / kappa - 1.0) / 3.0)


def default_valley_budget(spec: EnvironmentSpec, h: float, delta: float, step: float) -> int:
    """Generous per-valley step budget derived from the natural time scales.

    The descent to ``L_sharp`` takes about ``exp((1-delta)*kappa*h)/|slope|``
    and the first ascent of ``h`` about ``exp(kappa*h)`` times a constant of
    order ``1/kappa^2``; the budget is 200 times their sum.
    """
    k = spec.kappa
    descent = math.exp((1 - delta) * k * h) / -spec.mean_slope
    ascent = 2.0 * math.exp(k * h) / (k * k) / max(spec.gaussian_coeff, 1e-3)
    return int(max(2**20, 200 * (descent + ascent + h) / step))


@dataclass(frozen=True, eq=False)
class StandardValley:
    """One standard valley.

    Attributes
    ----------
    index : int
        Valley number, starting at 1.
    L_prev, L_sharp, m, tau_h, L : float
        Landmark positions.
    V_m : float
        Value of the potential at the bottom.
    segment : SamplePath
        Re-centered path ``V - V(m)``. It covers ``[L_prev, L]`` unless the
        valley was built in ``bottom`` mode, where only a suffix containing
        ``[tau^-(h), L]`` is retained.
    i_m, i_tau, i_L : int
        Row indices of ``m``, ``tau_h`` and ``L`` inside ``segment``.
    h, delta : float
    """

    index: int
    L_prev: float
    L_sharp: float
    m: float
    tau_h: float
    L: float
    V_m: float
    segment: SamplePath
    i_m: int
    i_tau: int
    i_L: int
    h: float
    delta: float

    @property
    def complete(self) -> bool:
        """True when the segment starts at ``L_prev``."""
        return self.segment.t[0] == self.L_prev


@dataclass(frozen=True)
class ValleyFunctionals:
    A_of_L: float
    S: float
    R: float


@nb.njit(cache=True)
def _scan_rise(v, start, runmin, imin, h):
    """Scan for the first row where ``v - running min >= h``.

    Returns ``(hit, runmin, imin)``; ``hit`` is -1 when the chunk ends first.
    """
    for j in range(start, v.shape[0]):
        x = v[j]
        if x < runmin:
            runmin = x
            imin = j
        elif x - runmin >= h:
            return j, runmin, imin
    return -1, runmin, imin


@nb.njit(cache=True)
def _scan_le(v, start, level):
    for j in range(start, v.shape[0]):
        if v[j] <= level:
            return j
    return -1


@nb.njit(cache=True)
def _last_high(v, start, stop, h):
    """Last row ``y`` in ``[start, stop)`` with ``v[y] >= min(v[start:stop]) + h``."""
    m = np.inf
    for j in range(start, stop):
        if v[j] < m:
            m = v[j]
    thr = m + h
    for j in range(stop - 1, start - 1, -1):
        if v[j] >= thr:
            return j
    return -1


class _Source:
    """Row supplier backed by a simulation stream or by a fixed path."""

    def __init__(self, stream: Optional[PathStream] = None, path: Optional[SamplePath] = None,
                 first_chunk: int = 4096):
        self.stream = stream
        self.buf = _RowBuffer(max(first_chunk, 1024))
        self._chunk = first_chunk
        if path is not None:
            self.buf.append(path.t, path.v, path.kind)
            self.step = path.step
        else:
            self.buf.append(np.zeros(1), np.zeros(1), np.zeros(1, dtype=np.int8))
            self.step = stream.step

    def extend(self) -> None:
        if self.stream is None:
            raise NotReached("fixed path exhausted before the stopping event")
        t, v, k = self.stream.next_chunk(self._chunk)
        self.buf.append(t, v, k)
        self._chunk = min(2 * self._chunk, 2**22)

    def reset_chunk(self, n: int) -> None:
        self._chunk = max(int(n), 256)


_COMPACT_ROWS = 1 << 22


def _valley_iterator(source: _Source, kappa: float, h: float, delta: float,
                     mode: str, budget: Optional[int]) -> Iterator[StandardValley]:
    buf = source.buf
    drop = math.exp((1.0 - delta) * kappa * h)
    start = 0  # local row of L_prev (or of the trimmed front)
    lprev_time = float(buf.t[0])
    index = 0

    def compact(keep: int) -> int:
        # rows before `keep` can no longer influence the current valley
        keep = max(keep, start)
        if mode == "bottom" and keep > 0:
            buf.drop_before(keep)
            return keep
        return 0

    while True:
        index += 1
        if source.stream is not None and budget is not None:
            source.stream.max_steps = source.stream.steps_used + budget
        level = buf.v[start] - drop
        # first passage to L_sharp
        pos = start
        while True:
            j = _scan_le(buf.v[: buf.n], pos, level)
            if j >= 0:
                i_sharp = j
                break
            pos = buf.n
            if buf.n - start > _COMPACT_ROWS:
                shift = compact(_last_high(buf.v, start, buf.n, h))
                pos -= shift
                start = max(start - shift, 0)
            source.extend()
        t_sharp = float(buf.t[i_sharp])
        # first ascent of h after L_sharp
        runmin, imin = buf.v[i_sharp], i_sharp
        pos = i_sharp + 1
        while True:
            j, runmin, imin = _scan_rise(buf.v[: buf.n], pos, runmin, imin, h)
            if j >= 0:
                i_tau = j
                break
            pos = buf.n
            if buf.n - start > _COMPACT_ROWS:
                shift = compact(_last_high(buf.v, start, buf.n, h))
                pos -= shift
                start = max(start - shift, 0)
                imin -= shift
            source.extend()
        # exit below V(m) + h/2
        pos = i_tau + 1
        while True:
            j = _scan_le(buf.v[: buf.n], pos, runmin + 0.5 * h)
            if j >= 0:
                i_L = j
                break
            pos = buf.n
            source.extend()
        seg_lo = start
        if mode == "bottom":
            # tau^-(h) is the last row left of m at least h above the bottom
            y = _last_high(buf.v, start, imin + 1, h)
            if y > start:
                seg_lo = y
        t = buf.t
        seg = SamplePath(
            source.step,
            t[seg_lo : i_L + 1].copy(),
            buf.v[seg_lo : i_L + 1] - runmin,
            buf.k[seg_lo : i_L + 1].copy(),
        )
        yield StandardValley(
            index=index,
            L_prev=lprev_time,
            L_sharp=t_sharp,
            m=float(t[imin]),
            tau_h=float(t[i_tau]),
            L=float(t[i_L]),
            V_m=float(runmin),
            segment=seg,
            i_m=int(imin - seg_lo),
            i_tau=int(i_tau - seg_lo),
            i_L=int(i_L - seg_lo),
            h=float(h),
            delta=float(delta),
        )
        # the next valley starts at L
        lprev_time = float(t[i_L])
        buf.drop_before(i_L)
        start = 0


def _check_valley_args(spec: EnvironmentSpec, h: float, delta: float) -> None:
    if not h > 0:
        raise ValueError("h must be positive")
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    if math.exp((1 - delta) * spec.kappa * h) < h:
        raise ValueError("need exp((1-delta)*kappa*h) >= h")


def iter_standard_valleys(
    spec: EnvironmentSpec,
    h: float,
    delta: Optional[float] = None,
    step: float = DEFAULT_STEP,
    rng: Optional[np.random.Generator] = None,
    mode: str = "full",
    max_steps: Optional[int] = None,
    path: Optional[SamplePath] = None,
) -> Iterator[StandardValley]:
    """Lazily generate successive standard valleys.

    Parameters
    ----------
    spec : EnvironmentSpec
    h : float
    delta : float, optional
        Defaults to :func:`default_delta`.
    step : float
    rng : numpy.random.Generator
    mode : {"full", "bottom"}
        ``"full"`` keeps ``[L_prev, L]`` in every segment; ``"bottom"`` keeps
        only what the functionals need, which bounds memory for large ``h``.
    max_steps : int, optional
        Per-valley step budget; defaults to :func:`default_valley_budget`.
    path : SamplePath, optional
        Decompose this fixed path instead of simulating. Iteration stops
        when the path is exhausted.
    """
    delta = default_delta(spec.kappa) if delta is None else float(delta)
    _check_valley_args(spec, h, delta)
    if mode not in ("full", "bottom"):
        raise ValueError("mode must be 'full' or 'bottom'")
    if path is not None:
        if path.v[0] != 0.0:
            path = path.with_values(path.v - path.v[0])
        source = _Source(path=path)
        it = _valley_iterator(source, spec.kappa, h, delta, mode, None)
        while True:
            try:
                yield next(it)
            except NotReached:
                return
    rng = np.random.default_rng() if rng is None else rng
    if max_steps is None:
        max_steps = default_valley_budget(spec, h, delta, step)
    descent = math.exp((1 - delta) * spec.kappa * h) / -spec.mean_slope
    first = int(min(2**20, max(1024, descent / step)))
    stream = PathStream(spec, step, rng, max_steps=max_steps)
    source = _Source(stream=stream, first_chunk=first)
    yield from _valley_iterator(source, spec.kappa, h, delta, mode, max_steps)


def build_standard_valleys(
    spec: EnvironmentSpec,
    h: float,
    delta: Optional[float] = None,
    count: int = 1,
    step: float = DEFAULT_STEP,
    rng: Optional[np.random.Generator] = None,
    mode: str = "full",
    max_steps: Optional[int] = None,
) -> List[StandardValley]:
    """The first ``count`` standard valleys of a fresh trajectory.

    Raises
    ------
    HorizonCapExceeded
        When a valley needs more than ``max_steps`` grid steps.
    """
    it = iter_standard_valleys(spec, h, delta, step, rng, mode, max_steps)
    return [next(it) for _ in range(int(count))]


def _tau_minus_row(seg: SamplePath, i_m: int, a: float) -> int:
    if a <= 0:
        return i_m
    idx = np.flatnonzero(seg.v[:i_m] >= a)
    if len(idx) == 0:
        raise NotReached(f"segment does not reach level {a} left of the bottom")
    return int(idx[-1])


def _tau_plus_row(seg: SamplePath, i_m: int, a: float) -> int:
    if a <= 0:
        return i_m
    idx = np.flatnonzero(seg.v[i_m + 1 :] >= a)
    if len(idx) == 0:
        raise NotReached(f"segment does not reach level {a} right of the bottom")
    return int(i_m + 1 + idx[0])


def tau_pm(valley: StandardValley, a: float, sign: int) -> float:
    """Level passages around the bottom.

    ``sign = -1`` gives the last position left of ``m`` where the re-centered
    path is at least ``a``; ``sign = +1`` the first position right of ``m``
    where it reaches ``a``. Passages are located at breakpoints.
    """
    if not 0 <= a <= valley.h:
        raise ValueError("need 0 <= a <= h")
    seg = valley.segment
    if sign < 0:
        return float(seg.t[_tau_minus_row(seg, valley.i_m, a)])
    return float(seg.t[_tau_plus_row(seg, valley.i_m, a)])


def valley_functionals(valley: StandardValley, h: Optional[float] = None) -> ValleyFunctionals:
    """Exponential functionals of the valley bottom.

    ``A_of_L`` integrates ``exp(V~)`` on ``[m, L]``, ``S`` integrates it on
    ``[tau^+(h/2), L]`` and ``R`` integrates ``exp(-V~)`` on
    ``[tau^-(h/2), tau^+(h/2)]``. All use the trapezoid rule on breakpoints.
    """
    h = valley.h if h is None else float(h)
    seg = valley.segment
    i_lo = _tau_minus_row(seg, valley.i_m, 0.5 * h)
    i_hi = _tau_plus_row(seg, valley.i_m, 0.5 * h)
    t, v = seg.t, seg.v
    A = _trapz_exp(t, v, valley.i_m, valley.i_L, 1.0, 0.0)
    S = _trapz_exp(t, v, i_hi, valley.i_L, 1.0, 0.0)
    R = _trapz_exp(t, v, i_lo, i_hi, -1.0, 0.0)
    return ValleyFunctionals(float(A), float(S), float(R))


# ---------------------------------------------------------------------------
# first ascent


@nb.njit(cache=True)
def _scan_rise_times(t, v, runmin, tmin, h):
    for j in range(v.shape[0]):
        x = v[j]
        if x < runmin:
            runmin = x
            tmin = t[j]
        elif x - runmin >= h:
            return t[j], runmin, tmin
    return -1.0, runmin, tmin


def first_ascend(
    spec: EnvironmentSpec,
    h: float,
    step: float = DEFAULT_STEP,
    rng: Optional[np.random.Generator] = None,
    max_steps: Optional[int] = None,
    path: Optional[SamplePath] = None,
) -> Tuple[float, float]:
    """First time ``tau*`` the reflected process reaches ``h`` and the bottom ``m*``.

    Returns
    -------
    (m_star, tau_star) : tuple of float

    Raises
    ------
    HorizonCapExceeded
        If the ascent needs more than ``max_steps`` grid steps.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if path is not None:
        tau, _, tmin = _scan_rise_times(path.t, path.v, np.inf, 0.0, float(h))
        if tau < 0:
            raise NotReached("the path never rises by h above its running minimum")
        return float(tmin), float(tau)
    rng = np.random.default_rng() if rng is None else rng
    if max_steps is None:
        max_steps = default_valley_budget(spec, h, 0.49, step)
    stream = PathStream(spec, step, rng, max_steps=max_steps)
    runmin, tmin = 0.0, 0.0
    first = int(min(2**18, max(1024, math.exp(spec.kappa * h) / step / 8)))
    for n in stream.chunk_sizes(first):
        t, v, _ = stream.next_chunk(n)
        tau, runmin, tmin = _scan_rise_times(t, v, runmin, tmin, float(h))
        if tau >= 0:
            return float(tmin), float(tau)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# conditioned slopes and R


def sample_V_up_killed(
    spec: EnvironmentSpec,
    h: float,
    step: float = DEFAULT_STEP,
    rng: Optional[np.random.Generator] = None,
    delta: Optional[float] = None,
    max_steps: Optional[int] = None,
) -> SamplePath:
    """Ascending slope ``[m, tau_h]`` of the first standard valley, re-centered.

    Time starts at 0 at the bottom. The last row is the first breakpoint at
    or above ``h``.
    """
    val = build_standard_valleys(spec, h, delta, 1, step, rng, "bottom", max_steps)[0]
    seg = val.segment.slice_rows(val.i_m, val.i_tau)
    return SamplePath(seg.step, seg.t - seg.t[0], seg.v, seg.kind)


def sample_V_hat_up_killed(
    spec: EnvironmentSpec,
    h: float,
    step: float = DEFAULT_STEP,
    rng: Optional[np.random.Generator] = None,
    delta: Optional[float] = None,
    max_steps: Optional[int] = None,
) -> Tuple[SamplePath, float]:
    """Reversed descending slope of the second standard valley, with its weight.

    The slope ``[tau^-(h), m]`` is reversed in time from the bottom so that it
    rises from 0 to its end value ``>= h``. The returned weight
    ``1 - exp(-kappa * end)`` is proportional to the density converting the
    slope law into the law of the dual process conditioned to stay positive,
    killed above ``h``; normalise weights over a sample.
    """
    vals = build_standard_valleys(spec, h, delta, 2, step, rng, "bottom", max_steps)
    val = vals[1]
    seg = val.segment
    lo = _tau_minus_row(seg, val.i_m, h)
    rev = time_reverse(seg.slice_rows(lo, val.i_m))
    rev = SamplePath(rev.step, rev.t - rev.t[0], rev.v, rev.kind)
    end = float(rev.v[-1])
    return rev, float(-math.expm1(-spec.kappa * end))


def sample_R(
    spec: EnvironmentSpec,
    h: float,
    step: float = DEFAULT_STEP,
    rng: Optional[np.random.Generator] = None,
    delta: Optional[float] = None,
    max_steps: Optional[int] = None,
) -> float:
    """``J(h)``: the ``R`` functional of the first standard valley."""
    val = build_standard_valleys(spec, h, delta, 1, step, rng, "bottom", max_steps)[0]
    return valley_functionals(val).R


# ---------------------------------------------------------------------------
# dumps


def valley_record(valley: StandardValley, functionals: Optional[ValleyFunctionals] = None) -> dict:
    f = valley_functionals(valley) if functionals is None else functionals
    return {
        "i": valley.index,
        "L_prev": valley.L_prev,
        "L_sharp": valley.L_sharp,
        "m": valley.m,
        "tau_h": valley.tau_h,
        "L": valley.L,
        "V_m": valley.V_m,
        "A": f.A_of_L,
        "S": f.S,
        "R": f.R,
    }


def write_valleys_jsonl(valleys: Sequence[StandardValley], dest) -> None:
    """One JSON object per line with landmarks and functionals."""
    with open(dest, "w") as fh:
        for val in valleys:
            fh.write(json.dumps(valley_record(val)) + "\n")
