"""
Limit objects: Frechet laws, tail constants, the bivariate stable subordinator
and the renewal statistic built from valley triples.

Constants
---------
``K = E[I^(kappa-1)]`` with ``I = int_0^inf exp(V)``, the tail constant
``C = K / Psi'(kappa)`` of ``P(I > x) ~ C x^-kappa`` and
``C' = 2^kappa Gamma(kappa+1) C``, which scales the Levy measure
``C' kappa x^(-kappa-1) dx`` of the first coordinate ``Y1`` of the
subordinator. Each jump of ``Y1`` is paired with an independent copy of
``R`` to give the jump of ``Y2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gamma as gamma_fn

from .levy_model import EnvironmentSpec, KappaNotAboveOne, m_constant
from .path_sim import DEFAULT_STEP, truncated_exponential_functional

__all__ = [
    "LimitConstants",
    "InvalidKappa",
    "HorizonTooShort",
    "InsufficientTriples",
    "frechet_cdf",
    "sample_frechet",
    "estimate_K",
    "exact_K_brownian",
    "limit_constants",
    "theorem11_params",
    "hitting_time_frechet_params",
    "SubordinatorPath",
    "RBank",
    "default_eps",
    "truncation_mass",
    "sample_bivariate_subordinator",
    "compute_I1_I2",
    "sample_I",
    "renewal_statistic",
    "partial_sum_process",
    "tail_fit",
    "phi_default",
    "scenario_scales",
]


class InvalidKappa(ValueError):
    """The subordinator needs ``0 < kappa < 1``."""


class HorizonTooShort(RuntimeError):
    """``Y2`` did not pass 1 within the simulated horizon."""


class InsufficientTriples(ValueError):
    """The supplied triples do not reach the required total."""


# ---------------------------------------------------------------------------
# Frechet law


def frechet_cdf(alpha: float, s: float, t):
    """``exp(-(s/t)**alpha)`` for ``t > 0`` and 0 otherwise."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        out = np.where(t > 0, np.exp(-np.power(s / np.where(t > 0, t, 1.0), alpha)), 0.0)
    return out if out.ndim else float(out)


def sample_frechet(alpha: float, s: float, rng: Optional[np.random.Generator] = None,
                   size=None, u=None):
    """Inverse transform ``s * (-log U)**(-1/alpha)``.

    ``u`` may be given to evaluate the transform at fixed uniforms.
    """
    if u is None:
        rng = np.random.default_rng() if rng is None else rng
        u = rng.random(size)
    u = np.asarray(u, dtype=float)
    out = s * np.power(-np.log(u), -1.0 / alpha)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class LimitConstants:
    """Constants of the limit theorems.

    ``m`` is None when ``kappa <= 1``; ``K_se`` is the Monte Carlo standard
    error of ``K`` (0 for closed forms).
    """

    kappa: float
    K: float
    C: float
    C_prime: float
    m: Optional[float] = None
    K_se: float = 0.0

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "K_hat": self.K,
            "K_se": self.K_se,
            "m": self.m,
            "C_hat": self.C,
            "C_prime_hat": self.C_prime,
        }


def limit_constants(spec: EnvironmentSpec, K: float, K_se: float = 0.0,
                    C: Optional[float] = None) -> LimitConstants:
    """Assemble constants from ``K`` (or from a directly estimated ``C``)."""
    kappa = spec.kappa
    if C is None:
        C = K / spec.psi_prime_at_kappa
    c_prime = 2.0**kappa * float(gamma_fn(kappa + 1.0)) * C
    m = m_constant(spec) if kappa > 1 else None
    return LimitConstants(kappa, float(K), float(C), float(c_prime), m, float(K_se))


def exact_K_brownian(spec: EnvironmentSpec) -> float:
    """Closed form of ``K`` for a drifted Brownian motion.

    With ``V = sqrt(Q) B - gamma t`` one has ``I = 2/(Q G)``, ``G`` gamma
    distributed with shape ``kappa = 2 gamma/Q``, hence
    ``K = (2/Q)^(kappa-1) / Gamma(kappa)``.
    """
    if spec.has_jumps:
        raise ValueError("closed form only for Brownian environments")
    k = spec.kappa
    return (2.0 / spec.gaussian_coeff) ** (k - 1.0) / float(gamma_fn(k))


def estimate_K(spec: EnvironmentSpec, n: int, rng: Optional[np.random.Generator] = None,
               step: float = DEFAULT_STEP, depth: Optional[float] = None,
               samples_out: Optional[list] = None) -> Tuple[float, float]:
    """Monte Carlo ``K`` from ``n`` truncated exponential functionals.

    Returns
    -------
    (K_hat, standard_error)
    """
    rng = np.random.default_rng() if rng is None else rng
    I = np.array([truncated_exponential_functional(spec, step, depth, rng) for _ in range(n)])
    if samples_out is not None:
        samples_out.extend(I.tolist())
    x = I ** (spec.kappa - 1.0)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf


def theorem11_params(spec: EnvironmentSpec, K_hat: float) -> Tuple[float, float]:
    """Frechet parameters of the supremum of local time at a fixed time ``t``.

    ``(kappa, 2*(Gamma(kappa)*kappa**2*K/m)**(1/kappa))``; the normalization
    is ``t**(1/kappa)``.
    """
    kappa = spec.kappa
    if not kappa > 1:
        raise KappaNotAboveOne("needs kappa > 1")
    m = m_constant(spec)
    s = 2.0 * (float(gamma_fn(kappa)) * kappa**2 * K_hat / m) ** (1.0 / kappa)
    return kappa, s


def hitting_time_frechet_params(spec: EnvironmentSpec, K_hat: float) -> Tuple[float, float]:
    """Frechet parameters of ``sup Z`` on ``[0, r]`` normalized by ``r**(1/kappa)``.

    This is the law at the hitting time of ``r``, i.e. at ``t ~ m r``:
    ``(kappa, 2*(Gamma(kappa)*kappa**2*K)**(1/kappa))``.
    """
    kappa, s = theorem11_params(spec, K_hat)
    return kappa, s * m_constant(spec) ** (1.0 / kappa)


# ---------------------------------------------------------------------------
# bivariate subordinator


@dataclass(frozen=True, eq=False)
class SubordinatorPath:
    """Jumps of ``(Y1, Y2)`` above the truncation level.

    ``times``, ``dy1`` and ``dy2`` are parallel arrays; ``dy2 = dy1 * r``.
    """

    times: np.ndarray
    dy1: np.ndarray
    dy2: np.ndarray
    truncation_eps: float
    horizon: float

    @property
    def jumps(self):
        return list(zip(self.times.tolist(), self.dy1.tolist(), self.dy2.tolist()))

    @classmethod
    def from_jumps(cls, jumps, truncation_eps: float = 0.0, horizon: float = math.inf):
        arr = np.asarray(jumps, dtype=float).reshape(-1, 3)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(),
                   float(truncation_eps), float(horizon))


class RBank:
    """Resampling bank of ``R`` values, usable as an ``r_sampler``."""

    def __init__(self, values: Sequence[float]):
        self.values = np.asarray(values, dtype=float)
        if len(self.values) == 0 or np.any(self.values <= 0):
            raise ValueError("R bank must be nonempty and positive")

    def __call__(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.values[rng.integers(0, len(self.values), size)]

    def mean_power(self, p: float) -> float:
        return float(np.mean(self.values**p))


def truncation_mass(constants: LimitConstants, eps: float, horizon: float) -> float:
    """Mean ``Y1`` mass of the neglected jumps below ``eps`` on ``[0, horizon]``."""
    k = constants.kappa
    return constants.C_prime * k / (1.0 - k) * eps ** (1.0 - k) * horizon


def default_eps(constants: LimitConstants, horizon: float, budget: float = 1e-3) -> float:
    """Largest ``eps`` whose neglected mass is ``budget`` (0.1% of the level 1)."""
    k = constants.kappa
    return (budget * (1.0 - k) / (constants.C_prime * k * horizon)) ** (1.0 / (1.0 - k))


def sample_bivariate_subordinator(
    constants: LimitConstants,
    r_sampler: Callable[[np.random.Generator, int], np.ndarray],
    horizon: float,
    eps: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    t0: float = 0.0,
) -> SubordinatorPath:
    """Jumps of ``(Y1, Y2)`` of size at least ``eps`` on ``(t0, t0 + horizon]``.

    Jumps of ``Y1`` above ``eps`` arrive at rate ``C' eps^-kappa`` with
    Pareto sizes ``eps * U^(-1/kappa)``; ``dy2 = dy1 * R`` with ``R`` drawn
    from ``r_sampler(rng, n)``.
    """
    k = constants.kappa
    if not 0 < k < 1:
        raise InvalidKappa(f"needs 0 < kappa < 1, got {k}")
    rng = np.random.default_rng() if rng is None else rng
    eps = default_eps(constants, horizon) if eps is None else float(eps)
    rate = constants.C_prime * eps ** (-k)
    n = int(rng.poisson(rate * horizon))
    times = np.sort(t0 + horizon * rng.random(n))
    dy1 = eps * np.power(rng.random(n), -1.0 / k)
    r = np.asarray(r_sampler(rng, n), dtype=float)
    return SubordinatorPath(times, dy1, dy1 * r, eps, float(horizon))


def compute_I1_I2(path: SubordinatorPath) -> Tuple[float, float, float]:
    """Functionals at the passage of level 1 by ``Y2``.

    ``I1`` is the largest ``Y1`` jump strictly before the passage,
    ``I2 = (1 - Y2(before)) * dy1/dy2`` of the passage jump, ``I = max``.

    Raises
    ------
    HorizonTooShort
        If ``Y2`` stays at or below 1.
    """
    cum = np.cumsum(path.dy2)
    idx = int(np.searchsorted(cum, 1.0, side="right"))
    if idx >= len(cum):
        raise HorizonTooShort("Y2 does not pass 1 within the horizon")
    prior = float(cum[idx - 1]) if idx > 0 else 0.0
    I1 = float(path.dy1[:idx].max()) if idx > 0 else 0.0
    I2 = (1.0 - prior) * float(path.dy1[idx] / path.dy2[idx])
    return I1, I2, max(I1, I2)


def sample_I(
    constants: LimitConstants,
    r_sampler: Callable[[np.random.Generator, int], np.ndarray],
    rng: Optional[np.random.Generator] = None,
    mean_r_kappa: Optional[float] = None,
    horizon: Optional[float] = None,
    eps: Optional[float] = None,
) -> Tuple[float, float, float]:
    """``(I1, I2, I)`` from one subordinator path.

    The horizon defaults to ``10 / (C' Gamma(1-kappa) E[R^kappa])``, by which
    time ``Y2`` has passed 1 except with negligible probability. If it has
    not, the same path is continued on the next window (never truncated).
    ``eps`` defaults to :func:`default_eps` for that horizon.
    """
    rng = np.random.default_rng() if rng is None else rng
    k = constants.kappa
    if horizon is None:
        if mean_r_kappa is None:
            mean_r_kappa = float(np.mean(r_sampler(rng, 4096) ** k))
        c2 = constants.C_prime * float(gamma_fn(1.0 - k)) * mean_r_kappa
        horizon = 10.0 / c2
    eps = default_eps(constants, horizon) if eps is None else float(eps)
    path = sample_bivariate_subordinator(constants, r_sampler, horizon, eps, rng)
    parts = [path]
    while True:
        try:
            return compute_I1_I2(path)
        except HorizonTooShort:
            nxt = sample_bivariate_subordinator(
                constants, r_sampler, horizon, eps, rng, t0=path.horizon
            )
            parts.append(nxt)
            path = SubordinatorPath(
                np.concatenate([p.times for p in parts]),
                np.concatenate([p.dy1 for p in parts]),
                np.concatenate([p.dy2 for p in parts]),
                eps, path.horizon + horizon,
            )


# ---------------------------------------------------------------------------
# renewal statistic


def _triples_array(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=float).reshape(-1, 3)
    return arr


def renewal_statistic(triples, t: float, eta: float = 0.0):
    """Largest normalized peak before the crossing valley versus its share.

    Parameters
    ----------
    triples : sequence of (e, S, R)
    t : float
    eta : float in [0, 1)

    Returns
    -------
    (max_before, last_term, statistic, N)
        ``N`` is the 1-based index of the first triple whose cumulative
        ``e*S*R`` exceeds ``t*(1-eta)``.
    """
    if not 0 <= eta < 1:
        raise ValueError("eta must lie in [0, 1)")
    arr = _triples_array(triples)
    e, S, R = arr[:, 0], arr[:, 1], arr[:, 2]
    peak = e * S
    dur = peak * R
    cum = np.cumsum(dur)
    idx = int(np.searchsorted(cum, t * (1.0 - eta), side="right"))
    if idx >= len(cum):
        raise InsufficientTriples("cumulative e*S*R does not exceed t*(1-eta)")
    max_before = float(peak[:idx].max() / t) if idx > 0 else 0.0
    prior = float(cum[idx - 1]) if idx > 0 else 0.0
    last_term = (1.0 - prior / t) / float(R[idx])
    return max_before, last_term, max(max_before, last_term), idx + 1


def partial_sum_process(triples, t: float, phi_of_t: float, s_grid, kappa: float):
    """``(1/t) * sum_{j <= floor(s*exp(kappa*phi))} (e S, e S R)`` on ``s_grid``.

    Returns two arrays, the ``Y1`` and ``Y2`` coordinates.
    """
    arr = _triples_array(triples)
    s_grid = np.asarray(s_grid, dtype=float)
    counts = np.floor(s_grid * math.exp(kappa * phi_of_t)).astype(np.int64)
    if counts.size and counts.max() > len(arr):
        raise InsufficientTriples(f"need {counts.max()} triples, got {len(arr)}")
    peak = arr[:, 0] * arr[:, 1]
    c1 = np.concatenate(([0.0], np.cumsum(peak))) / t
    c2 = np.concatenate(([0.0], np.cumsum(peak * arr[:, 2]))) / t
    return c1[counts], c2[counts]


# ---------------------------------------------------------------------------
# tails and scales


def tail_fit(samples, kappa: float, n_points: int = 40, lo_q: float = 0.90,
             hi_q: float = 0.999):
    """Estimate ``C`` in ``P(X > x) ~ C x^-kappa``.

    Averages ``x^kappa * Sbar(x)`` over a log-spaced grid between the
    ``lo_q`` and ``hi_q`` empirical quantiles. The diagnostics report the
    least-squares slope of ``log Sbar`` against ``log x`` on the same grid,
    which should be close to ``-kappa``.

    Returns
    -------
    (C_hat, diagnostics : dict)
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 10_000:
        raise ValueError("tail_fit needs at least 1e4 samples")
    a, b = np.quantile(x, [lo_q, hi_q])
    grid = np.exp(np.linspace(math.log(a), math.log(b), n_points))
    surv = 1.0 - np.searchsorted(x, grid, side="right") / n
    vals = grid**kappa * surv
    C_hat = float(vals.mean())
    slope = float(np.polyfit(np.log(grid), np.log(surv), 1)[0])
    # Hill estimator on the same upper tail for comparison
    k_top = int(round((1.0 - lo_q) * n))
    top = x[n - k_top :]
    hill = float(1.0 / np.mean(np.log(top / x[n - k_top - 1])))
    diag = {
        "window": [float(a), float(b)],
        "n_points": n_points,
        "window_slope": slope,
        "hill_index": hill,
        "kappa": float(kappa),
        "slope_rel_error": abs(-slope - kappa) / kappa,
        "C_spread": float(vals.std() / max(C_hat, 1e-300)),
    }
    return C_hat, diag


def phi_default(t: float) -> float:
    """``sqrt(log t * log log t)``."""
    lt = math.log(t)
    return math.sqrt(lt * math.log(lt))


def scenario_scales(t: float, spec: EnvironmentSpec, delta: float,
                    phi: Callable[[float], float] = phi_default) -> Tuple[float, int]:
    """``h_t = log t - phi(t)`` and ``n_t = floor(exp(kappa (1+delta) phi(t)))``."""
    if not t > math.e**math.e:
        raise ValueError("needs t > e^e")
    p = phi(t)
    return math.log(t) - p, int(math.floor(math.exp(spec.kappa * (1.0 + delta) * p)))
