"""
Environment laws for spectrally negative Levy potentials.

An environment is the law of a Levy process ``V`` without positive jumps,
described by its Laplace exponent

    Psi(lam) = Q lam^2 / 2 - gamma lam + J(lam),    E[exp(lam V(t))] = exp(t Psi(lam)),

with ``J`` the closed-form contribution of a compound Poisson component of
negative jumps. Two magnitude families are supported: exponential and fixed.
Jumps are not compensated; ``gamma`` is the effective continuous drift, so
the continuous part of ``V`` drifts at rate ``-gamma``.

The key derived quantity is ``kappa``, the positive root of ``Psi``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

__all__ = [
    "ExponentialMagnitude",
    "FixedMagnitude",
    "CompoundPoissonNegative",
    "EnvironmentSpec",
    "NoRoot",
    "KappaNotAboveOne",
    "InvalidEnvironment",
    "laplace_exponent",
    "psi_derivative",
    "find_kappa",
    "m_constant",
    "preset",
    "spec_from_json",
    "spec_to_json",
    "load_environment",
]

DEFAULT_TOL = 1e-10
DEFAULT_LAMBDA_MAX = 64.0


class NoRoot(ValueError):
    """Raised when ``Psi`` shows no sign change below ``lambda_max``."""


class KappaNotAboveOne(ValueError):
    """Raised by quantities that only exist when ``kappa > 1``."""


class InvalidEnvironment(ValueError):
    """Raised when an environment violates the model hypotheses."""


@dataclass(frozen=True)
class ExponentialMagnitude:
    """Jump magnitudes drawn from an exponential law with the given mean."""

    mean: float

    law = "exp"

    @property
    def param(self) -> float:
        return self.mean


@dataclass(frozen=True)
class FixedMagnitude:
    """Every jump has the same magnitude ``size``."""

    size: float

    law = "fixed"

    @property
    def param(self) -> float:
        return self.size


Magnitude = Union[ExponentialMagnitude, FixedMagnitude]


@dataclass(frozen=True)
class CompoundPoissonNegative:
    """Negative jumps arriving at ``rate`` per unit time.

    Parameters
    ----------
    rate : float
        Poisson intensity of the jumps.
    magnitude_law : ExponentialMagnitude or FixedMagnitude
        Law of the (positive) magnitude; the jump itself is ``-magnitude``.
    """

    rate: float
    magnitude_law: Magnitude

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidEnvironment(f"jump rate must be positive, got {self.rate}")
        if not self.magnitude_law.param > 0:
            raise InvalidEnvironment("jump magnitude parameter must be positive")

    def laplace_term(self, lam: float) -> float:
        c = self.rate
        mag = self.magnitude_law
        if isinstance(mag, ExponentialMagnitude):
            return c * (1.0 / (1.0 + mag.mean * lam) - 1.0)
        return c * math.expm1(-mag.size * lam)

    def laplace_term_derivative(self, lam: float) -> float:
        c = self.rate
        mag = self.magnitude_law
        if isinstance(mag, ExponentialMagnitude):
            mu = mag.mean
            return -c * mu / (1.0 + mu * lam) ** 2
        return -c * mag.size * math.exp(-mag.size * lam)

    @property
    def mean_magnitude(self) -> float:
        return self.magnitude_law.param


@dataclass(frozen=True)
class EnvironmentSpec:
    """Law of the potential ``V``.

    Parameters
    ----------
    gaussian_coeff : float
        Variance per unit time ``Q`` of the Brownian part. Must be positive.
    drift_coeff : float
        Effective drift coefficient ``gamma``; the continuous drift is ``-gamma``.
    jump_component : CompoundPoissonNegative or None
        Optional negative jumps.

    Notes
    -----
    ``kappa``, ``psi_prime_at_kappa`` and ``mean_slope`` are computed once at
    construction; a spec that does not drift to ``-inf`` or has no positive
    root is rejected.
    """

    gaussian_coeff: float
    drift_coeff: float
    jump_component: Optional[CompoundPoissonNegative] = None
    kappa: float = field(init=False, repr=False, compare=False)
    psi_prime_at_kappa: float = field(init=False, repr=False, compare=False)
    mean_slope: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.gaussian_coeff > 0:
            raise InvalidEnvironment("gaussian_coeff must be positive")
        slope = psi_derivative(self, 0.0)
        if not slope < 0:
            raise InvalidEnvironment(f"mean slope must be negative, got {slope}")
        object.__setattr__(self, "mean_slope", slope)
        kappa = find_kappa(self)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "psi_prime_at_kappa", psi_derivative(self, kappa))

    @property
    def Q(self) -> float:
        return self.gaussian_coeff

    @property
    def gamma(self) -> float:
        return self.drift_coeff

    @property
    def has_jumps(self) -> bool:
        return self.jump_component is not None

    @property
    def is_brownian(self) -> bool:
        """True for a drifted Brownian motion (no jump part)."""
        return self.jump_component is None

    def jump_arrays(self):
        """Return ``(rate, law_code, param)`` for the compiled kernels.

        ``law_code`` is 0 for no jumps, 1 for exponential and 2 for fixed.
        """
        jc = self.jump_component
        if jc is None:
            return 0.0, 0, 0.0
        code = 1 if isinstance(jc.magnitude_law, ExponentialMagnitude) else 2
        return float(jc.rate), code, float(jc.magnitude_law.param)


def laplace_exponent(spec: EnvironmentSpec, lam: float) -> float:
    """Evaluate ``Psi(lam) = Q lam^2/2 - gamma lam + J(lam)``.

    Parameters
    ----------
    spec : EnvironmentSpec
    lam : float
        Nonnegative argument.

    Returns
    -------
    float
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    val = 0.5 * spec.gaussian_coeff * lam * lam - spec.drift_coeff * lam
    if spec.jump_component is not None:
        val += spec.jump_component.laplace_term(lam)
    return val


def psi_derivative(spec: EnvironmentSpec, lam: float) -> float:
    """Analytic derivative ``Psi'(lam)``; ``Psi'(0)`` is the mean slope of ``V``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    val = spec.gaussian_coeff * lam - spec.drift_coeff
    if spec.jump_component is not None:
        val += spec.jump_component.laplace_term_derivative(lam)
    return val


def find_kappa(
    spec: EnvironmentSpec,
    tol: float = DEFAULT_TOL,
    lambda_max: float = DEFAULT_LAMBDA_MAX,
) -> float:
    """Positive root of the convex Laplace exponent, by bisection.

    The lower bracket is the first point of a geometric grid from 0 where
    ``Psi < 0``; the upper bracket doubles until ``Psi > 0``.

    Parameters
    ----------
    spec : EnvironmentSpec
    tol : float
        Stop when the bracket is shorter than ``tol`` and ``|Psi| <= tol``.
    lambda_max : float
        Give up beyond this value.

    Raises
    ------
    NoRoot
        If no sign change is found below ``lambda_max``.
    """
    psi = lambda x: laplace_exponent(spec, x)
    lo = None
    x = 1e-12
    while x <= lambda_max:
        if psi(x) < 0:
            lo = x
            break
        x *= 2.0
    if lo is None:
        raise NoRoot("Psi is not negative near 0; V does not drift to -inf")
    hi = max(2.0 * lo, 1e-6)
    while psi(hi) <= 0:
        lo = hi
        hi *= 2.0
        if hi > lambda_max:
            raise NoRoot(f"no root of Psi below lambda_max={lambda_max}")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        val = psi(mid)
        if val < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * 1e-2 and abs(val) <= tol:
            break
    # the root lies in [lo, hi]; pick the end with smaller residual
    return lo if abs(psi(lo)) <= abs(psi(hi)) else hi


def m_constant(spec: EnvironmentSpec) -> float:
    """Speed constant ``m = -2/Psi(1)``; only defined for ``kappa > 1``."""
    if not spec.kappa > 1:
        raise KappaNotAboveOne(f"m requires kappa > 1, got kappa={spec.kappa}")
    return -2.0 / laplace_exponent(spec, 1.0)


def preset(name: str) -> EnvironmentSpec:
    """Construct a named environment.

    ``"bm-kappa:<v>"`` is Brownian motion with ``Q = 1`` and ``gamma = v/2``,
    whose root is exactly ``kappa = v``. ``"bm-expjumps:<rate>"`` is a
    driftless Brownian motion (``Q = 1``) plus negative Exp(1) jumps at
    ``rate``; its root solves ``lambda/2 = rate/(1 + lambda)``, e.g. 1 for
    rate 1 and 1/2 for rate 3/8. The rate may be written as a fraction.
    """
    if name.startswith("bm-kappa:"):
        value = float(name.split(":", 1)[1])
        if not value > 0:
            raise InvalidEnvironment("bm-kappa value must be positive")
        return EnvironmentSpec(1.0, value / 2.0)
    if name.startswith("bm-expjumps:"):
        rate = float(Fraction(name.split(":", 1)[1]))
        if not rate > 0:
            raise InvalidEnvironment("bm-expjumps rate must be positive")
        return EnvironmentSpec(1.0, 0.0, CompoundPoissonNegative(rate, ExponentialMagnitude(1.0)))
    raise KeyError(f"unknown environment preset {name!r}")


def spec_from_json(obj) -> EnvironmentSpec:
    """Build a spec from its JSON object (``dict`` or string)."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    jumps = obj.get("jumps")
    jc = None
    if jumps is not None:
        law = jumps["law"]
        param = float(jumps["param"])
        if law == "exp":
            mag: Magnitude = ExponentialMagnitude(param)
        elif law == "fixed":
            mag = FixedMagnitude(param)
        else:
            raise InvalidEnvironment(f"unknown jump law {law!r}")
        jc = CompoundPoissonNegative(float(jumps["rate"]), mag)
    return EnvironmentSpec(float(obj["Q"]), float(obj["gamma"]), jc)


def spec_to_json(spec: EnvironmentSpec) -> dict:
    jc = spec.jump_component
    jumps = None
    if jc is not None:
        jumps = {
            "rate": jc.rate,
            "law": jc.magnitude_law.law,
            "param": jc.magnitude_law.param,
        }
    return {"Q": spec.gaussian_coeff, "gamma": spec.drift_coeff, "jumps": jumps}


def load_environment(ref: Union[str, EnvironmentSpec, dict]) -> EnvironmentSpec:
    """Resolve a preset name, a JSON file path, a dict or a spec."""
    if isinstance(ref, EnvironmentSpec):
        return ref
    if isinstance(ref, dict):
        return spec_from_json(ref)
    if ref.startswith(("bm-kappa:", "bm-expjumps:")):
        return preset(ref)
    path = Path(ref)
    if path.exists():
        return spec_from_json(json.loads(path.read_text()))
    return spec_from_json(ref)
