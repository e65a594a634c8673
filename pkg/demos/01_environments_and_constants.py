"""How steep is the potential? Solving for kappa and the derived constants.

A spectrally negative Levy potential drifts to minus infinity, and the single
number that controls how deep its valleys get is kappa, the positive root of
the Laplace exponent. This demo solves for kappa in three environments, then
estimates K = E[I^(kappa-1)] by Monte Carlo and compares it with the Brownian
closed form.

Run with ``python3 demos/01_environments_and_constants.py``.
"""
import numpy as np

from levy_valley_lab.levy_model import find_kappa, laplace_exponent, m_constant, preset
from levy_valley_lab.limit_laws import estimate_K, exact_K_brownian, limit_constants

for name in ("bm-kappa:2", "bm-expjumps:1", "bm-expjumps:3/8"):
    spec = preset(name)
    k = find_kappa(spec)
    print(f"{name:18s} kappa={k:.12f}  Psi(kappa)={laplace_exponent(spec, k):+.1e}  "
          f"Psi'(kappa)={spec.psi_prime_at_kappa:.4f}")

spec = preset("bm-kappa:2")
print(f"\nW2: m = -2/Psi(1) = {m_constant(spec)}")

rng = np.random.default_rng(1)
K, se = estimate_K(spec, 20_000, rng)
print(f"K by Monte Carlo: {K:.4f} +- {se:.4f}; closed form {exact_K_brownian(spec):.4f}")
c = limit_constants(spec, K, se)
print(f"C = K/Psi'(kappa) = {c.C:.4f}, C' = 2^kappa Gamma(kappa+1) C = {c.C_prime:.4f}")
