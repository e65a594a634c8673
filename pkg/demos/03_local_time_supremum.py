"""The largest local time before the diffusion reaches r.

For kappa > 1 the supremum of the local time, scaled by r^(1/kappa),
converges to a Frechet law. The local time process is sampled here through
its Bessel-squared representation on the environment, without simulating the
diffusion itself. The favorite site, rescaled by r, is close to uniform.
"""
import math

import numpy as np

from levy_valley_lab.diffusion_observables import sup_and_argmax, z_process
from levy_valley_lab.experiments import ks_distance
from levy_valley_lab.levy_model import preset
from levy_valley_lab.limit_laws import frechet_cdf, hitting_time_frechet_params
from levy_valley_lab.path_sim import simulate

spec = preset("bm-kappa:2")
r, reps = 100.0, 300
rng = np.random.default_rng(5)
sup, arg = [], []
for _ in range(reps):
    env = simulate(spec, r, 0.005, rng)
    M, x = sup_and_argmax(z_process(env, rng))
    sup.append(M / r ** (1 / spec.kappa))
    arg.append(x / r)
alpha, s = hitting_time_frechet_params(spec, 2.0)
print(f"{reps} environments up to r={r:g}")
print(f"median of M/r^(1/2): {np.median(sup):.3f} (Frechet({alpha:g}, {s:.3f}) median "
      f"{s / math.log(2) ** (1 / alpha):.3f})")
print(f"KS vs Frechet: {ks_distance(sup, lambda t: frechet_cdf(alpha, s, t)):.3f}")
print(f"KS of favorite site / r vs uniform: {ks_distance(arg, lambda t: np.clip(t, 0, 1)):.3f}")
