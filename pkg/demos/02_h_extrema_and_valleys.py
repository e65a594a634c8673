"""Cutting a path into valleys.

An h-minimum is a point the path must climb at least h away from, on both
sides, before going lower. Standard valleys are built from the first time the
path rises h above its running minimum. This demo simulates a path with
negative jumps, lists its h-extrema and decomposes it into standard valleys.
"""
import numpy as np

from levy_valley_lab.levy_model import preset
from levy_valley_lab.path_sim import simulate
from levy_valley_lab.valleys import find_h_extrema, iter_standard_valleys, valley_functionals

spec = preset("bm-expjumps:1")
rng = np.random.default_rng(3)
path = simulate(spec, 200.0, 0.01, rng)
print(f"path: {len(path.t)} rows, {int(np.count_nonzero(path.kind))} jump rows, "
      f"V(200) = {path.v[-1]:.2f}")

ext = find_h_extrema(path, 2.0)
print(f"\n{len(ext)} 2-extrema; they alternate between minima and maxima:")
for e in ext[:8]:
    print(f"  {e.kind} at x={e.position:8.3f}, V={e.value:7.3f}")

print("\nfirst three standard valleys at h=3 on a fresh path:")
for i, val in zip(range(3), iter_standard_valleys(spec, 3.0, rng=rng)):
    f = valley_functionals(val)
    print(f"  valley {i}: bottom m={val.m:9.2f}, tau_h={val.tau_h:9.2f}, L={val.L:9.2f}; "
          f"S={f.S:8.2f}, R={f.R:.3f}")
