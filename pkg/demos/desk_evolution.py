"""A short evolution run and its front-quality trend.

Runs the desk preset (50 generations of a small population) for one
architecture and prints nu every ten generations.  Lower nu means the
time/speed front hugs the origin more tightly.  Takes about ten seconds.
"""

import sys

from divland.analysis import nu_series
from divland.evo import EvoConfig, evolve

arch = sys.argv[1] if len(sys.argv) > 1 else "NN"
archive = evolve(EvoConfig.desk(arch=arch, seed=0))
nu = nu_series(archive)
for gen in range(0, len(nu), 10):
    print(f"gen {gen:3d}  nu {nu[gen]:.4f}")
front = sorted(archive.front(), key=lambda ind: ind.fitness[0])
print(f"final front: {len(front)} members")
for ind in front[:3] + front[-2:]:
    t, h, v = ind.fitness
    print(f"  {ind.genome_id}  time {t:6.2f} s  height {h:.3f} m  speed {v:.3f} m/s")
