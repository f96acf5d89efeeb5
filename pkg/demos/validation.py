"""Re-testing evolved controllers on fresh random conditions.

Evolves a small population, then lands every final-front member from
4 m under 100 freshly sampled sensor and plant settings and reports the
quartiles of each objective.
"""

from divland.analysis import validate
from divland.evo import EvoConfig, evolve

archive = evolve(EvoConfig.desk(arch="CTRNN", seed=1, generations=20))
front = {ind.genome_id: ind.genome for ind in archive.front()}
report = validate(front, n=100, seed=1)
names = ("time", "height", "speed")
for gid, pct in zip(report.genome_ids, report.percentiles):
    cols = "  ".join(f"{n} {p[0]:.2f}/{p[1]:.2f}/{p[2]:.2f}" for n, p in zip(names, pct))
    print(f"{gid}: {cols}")
