"""One network of each kind, stepped and mapped.

Shows the command a random genome produces for a few inputs and the
settled command over a coarse (D, dD) grid, along with how asymmetric its
response is around D = 0.
"""

import numpy as np

from divland.analysis import gain_asymmetry, steady_state_map
from divland.neuro import ARCHS, NetworkState, random_genome, step

rng = np.random.default_rng(3)
for arch in ARCHS:
    g = random_genome(arch, rng)
    state = NetworkState()
    outs = []
    for d in (0.0, 0.5, 1.0):
        out, state = step(g, state, (d, 0.0), 0.025)
        outs.append(out)
    m = steady_state_map(g, np.linspace(-1, 2, 31), np.linspace(-3, 3, 7))
    print(f"{arch:5s} outputs {np.round(outs, 3)}  map range [{np.nanmin(m.values):.2f}, "
          f"{np.nanmax(m.values):.2f}]  non-convergent {m.n_nonconvergent}  asymmetry {gain_asymmetry(m):.2f}")
