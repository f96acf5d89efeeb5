"""Constant-divergence landings with a proportional controller.

With no sensor delay the vehicle tracks D = 0.5 and height decays roughly
as exp(-0.25 t).  Adding four samples of delay and noise makes the high
gain controller oscillate near the ground, while a gentle gain still lands.
"""

import numpy as np

from divland.sim import C1, C2, BaselinePolicy, SimParams, run_episode

ideal = SimParams.noiseless(delay=1, tau_thrust=0.005, freq=50.0)
traj = run_episode(BaselinePolicy(5.0, 0.5), 4.0, ideal)
win = (traj["h"] > 0.2) & (traj["h"] < 3.0) & (traj["t"] > 1.0)
slope = np.polyfit(traj["t"][win], np.log(traj["h"][win]), 1)[0]
print(f"noiseless K=5: {traj.reason} after {traj.elapsed:.2f} s, log-height slope {slope:.3f}")
for h in (3.0, 2.0, 1.0, 0.5):
    k = int(np.argmin(np.abs(traj["h"] - h)))
    print(f"  at h = {traj['h'][k]:.2f} m the divergence is {traj['D_true'][k]:.3f}")

delayed = SimParams(delay=4, jitter=0.0, sigma_w=0.1, sigma_p=0.1, tau_thrust=0.02, freq=40.0)
for name, ctrl in (("C1", C1), ("C2", C2)):
    traj = run_episode(ctrl, 4.0, delayed, seed=0)
    last = traj["t"] >= traj.elapsed - 1.0
    print(f"{name} (K = {ctrl.gain}): {traj.reason} in {traj.elapsed:.2f} s, "
          f"thrust std over the last second {np.nanstd(traj['T'][last]):.3f} m/s^2")
