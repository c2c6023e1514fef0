"""Phonon floor versus gas pressure.

At high pressure gas collisions set the floor; below ~1e-6 mbar the photon
recoil from the trapping beam takes over and the floor flattens. Five
repeats per point; the sweep runs in a process pool when more than one CPU
is available.
"""
import os

import matplotlib.pyplot as plt
import numpy as np

from _common import OUT
from levcool import MBAR, LoopTiming, RunConfig, SweepSpec, paper_params, sweep

mbar = np.logspace(-2, -10, 9)
base = RunConfig(paper_params(beta=0.01), LoopTiming.coarse(t_total=30e-3), "double_phase", seed=2024)
res = sweep(SweepSpec("pressure", mbar * MBAR, repeats=5, base=base),
            parallelism=os.cpu_count() or 1,
            on_point=lambda i, pt: print(f"{pt.value / MBAR:8.0e} mbar  n = {pt.n_mean:9.1f} +- {pt.n_sem:.1f}"))

fig, ax = plt.subplots(figsize=(6, 4))
ax.errorbar(mbar, res.n_mean, yerr=res.n_sem, fmt="o-")
ax.set_xscale("log")
ax.set_yscale("log")
ax.invert_xaxis()
ax.set_xlabel("pressure [mbar]")
ax.set_ylabel("steady-state phonons")
fig.tight_layout()
fig.savefig(OUT / "pressure.png", dpi=120)
