"""How fast the tracker's uncertainty collapses, and where it settles.

Starting from the thermal spread, the conditional variances follow a
Riccati equation and settle on the algebraic root. The settled position
uncertainty shrinks as the measurement gets stronger relative to the gas
heating, i.e. at lower pressure.
"""
import matplotlib.pyplot as plt
import numpy as np

from _common import OUT
from levcool import (MBAR, ControlInput, TrackerState, paper_params, predict, pressure_to_gamma,
                     steady_state_variances, thermal_state)

p0 = paper_params()
fig, ax = plt.subplots(figsize=(6, 4))
for mbar in (1e-2, 1e-6, 1e-10):
    p = p0.replace(gamma_c=pressure_to_gamma(mbar * MBAR, 50e-9, 0.02897, 300.0, p0.mass))
    vz, vp, c = steady_state_variances(p)
    relax = 10 / (8 * p.eta * p.alpha * vz)
    ts = np.geomspace(1e-9, 2 * relax, 40)
    x, prev, var = TrackerState(thermal_state(p)), 0.0, []
    for t in ts:
        x = predict(x, ControlInput(), p, t - prev, 1e-8)
        prev = t
        var.append(x.moments.var_z)
    print(f"{mbar:.0e} mbar: sqrt(Vz*) = {np.sqrt(vz):.3e} m, relaxation scale {relax:.2e} s")
    ax.loglog(ts, np.array(var) / vz, label=f"{mbar:.0e} mbar")
ax.axhline(1, color="k", lw=0.5)
ax.set_xlabel("t [s]")
ax.set_ylabel(r"$V_z(t) / V_z^*$")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "tracker_variances.png", dpi=120)
