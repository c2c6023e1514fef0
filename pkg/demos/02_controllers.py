"""Compare feedback laws at the same modulation depth.

Double-phase feedback is the analytic rule; ``optimal_quadratic`` picks
u = +-1 by enumerating the sign sequences over the next measurement interval
and keeping the one with the lowest predicted energy. Both should land at
similar floors. The second half shows why the tracker should know about the
modulation. At 1e-7 mbar and beta = 0.05 a tracker that ignores it drifts
off the particle and the phonon number runs away, whichever controller is
used; with the modulation included, the deeper modulation cools further.
"""
import matplotlib.pyplot as plt
import numpy as np

from _common import OUT
from levcool import MBAR, LoopTiming, RunConfig, paper_params, run, steady_state_phonon

timing = LoopTiming.coarse(t_total=20e-3)
floor_pressure = 1e-7 * MBAR
seeds = range(3)


def floor(kind, beta, mode="modulated"):
    out = []
    for s in seeds:
        cfg = RunConfig(paper_params(beta=beta), timing, kind, tracking_mode=mode,
                        pressure=floor_pressure, seed=s)
        tr = run(cfg, raise_on_failure=False)
        out.append(steady_state_phonon(tr).mean if tr.ok else np.inf)
    return np.array(out)


fig, ax = plt.subplots(figsize=(6, 4))
for kind in ("double_phase", "optimal_quadratic"):
    tr = run(RunConfig(paper_params(beta=0.01), timing, kind, pressure=1e-6 * MBAR, seed=0))
    ax.semilogy(tr.t * 1e3, tr.n, lw=0.6, label=kind)
    print(f"{kind:18s} floor over seeds: {floor(kind, 0.01)}")
ax.set_xlabel("t [ms]")
ax.set_ylabel("phonon number")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "controllers.png", dpi=120)

for kind in ("double_phase", "optimal_quadratic"):
    for mode in ("modulated", "unmodulated"):
        for beta in (0.01, 0.05):
            print(f"{kind:18s} tracking {mode:11s} beta={beta}: {floor(kind, beta, mode)}")
