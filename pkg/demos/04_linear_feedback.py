"""Linear (force) feedback: there is a best coupling, and cold damping breaks.

``optimal_linear`` applies a force +-delta chosen by enumeration. Too weak and
it cannot beat the heating; too strong and each kick overshoots the
measurement resolution. Cold damping ``F = -delta v`` with a sampled velocity
becomes unstable once ``delta dt / m`` is of order one.
"""
import matplotlib.pyplot as plt

from _common import OUT
from levcool import MBAR, LoopTiming, RunConfig, SweepSpec, paper_params, sweep

timing = LoopTiming.coarse(t_total=40e-3)
base = RunConfig(paper_params(), timing, "optimal_linear", pressure=1e-5 * MBAR, seed=404)

fig, ax = plt.subplots(figsize=(6, 4))
for kind, deltas in (("optimal_linear", [1e-18, 1e-17, 1e-16, 1e-15, 1e-14]),
                     ("cold_damping", [1e-15, 1e-14, 1e-13, 1e-12])):
    res = sweep(SweepSpec("delta", deltas, repeats=3, base=base.replace(controller=kind)))
    for pt in res.points:
        tag = "  heating/lost" if pt.heating or pt.lost else ""
        print(f"{kind:15s} delta={pt.value:.0e}  n = {pt.n_mean:.3g}{tag}")
    ax.errorbar(deltas, res.n_mean, yerr=res.n_sem, fmt="o-", label=kind)
ax.set_xscale("log")
ax.set_yscale("log")
ax.set_xlabel(r"$\delta$ [N]")
ax.set_ylabel("steady-state phonons")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "linear_feedback.png", dpi=120)
