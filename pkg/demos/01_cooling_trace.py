"""Cool a thermal particle with double-phase feedback and fit the cooling rate.

The particle is left alone for ``t_prep`` while the tracker locks on, then
the spring is modulated with ``u = sin(2 phi)`` of the estimated phase. The
phonon number falls exponentially to a floor set by measurement back-action
and gas collisions. The fine grid (0.5 ns) takes a few minutes; pass
``--coarse`` for the 5 ns grid.
"""
import argparse

import matplotlib.pyplot as plt
import numpy as np

from _common import OUT
from levcool import MBAR, LoopTiming, RunConfig, fit_cooling_rate, free_thermal_phonons, paper_params, run, steady_state_phonon

ap = argparse.ArgumentParser()
ap.add_argument("--coarse", action="store_true")
ap.add_argument("--seed", type=int, default=1)
args = ap.parse_args()

timing = LoopTiming.coarse() if args.coarse else LoopTiming()
p = paper_params(beta=0.01)
cfg = RunConfig(p, timing, "double_phase", pressure=1e-6 * MBAR, seed=args.seed)
trace = run(cfg)

fit = fit_cooling_rate(trace)
ss = steady_state_phonon(trace)
print(f"thermal occupation      {free_thermal_phonons(cfg.resolved_params()):.3e}")
print(f"fitted cooling rate     {fit.rate:.0f} 1/s over {fit.fit_window[0]*1e3:.2f}-{fit.fit_window[1]*1e3:.2f} ms")
print(f"steady-state phonons    {ss.mean:.1f} +- {ss.sem:.1f} (converged: {ss.converged})")

t, n = trace.t, trace.n
fig, ax = plt.subplots(figsize=(6, 4))
ax.semilogy(t * 1e3, n, lw=0.6, label="emulated")
tt = np.linspace(*fit.fit_window, 50)
ax.semilogy(tt * 1e3, fit.amplitude * np.exp(-fit.rate * (tt - fit.fit_window[0])), "k--",
            label=f"fit, $r_c$ = {fit.rate:.0f} s$^{{-1}}$")
ax.axvline(trace.t_onset * 1e3, color="0.6", ls=":")
ax.set_xlabel("t [ms]")
ax.set_ylabel("phonon number")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "cooling_trace.png", dpi=120)
