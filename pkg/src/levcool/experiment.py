"""Closed-loop runs, cooling-rate fits, steady-state detection and sweeps."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
import json
import logging
import math
from typing import Iterator, Sequence

import numpy as np

from . import _kernels as K
from .control import ControlInfeasible, ControllerKind, thermal_velocity
from .core import (
    AIR_MOLAR_MASS,
    EPSTEIN_DIFFUSE,
    HBAR,
    GaussianMoments,
    LaserParams,
    PhysicalParams,
    coupling_from_laser,
    mean_energy,
    phonon_number,
    pressure_to_gamma,
    thermal_state,
)
from .emulate import ModelOptions, ParticleLost, RngStreams, derive_seed, param_vector
from .track import TrackingLost, TrackingMode

log = logging.getLogger(__name__)

COLUMNS = ("t", "y1", "y2", "y3", "y4", "y5", "x1", "x2", "x3", "x4", "x5",
           "u", "v", "J", "E_true", "E_est", "n_true")
CSV_HEADER = ",".join(COLUMNS)

_STATUS = {K.OK: "ok", K.PARTICLE_LOST: "particle_lost",
           K.TRACKING_LOST: "tracking_lost", K.CONTROL_INFEASIBLE: "control_infeasible"}
_ERRORS = {"particle_lost": ParticleLost, "tracking_lost": TrackingLost,
           "control_infeasible": ControlInfeasible}


class FitError(ValueError):
    pass


class TraceSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class LoopTiming:
    """Emulation step, measurement and control sub-division, run length.

    The measurement interval is ``dt = M * dt_E`` and the tracker/control
    step ``dt_C = dt / N``. Each emulation Wiener increment is built from
    ``noise_substeps`` finer increments (1 for ordinary runs).
    """

    dt_E: float = 0.5e-9
    M: int = 2000
    N: int = 5
    t_prep: float = 5e-3
    t_total: float = 15e-3
    noise_substeps: int = 1

    def __post_init__(self):
        if not self.dt_E > 0:
            raise ValueError("dt_E: must be positive")
        if self.M < 1:
            raise ValueError("M: must be >= 1")
        if self.N < 1:
            raise ValueError("N: must be >= 1")
        if self.noise_substeps < 1:
            raise ValueError("noise_substeps: must be >= 1")
        if self.dt_C < self.dt_E * (1 - 1e-12):
            raise ValueError("N: control step dt/N must not be shorter than dt_E")
        if self.t_prep < 0:
            raise ValueError("t_prep: must be non-negative")
        if not (self.t_total >= self.t_prep and self.t_total > 0):
            raise ValueError("t_total: must be positive and at least t_prep")

    @property
    def dt(self) -> float:
        return self.M * self.dt_E

    @property
    def dt_C(self) -> float:
        return self.dt / self.N

    @property
    def n_prep(self) -> int:
        return int(round(self.t_prep / self.dt))

    @property
    def n_total(self) -> int:
        return int(round(self.t_total / self.dt))

    @classmethod
    def paper(cls, **kw) -> "LoopTiming":
        return cls(**{"dt_E": 0.5e-9, "M": 2000, "N": 5, **kw})

    @classmethod
    def coarse(cls, **kw) -> "LoopTiming":
        """Same 1 us measurement interval on a 5 ns emulation grid."""
        return cls(**{"dt_E": 5e-9, "M": 200, "N": 5, **kw})


@dataclass(frozen=True)
class RunConfig:
    params: PhysicalParams
    timing: LoopTiming = field(default_factory=LoopTiming)
    controller: ControllerKind = ControllerKind.OFF
    tracking_mode: TrackingMode = TrackingMode.MODULATED
    seed: int = 0
    record_stride: int = 10
    pressure: float | None = None  # Pa; replaces params.gamma_c when given
    laser: LaserParams | None = None  # replaces params.alpha when given
    particle_radius: float = 50e-9
    gas_molar_mass: float = AIR_MOLAR_MASS
    c_drag: float = EPSTEIN_DIFFUSE
    model: ModelOptions = field(default_factory=ModelOptions)
    e_floor: float | None = None  # J; double-phase dead zone
    v_scale: float | None = None  # m/s; cold-damping normalisation
    oracle_feedback: bool = False  # classical laws read the emulated state
    tracker_offset: tuple = (0.0, 0.0)  # initial (z, p) error of the tracker

    def __post_init__(self):
        object.__setattr__(self, "controller", ControllerKind(self.controller))
        object.__setattr__(self, "tracking_mode", TrackingMode(self.tracking_mode))
        if self.pressure is not None:
            if self.pressure < 0:
                raise ValueError("pressure: must be non-negative")
            if self.params.gamma_c != 0:
                raise ValueError("pressure: give either gamma_c or pressure, not both")
        if self.record_stride < 1:
            raise ValueError("record_stride: must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed: must be an unsigned 64-bit integer")

    def resolved_params(self) -> PhysicalParams:
        p = self.params
        if self.pressure is not None:
            p = p.replace(gamma_c=pressure_to_gamma(
                self.pressure, self.particle_radius, self.gas_molar_mass,
                p.temperature, p.mass, self.c_drag))
        if self.laser is not None:
            p = p.replace(alpha=coupling_from_laser(self.laser))
        return p

    def replace(self, **kw) -> "RunConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class TraceRecord:
    t: float
    y: GaussianMoments
    x: GaussianMoments
    u: float
    v: float
    J: float
    energy_true: float
    energy_est: float
    phonons_true: float


class Trace(Sequence):
    """Recorded closed-loop samples, one row per recorded measurement interval.

    Columns follow :data:`COLUMNS`; ``t_onset`` is the time feedback was
    engaged, ``status`` is ``"ok"`` or the failure that ended the run.
    """

    def __init__(self, data: np.ndarray, t_onset: float = 0.0, status: str = "ok",
                 failed_at: float | None = None, config: RunConfig | None = None):
        self.data = np.asarray(data, dtype=float).reshape(-1, len(COLUMNS))
        self.t_onset = t_onset
        self.status = status
        self.failed_at = failed_at
        self.config = config

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        r = self.data[i]
        return TraceRecord(r[0], GaussianMoments(*r[1:6]), GaussianMoments(*r[6:11]),
                           r[11], r[12], r[13], r[14], r[15], r[16])

    def __iter__(self) -> Iterator[TraceRecord]:
        for i in range(len(self)):
            yield self[i]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, COLUMNS.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def n(self) -> np.ndarray:
        return self.data[:, 16]

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def raise_for_status(self) -> None:
        if not self.ok:
            exc = _ERRORS[self.status](f"{self.status} at t={self.failed_at:.6g} s")
            exc.trace = self
            exc.time = self.failed_at
            raise exc

    def to_csv(self, path) -> None:
        np.savetxt(path, self.data, fmt="%.17g", delimiter=",", header=CSV_HEADER, comments="")

    @classmethod
    def from_csv(cls, path, t_onset: float | None = None) -> "Trace":
        with open(path) as fh:
            header = fh.readline().strip()
        if header != CSV_HEADER:
            raise TraceSchemaError(f"unexpected trace header: {header!r}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.size and data.shape[1] != len(COLUMNS):
            raise TraceSchemaError(f"expected {len(COLUMNS)} columns, got {data.shape[1]}")
        if t_onset is None:
            t_onset = _detect_onset(data)
        return cls(data, t_onset=t_onset)


def _detect_onset(data: np.ndarray) -> float:
    """Time of the last record before the first non-zero control."""
    if data.size == 0:
        return math.nan
    active = np.flatnonzero((data[:, 11] != 0) | (data[:, 12] != 0))
    if active.size == 0:
        return math.nan
    i = active[0]
    return float(data[i - 1, 0]) if i > 0 else float(data[0, 0])


def free_thermal_phonons(p: PhysicalParams) -> float:
    return phonon_number(mean_energy(thermal_state(p), p.mass, p.omega), p.omega)


def run(config: RunConfig, raise_on_failure: bool = True) -> Trace:
    """Preparation with controls off, then closed-loop feedback.

    Per measurement interval: M emulation steps with the planned controls,
    one window-averaged current sample, N tracker steps on that sample and
    one controller update. On particle or tracking loss the exception carries
    the partial trace (``exc.trace``) and the failure time (``exc.time``),
    unless ``raise_on_failure`` is false.
    """
    p = config.resolved_params()
    tm = config.timing
    P = param_vector(p, config.model)
    y0 = thermal_state(p).as_array()
    x0 = y0.copy()
    x0[0] += config.tracker_offset[0]
    x0[1] += config.tracker_offset[1]
    streams = RngStreams(config.seed)
    e_floor = config.e_floor if config.e_floor is not None else 1e-3 * HBAR * p.omega
    v_scale = config.v_scale if config.v_scale is not None else thermal_velocity(p)
    beta_track = config.tracking_mode.beta(p)
    log.debug("run seed=%d controller=%s gamma_c=%.4g", config.seed, config.controller.value, p.gamma_c)
    rec, r, status, last = K.run_loop(
        y0, x0, P, beta_track, config.controller.code, tm.n_prep, tm.n_total, tm.M, tm.N,
        tm.dt_E, config.record_stride, streams.w, streams.v, streams.z, streams.bridge,
        e_floor, v_scale, config.oracle_feedback, tm.noise_substeps,
    )
    status = _STATUS[int(status)]
    failed_at = None if status == "ok" else (int(last) + 1) * tm.dt
    trace = Trace(rec[:r].copy(), t_onset=tm.n_prep * tm.dt, status=status,
                  failed_at=failed_at, config=config)
    if status != "ok":
        log.info("run seed=%d ended early: %s at t=%.6g s", config.seed, status, failed_at)
        if raise_on_failure:
            trace.raise_for_status()
    return trace


@dataclass(frozen=True)
class FitResult:
    amplitude: float
    rate: float
    fit_window: tuple
    rms_residual: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def _tn(trace, onset):
    if isinstance(trace, Trace):
        t, n = trace.t, trace.n
        if onset is None:
            onset = trace.t_onset
    else:
        t, n = (np.asarray(a, dtype=float) for a in trace)
        if onset is None:
            onset = float(t[0]) if t.size else math.nan
    if not math.isfinite(onset):
        raise FitError("no decay window: trace has no feedback phase")
    return t, n, onset


def fit_cooling_rate(trace, onset: float | None = None, fraction: float = math.exp(-3),
                     min_samples: int = 10) -> FitResult:
    """Fit ``n = A exp(-r_c (t - t0))`` to the initial decay after feedback onset.

    ``t0`` is the first sample of the fit window, so ``A`` is the fitted
    phonon number there. The window runs from ``onset`` until n first drops below ``fraction``
    times its running maximum. ``trace`` is a :class:`Trace` or a ``(t, n)``
    pair.
    """
    t, n, onset = _tn(trace, onset)
    sel = t >= onset
    t, n = t[sel], n[sel]
    if t.size == 0 or not np.any(n > 0):
        raise FitError("no decay window: no positive phonon numbers after onset")
    below = np.flatnonzero(n < np.maximum.accumulate(n) * fraction)
    if below.size == 0:
        raise FitError("no decay window: phonon number never fell by the requested fraction")
    t, n = t[:below[0]], n[:below[0]]
    keep = n > 0
    t, n = t[keep], n[keep]
    if t.size < min_samples:
        raise FitError(f"no decay window: only {t.size} samples before the decay threshold")
    slope, intercept = np.polyfit(t - t[0], np.log(n), 1)
    resid = np.log(n) - (slope * (t - t[0]) + intercept)
    return FitResult(float(math.exp(intercept)), float(-slope), (float(t[0]), float(t[-1])),
                     float(np.sqrt(np.mean(resid**2))), int(t.size))


@dataclass(frozen=True)
class SteadyState:
    mean: float
    sem: float
    converged: bool
    t_converged: float | None = None


def steady_state_phonon(trace, window: float = 1e-3, rtol: float = 0.05,
                        consecutive: int = 3, onset: float | None = None,
                        tail_fraction: float = 0.5) -> SteadyState:
    """Mean phonon number once consecutive window means settle.

    Convergence requires ``consecutive`` successive pairs of ``window``-long
    means to differ by less than ``rtol`` relative. The result averages all
    window means from the first window of that run onward. Without
    convergence the last ``tail_fraction`` of the feedback phase is averaged
    and ``converged`` is False.
    """
    t, n, onset = _tn(trace, onset)
    sel = t > onset
    t, n = t[sel], n[sel]
    if t.size == 0:
        return SteadyState(math.nan, math.nan, False)
    idx = np.floor((t - onset) / window).astype(int)
    nw = idx.max() + 1
    counts = np.bincount(idx, minlength=nw)
    sums = np.bincount(idx, weights=n, minlength=nw)
    valid = counts > 0
    means = sums[valid] / counts[valid]
    starts = onset + np.flatnonzero(valid) * window

    run_len = 0
    for i in range(1, means.size):
        prev = means[i - 1]
        if abs(means[i] - prev) < rtol * abs(prev):
            run_len += 1
            if run_len >= consecutive:
                first = i - consecutive
                tail = means[first:]
                return SteadyState(float(tail.mean()), _sem(tail), True, float(starts[first]))
        else:
            run_len = 0
    t_cut = onset + (1 - tail_fraction) * (t[-1] - onset)
    tail = means[starts >= t_cut]
    if tail.size == 0:
        tail = means[-1:]
    return SteadyState(float(tail.mean()), _sem(tail), False)


def _sem(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0


# --------------------------------------------------------------------------
# sweeps

AXES = ("beta", "delta", "pressure")


@dataclass(frozen=True)
class SweepSpec:
    """Grid over one knob; pressure values are in Pa."""

    axis: str
    values: tuple
    repeats: int = 5
    base: RunConfig | None = None

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis: must be one of {AXES}")
        if len(self.values) == 0:
            raise ValueError("values: grid must be non-empty")
        if self.repeats < 1:
            raise ValueError("repeats: must be >= 1")
        if self.base is None:
            raise ValueError("base: a RunConfig is required")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def point_config(self, i: int, r: int) -> RunConfig:
        v = self.values[i]
        seed = derive_seed(self.base.seed, i, r)
        if self.axis == "pressure":
            return self.base.replace(pressure=v, seed=seed)
        return self.base.replace(params=self.base.params.replace(**{self.axis: v}), seed=seed)


@dataclass
class RunSummary:
    seed: int
    status: str
    failed_at: float | None
    n_ss: float
    n_sem: float
    converged: bool
    r_c: float | None
    fit_error: str | None = None


def summarize(trace: Trace, fit_kw: dict | None = None, ss_kw: dict | None = None) -> RunSummary:
    ss = steady_state_phonon(trace, **(ss_kw or {}))
    try:
        r_c, err = fit_cooling_rate(trace, **(fit_kw or {})).rate, None
    except FitError as exc:
        r_c, err = None, str(exc)
    seed = trace.config.seed if trace.config is not None else 0
    return RunSummary(seed, trace.status, trace.failed_at, ss.mean, ss.sem, ss.converged, r_c, err)


def _run_summary(args) -> RunSummary:
    config, fit_kw, ss_kw = args
    return summarize(run(config, raise_on_failure=False), fit_kw, ss_kw)


@dataclass
class SweepPoint:
    value: float
    n_mean: float
    n_sem: float
    rc_mean: float | None
    rc_sem: float | None
    converged: int
    lost: int
    heating: bool
    runs: list

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list
    n_thermal: float

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    @property
    def n_mean(self) -> np.ndarray:
        return np.array([p.n_mean for p in self.points])

    @property
    def n_sem(self) -> np.ndarray:
        return np.array([p.n_sem for p in self.points])

    @property
    def rc_mean(self) -> np.ndarray:
        return np.array([np.nan if p.rc_mean is None else p.rc_mean for p in self.points])

    @property
    def seeds(self) -> list:
        return [[r.seed for r in p.runs] for p in self.points]

    def to_dict(self, spec_echo: dict | None = None) -> dict:
        return {
            "spec": spec_echo if spec_echo is not None else {
                "axis": self.spec.axis, "values": list(self.spec.values),
                "repeats": self.spec.repeats, "base_seed": self.spec.base.seed},
            "n_thermal": self.n_thermal,
            "points": [_jsonable(p.to_dict()) for p in self.points],
            "seeds": self.seeds,
        }

    def to_json(self, spec_echo: dict | None = None) -> str:
        return json.dumps(self.to_dict(spec_echo), indent=2, sort_keys=True)


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o


def aggregate(value: float, runs: list, n_thermal: float) -> SweepPoint:
    good = [r for r in runs if r.status == "ok" and math.isfinite(r.n_ss)]
    ns = np.array([r.n_ss for r in good])
    if ns.size == 0:
        n_mean = n_sem = math.nan
    elif ns.size == 1:
        n_mean, n_sem = float(ns[0]), float(good[0].n_sem)
    else:
        n_mean, n_sem = float(ns.mean()), _sem(ns)
    rcs = np.array([r.r_c for r in good if r.r_c is not None])
    rc_mean = float(rcs.mean()) if rcs.size else None
    rc_sem = (_sem(rcs) if rcs.size > 1 else None) if rcs.size else None
    lost = sum(r.status != "ok" for r in runs)
    heating = bool(lost > 0 or (math.isfinite(n_mean) and n_mean > n_thermal))
    return SweepPoint(value, n_mean, n_sem, rc_mean, rc_sem,
                      sum(r.converged for r in good), lost, heating, runs)


def sweep(spec: SweepSpec, parallelism: int = 1, fit_kw: dict | None = None,
          ss_kw: dict | None = None, on_point=None) -> SweepResult:
    """Run ``repeats`` seeds at every grid value and aggregate.

    Seeds derive from (base seed, point index, repeat index), so the result
    does not depend on ``parallelism``. ``on_point(i, point)`` is called as
    each grid point completes, in grid order.
    """
    tasks = [(spec.point_config(i, r), fit_kw, ss_kw)
             for i in range(len(spec.values)) for r in range(spec.repeats)]
    n_thermal = free_thermal_phonons(spec.base.resolved_params())
    points = []

    def collect(results):
        buf = []
        for res in results:
            buf.append(res)
            if len(buf) == spec.repeats:
                i = len(points)
                pt = aggregate(spec.values[i], buf, n_thermal)
                points.append(pt)
                log.info("sweep %s=%.4g: n=%.4g +- %.2g", spec.axis, pt.value, pt.n_mean, pt.n_sem)
                if on_point is not None:
                    on_point(i, pt)
                buf = []

    if parallelism <= 1:
        collect(map(_run_summary, tasks))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            collect(pool.map(_run_summary, tasks))
    return SweepResult(spec, points, n_thermal)
