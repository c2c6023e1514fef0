"""Command-line front end: ``levcool run | sweep | fit``.

Configs are TOML (or JSON) documents with unit-suffixed keys, e.g.::

    [params]
    omega_hz = 70e3
    beta = 0.01

    [gas]
    pressure_mbar = 1e-6

    [timing]
    dt_e_ns = 5
    m = 200

    [run]
    controller = "double_phase"
    seed = 7

Unit conversions happen once, when the resolved document is turned into
library objects. Every output embeds the resolved document, which is itself
a valid config.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .control import ControllerKind
from .core import MBAR, HBAR, PhysicalParams
from .emulate import ModelOptions, ParticleLost
from .experiment import (
    FitError,
    LoopTiming,
    RunConfig,
    SweepSpec,
    Trace,
    TraceSchemaError,
    fit_cooling_rate,
    run,
    steady_state_phonon,
    sweep,
)
from .track import TrackingLost, TrackingMode

log = logging.getLogger("levcool")

# section -> key -> default, in the units named by the key
DEFAULTS = {
    "params": {
        "mass_kg": 9.42e-19,
        "omega_hz": 70e3,
        "temperature_k": 300.0,
        "eta": 0.003,
        "alpha_per_m2_s": 4.04e25,
        "gamma_c_per_s": 0.0,
        "beta": 0.0,
        "delta_n": 0.0,
    },
    "gas": {
        "pressure_mbar": None,
        "particle_radius_nm": 50.0,
        "molar_mass_kg_per_mol": 0.02897,
        "c_drag": None,
    },
    "timing": {
        "dt_e_ns": 0.5,
        "m": 2000,
        "n": 5,
        "t_prep_ms": 5.0,
        "t_total_ms": 15.0,
        "noise_substeps": 1,
    },
    "run": {
        "controller": "off",
        "tracking": "modulated",
        "seed": 0,
        "record_stride": 10,
        "oracle_feedback": False,
        "e_floor_quanta": 1e-3,
        "v_scale_m_per_s": None,
        "gas_sign": 1,
        "y5_damping": False,
    },
    "sweep": {
        "axis": None,
        "values": None,  # beta: dimensionless, delta: N, pressure: mbar
        "repeats": 5,
    },
    "analysis": {
        "fit_fraction": math.exp(-3),
        "fit_min_samples": 10,
        "ss_window_ms": 1.0,
        "ss_rtol": 0.05,
        "ss_consecutive": 3,
        "ss_tail_fraction": 0.5,
    },
}

# library field -> config key, for naming offending keys in errors
_FIELD_KEYS = {
    "mass": "params.mass_kg", "omega": "params.omega_hz", "temperature": "params.temperature_k",
    "eta": "params.eta", "alpha": "params.alpha_per_m2_s", "gamma_c": "params.gamma_c_per_s",
    "beta": "params.beta", "delta": "params.delta_n", "pressure": "gas.pressure_mbar",
    "dt_E": "timing.dt_e_ns", "M": "timing.m", "N": "timing.n", "t_prep": "timing.t_prep_ms",
    "t_total": "timing.t_total_ms", "noise_substeps": "timing.noise_substeps",
    "record_stride": "run.record_stride", "seed": "run.seed", "gas_sign": "run.gas_sign",
    "axis": "sweep.axis", "values": "sweep.values", "repeats": "sweep.repeats",
    "v_scale": "run.v_scale_m_per_s",
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


def load_document(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
    else:
        doc = tomllib.loads(text)
    if "config" in doc and isinstance(doc["config"], dict) and "params" in doc["config"]:
        doc = doc["config"]  # a summary JSON: re-run from its embedded config
    return doc


def resolve(doc: dict) -> dict:
    """Merge ``doc`` over the defaults, rejecting unknown sections and keys."""
    out = {}
    for section in doc:
        if section not in DEFAULTS:
            raise ConfigError(section, "unknown section")
        if not isinstance(doc[section], dict):
            raise ConfigError(section, "expected a table")
    for section, defaults in DEFAULTS.items():
        given = doc.get(section, {})
        for key in given:
            if key not in defaults:
                raise ConfigError(f"{section}.{key}", "unknown key")
        out[section] = {k: given.get(k, v) for k, v in defaults.items()}
    return out


def _num(resolved, section, key, kind=float):
    v = resolved[section][key]
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section}.{key}", f"expected a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ConfigError(f"{section}.{key}", "expected an integer")
        return int(v)
    return float(v)


def _wrap(fn):
    try:
        return fn()
    except ConfigError:
        raise
    except ValueError as exc:
        name, _, msg = str(exc).partition(": ")
        key = _FIELD_KEYS.get(name)
        if key is None:
            raise ConfigError(name, msg or str(exc)) from exc
        raise ConfigError(key, msg) from exc


def build_run_config(resolved: dict) -> RunConfig:
    """Convert a resolved document to SI library objects."""
    g = lambda s, k, kind=float: _num(resolved, s, k, kind)  # noqa: E731
    params = _wrap(lambda: PhysicalParams(
        mass=g("params", "mass_kg"),
        omega=2 * math.pi * g("params", "omega_hz"),
        temperature=g("params", "temperature_k"),
        eta=g("params", "eta"),
        alpha=g("params", "alpha_per_m2_s"),
        gamma_c=g("params", "gamma_c_per_s"),
        beta=g("params", "beta"),
        delta=g("params", "delta_n"),
    ))
    timing = _wrap(lambda: LoopTiming(
        dt_E=g("timing", "dt_e_ns") * 1e-9,
        M=g("timing", "m", int),
        N=g("timing", "n", int),
        t_prep=g("timing", "t_prep_ms") * 1e-3,
        t_total=g("timing", "t_total_ms") * 1e-3,
        noise_substeps=g("timing", "noise_substeps", int),
    ))
    r = resolved["run"]
    try:
        controller = ControllerKind(r["controller"])
    except ValueError:
        raise ConfigError("run.controller", f"unknown controller {r['controller']!r}") from None
    try:
        tracking = TrackingMode(r["tracking"])
    except ValueError:
        raise ConfigError("run.tracking", f"unknown tracking mode {r['tracking']!r}") from None
    for key in ("oracle_feedback", "y5_damping"):
        if not isinstance(r[key], bool):
            raise ConfigError(f"run.{key}", "expected true or false")
    pressure = g("gas", "pressure_mbar")
    extra = {}
    if g("gas", "c_drag") is not None:
        extra["c_drag"] = g("gas", "c_drag")
    return _wrap(lambda: RunConfig(
        params=params,
        timing=timing,
        controller=controller,
        tracking_mode=tracking,
        seed=g("run", "seed", int),
        record_stride=g("run", "record_stride", int),
        pressure=None if pressure is None else pressure * MBAR,
        particle_radius=g("gas", "particle_radius_nm") * 1e-9,
        gas_molar_mass=g("gas", "molar_mass_kg_per_mol"),
        model=ModelOptions(gas_sign=g("run", "gas_sign", int), y5_damping=r["y5_damping"]),
        e_floor=g("run", "e_floor_quanta") * HBAR * params.omega,
        v_scale=g("run", "v_scale_m_per_s"),
        oracle_feedback=r["oracle_feedback"],
        **extra,
    ))


def build_sweep_spec(resolved: dict, base: RunConfig) -> SweepSpec:
    s = resolved["sweep"]
    if s["axis"] is None:
        raise ConfigError("sweep.axis", "required for the sweep command")
    if not isinstance(s["values"], list) or not s["values"]:
        raise ConfigError("sweep.values", "expected a non-empty list")
    vals = []
    for v in s["values"]:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError("sweep.values", f"expected numbers, got {v!r}")
        vals.append(float(v) * (MBAR if s["axis"] == "pressure" else 1.0))
    if s["axis"] == "pressure" and base.params.gamma_c != 0:
        raise ConfigError("params.gamma_c_per_s", "must be 0 for a pressure sweep")
    spec = _wrap(lambda: SweepSpec(s["axis"], tuple(vals), _num(resolved, "sweep", "repeats", int), base))
    # surface parameter-range errors before any run starts
    for i in range(len(vals)):
        _wrap(lambda: spec.point_config(i, 0).resolved_params())
    return spec


def analysis_options(resolved: dict):
    a = resolved["analysis"]
    fit_kw = {"fraction": float(a["fit_fraction"]), "min_samples": int(a["fit_min_samples"])}
    ss_kw = {"window": float(a["ss_window_ms"]) * 1e-3, "rtol": float(a["ss_rtol"]),
             "consecutive": int(a["ss_consecutive"]), "tail_fraction": float(a["ss_tail_fraction"])}
    return fit_kw, ss_kw


# --------------------------------------------------------------------------
# charts

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "levcool"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_trace(trace: Trace, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    n = trace.n
    pos = n > 0
    ax.semilogy(trace.t[pos] * 1e3, n[pos], lw=0.8)
    if math.isfinite(trace.t_onset):
        ax.axvline(trace.t_onset * 1e3, color="0.5", ls="--", lw=0.8)
    ax.set_xlabel("t (ms)")
    ax.set_ylabel("phonon number n")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


_AXIS_LABEL = {"beta": "modulation depth β", "delta": "coupling δ (N)", "pressure": "pressure (mbar)"}


def plot_sweep(result, n_path, rc_path) -> None:
    plt = _pyplot()
    axis = result.spec.axis
    x = result.values / (MBAR if axis == "pressure" else 1.0)
    logx = axis != "beta"
    for path, y, err, label in (
        (n_path, result.n_mean, result.n_sem, "steady-state phonon number"),
        (rc_path, result.rc_mean, [_nan(p.rc_sem) for p in result.points], "cooling rate r_c (1/s)"),
    ):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.errorbar(x, y, yerr=err, marker="o", capsize=3)
        ax.set_yscale("log")
        if logx:
            ax.set_xscale("log")
        ax.set_xlabel(_AXIS_LABEL[axis])
        ax.set_ylabel(label)
        fig.tight_layout()
        _save(fig, path)
        plt.close(fig)


def _nan(v):
    return math.nan if v is None else v


# --------------------------------------------------------------------------
# commands

def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(type(o))


def _finite(o):
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_finite(obj), indent=2, sort_keys=True) + "\n")


def _error(out_dir, kind: str, message: str, **extra) -> dict:
    err = {"error": kind, "message": message, **extra}
    print(json.dumps(_finite(err), sort_keys=True), file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            _write_json(Path(out_dir) / "error.json", err)
        except OSError:
            pass
    return err


def _prepare(args):
    doc = load_document(args.config)
    resolved = resolve(doc)
    if args.seed is not None:
        resolved["run"]["seed"] = args.seed
    return resolved, build_run_config(resolved)


def cmd_run(args) -> int:
    out = Path(args.out)
    try:
        resolved, config = _prepare(args)
    except ConfigError as exc:
        _error(out, "config", str(exc), key=exc.key)
        return 2
    except (OSError, tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        _error(out, "config", str(exc))
        return 2
    out.mkdir(parents=True, exist_ok=True)
    fit_kw, ss_kw = analysis_options(resolved)
    trace = run(config, raise_on_failure=False)
    trace.to_csv(out / "trace.csv")
    plot_trace(trace, out / "phonons.svg")
    summary = {"config": resolved, "status": trace.status, "failed_at_s": trace.failed_at,
               "t_onset_s": trace.t_onset, "records": len(trace)}
    try:
        fit = fit_cooling_rate(trace, **fit_kw)
        summary["fit"] = fit.to_dict()
        summary["r_c"] = fit.rate
    except FitError as exc:
        summary["fit"] = None
        summary["r_c"] = None
        summary["fit_error"] = str(exc)
    ss = steady_state_phonon(trace, **ss_kw)
    summary.update(n_ss=ss.mean, n_ss_sem=ss.sem, converged=ss.converged,
                   t_converged_s=ss.t_converged)
    _write_json(out / "summary.json", summary)
    if not trace.ok:
        _error(out, trace.status, f"{trace.status} at t={trace.failed_at:.6g} s",
               time_s=trace.failed_at)
        return 3
    log.info("run finished: r_c=%s n_ss=%.4g", summary["r_c"], ss.mean)
    return 0


def cmd_sweep(args) -> int:
    out = Path(args.out)
    try:
        resolved, base = _prepare(args)
        spec = build_sweep_spec(resolved, base)
    except ConfigError as exc:
        _error(out, "config", str(exc), key=exc.key)
        return 2
    except (OSError, tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        _error(out, "config", str(exc))
        return 2
    out.mkdir(parents=True, exist_ok=True)
    fit_kw, ss_kw = analysis_options(resolved)
    done = []

    def document(complete):
        return {"config": resolved, "complete": complete, "axis": spec.axis,
                "values": list(resolved["sweep"]["values"]), "repeats": spec.repeats,
                "points": [p.to_dict() for p in done],
                "seeds": [[r.seed for r in p.runs] for p in done]}

    def on_point(i, pt):
        done.append(pt)
        _write_json(out / "sweep.json", document(False))

    try:
        result = sweep(spec, parallelism=args.parallelism, fit_kw=fit_kw, ss_kw=ss_kw,
                       on_point=on_point)
    except KeyboardInterrupt:
        _write_json(out / "sweep.json", document(False))
        _error(out, "interrupted", f"sweep interrupted after {len(done)} of {len(spec.values)} points")
        return 130
    doc = document(True)
    doc["n_thermal"] = result.n_thermal
    _write_json(out / "sweep.json", doc)
    plot_sweep(result, out / f"n_vs_{spec.axis}.svg", out / f"rc_vs_{spec.axis}.svg")
    return 0


def cmd_fit(args) -> int:
    try:
        trace = Trace.from_csv(args.trace, t_onset=args.onset)
        fit = fit_cooling_rate(trace, fraction=args.fraction, min_samples=args.min_samples)
    except TraceSchemaError as exc:
        _error(None, "schema", str(exc))
        return 4
    except FitError as exc:
        _error(None, "fit", str(exc))
        return 5
    except (OSError, ValueError) as exc:
        _error(None, "input", str(exc))
        return 4
    print(json.dumps(fit.to_dict(), sort_keys=True))
    return 0


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser = argparse.ArgumentParser(prog="levcool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="single closed-loop run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_u64)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="multi-seed parameter sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_u64)
    p.add_argument("--parallelism", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", parents=[common], help="fit the initial cooling rate of a trace CSV")
    p.add_argument("trace")
    p.add_argument("--onset", type=float, help="feedback onset (s); default: first non-zero control")
    p.add_argument("--fraction", type=float, default=math.exp(-3))
    p.add_argument("--min-samples", type=int, default=10)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
