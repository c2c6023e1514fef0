"""Feedback cooling of a levitated nanoparticle under continuous position
measurement: emulation, model-based tracking and bang-bang control."""
from .core import (
    HBAR,
    K_B,
    MBAR,
    ControlInput,
    GaussianMoments,
    LaserParams,
    PhysicalParams,
    coupling_from_laser,
    gas_decoherence_rate,
    mean_energy,
    monitoring_strength,
    paper_params,
    phonon_number,
    pressure_to_gamma,
    thermal_state,
)
from .emulate import (
    propagate_deterministic,
    EmulationState,
    ModelOptions,
    NoiseIncrements,
    ParticleLost,
    RngStreams,
    derive_seed,
    diffusion,
    drift,
    homodyne_sample,
    step_euler_maruyama,
    step_srk4,
)
from .track import (
    SteadyStateError,
    TrackerState,
    TrackingLost,
    TrackingMode,
    predict,
    step_tracking,
    steady_state_variances,
)
from .control import (
    ControlInfeasible,
    ControllerKind,
    ControlPlan,
    cold_damping,
    double_phase,
    enumerate_optimal,
    lookahead_propagate,
    thermal_velocity,
)
from .experiment import (
    COLUMNS,
    FitError,
    FitResult,
    LoopTiming,
    RunConfig,
    SteadyState,
    SweepResult,
    SweepSpec,
    Trace,
    TraceRecord,
    TraceSchemaError,
    fit_cooling_rate,
    free_thermal_phonons,
    run,
    steady_state_phonon,
    sweep,
)

__version__ = "0.1.0"
