"""Kinetic simulator for two-dimensional grain growth.

Number densities of grains, resolved by facet class and area, drift in area
at integer class speeds and exchange class membership through a tri-diagonal
collision operator with a nonlocal coupling weight. The package provides the
operator and its moments, exact characteristic transport, two time steppers
(Strang splitting and a relaxed fixed-point integrator), tightness and
grain-count diagnostics, the self-similar moment problem, and a small CLI.
"""

from .core import (
    AreaGrid,
    ModelParams,
    MomentSet,
    SimState,
    SuperSolution,
    apply_collision,
    apply_collision_gain,
    apply_collision_loss,
    check_admissible,
    collision_matrix,
    compute_moments,
    flat_norm,
    flat_norm_per_class,
    full_mode_cap,
    relaxation_rates,
    super_solution,
)
from .errors import (
    AdmissibilityLossError,
    ConfigError,
    DegenerateWeightError,
    GrainflowError,
    NonContractionError,
    OverflowLeakError,
    PropagatorError,
    SnapshotFormatError,
    StepSizeError,
    UnprojectableError,
)
from .transport import BoundaryOutflow, relaxed_transport, shift_transport
from .stepper import (
    LadderReport,
    PicardDiagnostics,
    StepDiagnostics,
    StepperConfig,
    TrajectoryRecord,
    collision_propagate,
    picard_window,
    run_simulation,
    strang_step,
    truncation_ladder,
)
from .initial import build_initial_state, project_polyhedral
from .diagnostics import (
    GrainBoundReport,
    InvariantReport,
    LewisFit,
    TightnessRecord,
    energy_distance,
    energy_growth_fit,
    envelope_constants,
    fit_exponential_tail,
    grain_count_bounds,
    head_weights,
    invariant_report,
    lewis_means,
    quasi_complement_first,
    quasi_complement_second,
    tail_weights,
    tightness_envelope,
)
from .selfsim import (
    SelfSimInput,
    SelfSimResult,
    lewis_asymptote,
    selfsim_moments,
)
from .io import (
    RunConfig,
    load_config,
    read_snapshot,
    write_snapshot,
    write_table,
    write_timeseries,
)
from . import errors

__version__ = "0.1.0"
