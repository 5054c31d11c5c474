"""Analytical thermo-mechanical chiplet placement for 2.5D interposers."""

from .model import (
    ADVANCED_X32,
    BumpPin,
    ChipletSpec,
    D2DInterfaceSpec,
    DesignInstance,
    INTERFACES,
    InterposerSpec,
    InvalidOrientation,
    LEGAL_ANGLES,
    LegalityReport,
    Net,
    PlacementState,
    STANDARD_X16,
    SchemaError,
    bump_abs_position,
    check_legal,
    exact_wirelength,
    load_design,
    load_placement,
    rotated_dims,
    save_design,
    save_placement,
    snap_angle,
)
from .fields import (
    DegenerateField,
    FieldGrid,
    detrend_plane,
    field_from_csv,
    field_mae,
    field_pearson,
    field_to_csv,
    field_to_svg,
    rasterize_power,
    warpage_metric,
)
from .oracle import (
    ConvergenceError,
    PlateOracleConfig,
    ThermalOracleConfig,
    solve_thermal,
    solve_warpage,
)
from .bench import synthesize_benchmark
from .fitting import FitConfig, FitDivergence
from .milp import MilpProblem, MilpSolution, solve as solve_milp
from .optimize import (
    CgdConfig,
    PenaltyConfig,
    angular_deviation,
    bz,
    objective,
    overflow,
    projected_density,
    projected_wirelength,
    run_cgd,
    rz,
    snap_orientations,
)
from .pipeline import (
    RunConfig,
    audit_placement,
    fit_models,
    generate_dataset,
    measure_speedup,
    pareto_sweep,
    place_flow,
    tune_random,
)
from .seedlegal import (
    InfeasibleLegalization,
    build_init_milp,
    build_legalize_milp,
    greedy_init,
    greedy_legalize,
    initialize,
    legalize,
)
from .thermal import (
    CompactThermalParams,
    aux_f,
    aux_f_grad,
    eval_tc,
    eval_tc_points,
    fit_thermal,
    grad_tc,
)
from .warpage import (
    CompactWarpageParams,
    eval_w,
    eval_w_local,
    fit_warpage,
    grad_w,
    smooth_peak_to_valley,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
