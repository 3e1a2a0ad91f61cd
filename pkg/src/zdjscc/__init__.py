"""Numerical design and evaluation of zero-delay analog source-channel mappings."""

from .grids import GridSpec, interp_table
from .density import (
    CharacteristicTable,
    SampledDensity,
    characteristic_function,
    density_from_csv,
    density_to_csv,
    make_correlated_gaussian_pair,
    make_gaussian,
    make_gmm,
    make_iid_product,
    make_uniform,
    mix,
)
from .mapping import (
    LinearCoeffs,
    SampledMapping,
    from_function,
    gaussian_linear_coeffs,
    make_linear_decoder,
    make_linear_encoder,
    make_spiral_encoder,
    read_mapping_csv,
    write_mapping_csv,
)
from .solver import (
    NumericalFailure,
    ProblemInstance,
    SolveReport,
    SolverConfig,
    TracePoint,
    distortion,
    encoder_gradient,
    geometric_schedule,
    lagrangian,
    linear_lambda_estimate,
    linear_power_for_lambda,
    optimal_decoder,
    output_density,
    power,
    solve,
    solve_for_power,
    trace_is_monotone,
)
from .sideinfo import (
    SideInfoProblem,
    si_distortion,
    si_encoder_gradient,
    si_lagrangian,
    si_optimal_decoder,
    si_power,
    si_solve,
    si_solve_best_of,
)
from .analysis import (
    FixedResolutionRow,
    GainScanPoint,
    MatchReport,
    MonteCarloReport,
    OperatingPoint,
    best_linear_at_power,
    best_linear_compressive,
    csnr_db,
    fixed_resolution_compare,
    fold_overlap_count,
    gaussian_sampler,
    gmm_sampler,
    linear_gain_scan,
    match_check,
    monte_carlo_eval,
    nonlinearity_index,
    opta,
    opta_side_info,
    same_value_separation,
    snr_db,
    uniform_sampler,
)

__version__ = "0.1.0"
