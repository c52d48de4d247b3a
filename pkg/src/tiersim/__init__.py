"""Multi-tier posted-price fee mechanisms: simulation and steady-state analysis."""

from .config import (
    Config,
    ConfigError,
    PolicySettings,
    RegionRef,
    SolveSettings,
    fingerprint,
    load_config,
    parse_config,
    parse_raw,
    serialize_config,
)
from .chain import (
    Blockchain,
    TierState,
    TxOutcome,
    choose_tier,
    is_menu_monotone,
    preferred_tiers,
    utilities,
    utility,
)
from .demand import (
    ArrivalBatch,
    DemandComponent,
    DemandSpec,
    Geometric,
    LoadSchedule,
    Normal,
    Point,
    Region,
    Tabulated,
    Uniform,
    ValueFunction,
    arrivals,
    arrivals_batch,
    sample_batch,
    sample_dist,
    sample_value_function,
    tail_probability,
    upper_bound,
    v0_tail_probability,
)
from .mechanisms import (
    MechanismState,
    TieredParams,
    eip1559_params,
    initial_state,
    update_delays,
    update_eip1559,
    update_tier_parameters,
    update_tier_sizes,
)
from .policy import (
    ClauseReport,
    DiversityPolicy,
    PolicyClause,
    bad_load_spec,
    check_implementation,
    sample_steady_outcomes,
)
from .sim import (
    BlockRecord,
    SimConfig,
    Trace,
    metrics,
    read_trace_csv,
    run,
    step,
    summary_text,
    trace_header,
    write_trace_csv,
)
from .solver import (
    AnalyticUnsupported,
    DelayConstruction,
    ExpectedDemandVector,
    SolveReport,
    SteadyDemand,
    VerifyReport,
    analytic_supported,
    construct_policy_delays,
    envelope_intervals,
    expected_demand,
    is_delay_locally_minimal,
    solve_stable_prices,
    verify_compatible_stable,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
