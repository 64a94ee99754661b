"""Placement of measurement devices in radial distribution grids.

Load flow, weighted-least-squares state estimation, a common-random-number
measurement noise model and greedy Monte-Carlo device placement.
"""

from .distflow import GridState, LoadingScenario, solve_batch, solve_distflow
from .errors import (
    BadSlack,
    BudgetExhausted,
    DuplicateParent,
    GridValidationError,
    InfeasibleSpec,
    MdplaceError,
    NoConvergence,
    NotRadial,
    NumericalError,
    ParseError,
    SingularGain,
    TooManyFailures,
    UnknownLine,
    UnknownNode,
    ZeroVoltage,
)
from .estimator import (
    MeasurementKind,
    MeasurementLayout,
    MeasurementSet,
    StateVector,
    WLSGain,
    build_jacobian,
    estimate_state,
    measurement_layout,
    wls_solve,
)
from .fixture import FixtureSpec, fixture_state, generate_fixture
from .grid import SLACK, Level, Line, Node, RadialGrid, build_grid, grid_from_edges, leaves
from .noise import CASE_STUDY_NOISE, DeviceConfiguration, NoiseSpec, sample_measurement_batch, sample_measurements
from .placement import (
    PlacementResult,
    Thresholds,
    UncertaintyReport,
    candidates,
    evaluate_configuration,
    greedy_place,
    sensitivity_sweep,
)

__version__ = "0.1.0"
