"""sodeflow: second-order fields on tangent bundles, their geodesic flows,
generalized exponential maps, nonlinear connections, Finsler semisprays, and
empirical pseudoconvexity/disprisonment probes, all in a single chart.

Backend selection for the hot kernels is controlled by the environment
variable SODEFLOW_BACKEND (numba | numpy | auto); see sodeflow.kernels.
"""

from . import kernels
from .core import (
    Box,
    ConnectionField,
    DoubleTangent,
    EXCLUDES_ZERO,
    SampleSpec,
    Scene,
    SceneOptions,
    SodeField,
    TangentPoint,
    WHOLE_BUNDLE,
    canonical_involution,
    classify_connection_shape,
    classify_homogeneity,
    vertical_connector_K,
    vertical_lift,
)
from .connection import (
    CompatibilityReport,
    VectorFieldSpec,
    compatibility,
    connection_from_spray,
    covariant_derivative,
    curvature,
    difference_operator,
    spray_from_connection,
    torsion,
)
from .errors import (
    DomainError,
    EvalDomainError,
    ExprSyntaxError,
    NotVerticalError,
    NumericalError,
    OutsideDomainError,
    SceneError,
    SodeflowError,
)
from .expmap import (
    ACurve,
    ExpDomainEstimate,
    PlumeData,
    a_curve,
    conjugate_scan,
    eps_domain,
    exp_jacobian,
    exp_map,
    plume,
)
from .expr import Binding, Expression, evaluate, parse, partial, second_partial
from .finsler import FinslerStructure
from .flow import (
    Bound,
    CurveAdapter,
    MaximalIntervalEstimate,
    Trajectory,
    escape_time,
    geodesic_residual,
    integrate,
    integrate_variational,
    maximal_interval,
)
from .probes import (
    BumpSpec,
    EvidenceReport,
    ProbeSampling,
    ShootingResult,
    c0_distance,
    connect_geodesically,
    perturb,
    probe_disprisonment,
    probe_pseudoconvexity,
    replay,
    transition_delta,
)
from .sceneio import load_scene, parse_scene_text

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
