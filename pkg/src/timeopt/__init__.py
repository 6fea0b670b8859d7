"""Time-optimal control of nonlocal continuity equations on particle measures."""

__version__ = "0.1.0"

from .measures import (
    EmpiricalMeasure,
    L2Field,
    TransportPlan,
    barycentric_displacement,
    inner_product_l2,
    push_forward,
    second_moment,
    transport_cost,
    uniform_cloud,
    w2_distance,
)
from .dynamics import (
    BoundReport,
    ControlGrid,
    IntegrationBlowUp,
    RelaxedControl,
    Trajectory,
    VectorField,
    averaged_velocity,
    check_apriori_bounds,
    flow_map,
    integrate,
)
from .target import (
    CustomTarget,
    DilatedTarget,
    HittingResult,
    MomentHyperplane,
    TargetSet,
    WassersteinBall,
    dilated_target,
    hitting_time,
)
from .value import (
    GammaReport,
    SearchConfig,
    ValueEstimate,
    dpp_residual,
    epsilon_value,
    estimate_value,
    gamma_convergence_experiment,
    kruzhkov,
)
from .hjb import (
    DerivativeEstimate,
    MeasureFunctional,
    default_directions,
    hadamard_derivative,
    hamiltonian,
    subdifferential_test,
    subsolution_residual,
    superdifferential_test,
    supersolution_residual,
)
from . import mean_drift

__all__ = [name for name in dir() if not name.startswith("_")]
