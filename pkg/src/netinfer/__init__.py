"""Joint exponential-family regression for unit attributes and network ties.

Simulation from the joint law, scalable pseudo-likelihood estimation,
sandwich uncertainty quantification, and goodness-of-fit diagnostics,
validated against exact small-instance enumeration.
"""

__version__ = "0.1.0"

from .errors import (
    InternalConsistencyError,
    NetinferError,
    NumericalError,
    ValidationError,
)
from .model import (
    Dataset,
    DirectedApplicationModel,
    ModelSpec,
    ParamLayout,
    Population,
    ResponseFamily,
    Theta,
    UndirectedExampleModel,
    change_statistic_transitive,
    cumulant,
    eta_connection,
    eta_response,
    mean,
    overlap_indicator,
    sufficient_statistics,
    two_path_indicator,
)
from .optimizer import (
    FitOptions,
    FitResult,
    MinorizerMatrix,
    QNState,
    astar_apply_inverse,
    fit,
    mm_step_theta1,
    newton_step_theta2,
    qn_step_theta1,
)
from .pseudolik import Objective, evaluate, gradient, neg_hessian_blocks, pseudo_loglik
from .inference import CovEstimate, confidence_intervals, godambe_cov
from .sampler import (
    GibbsConfig,
    SimStudyConfig,
    gibbs_sweep,
    make_subpopulation_neighborhoods,
    run_simulation_study,
    simulate,
)
from .gof import (
    gof_reference,
    predict_response_probs,
    roc_auc,
    shared_partner_distribution,
    spillover_degrees,
)
from .oracle import (
    enumerate_joint,
    exact_conditionals,
    fd_gradient,
    fd_hessian,
    fd_jacobian,
    gaussian_conditional_params,
)
