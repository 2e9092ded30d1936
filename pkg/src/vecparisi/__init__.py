"""Enriched free energy of convex vector spin glasses: cone calculus, matrix paths,
cascade evaluation of psi, Parisi and Hopf-Lax solvers, and one-dimensional transport."""

from .cascade import (
    CascadeError,
    CascadeSpec,
    GridError,
    MCEstimate,
    PsiGridConfig,
    SpinLaw,
    grad_psi,
    grad_psi_fd,
    mc_free_energy,
    overlap_samples,
    psi_grid,
    psi_mc,
    sample_cascade_weights,
    sample_field,
)
from .cone import (
    ConeError,
    XiModel,
    check_model,
    conjugate_xi,
    ellipt,
    eval_xi,
    grad_conjugate,
    grad_xi,
    psd_project,
    theta,
)
from .kernels import BACKEND, use_backend
from .paths import (
    DiscreteMeasure,
    LipschitzPath,
    PathError,
    RampStepPath,
    StepPath,
    law_map,
    lp_distance,
    path_eval,
    quantile_path,
    uparrow_certificate,
)
from .transport import (
    TransportError,
    concavity_probe,
    kantorovich_dual_gap,
    totally_ordered_support,
    transport_cost_lp,
    transport_cost_monotone,
    w2,
)
from .variational import (
    DiscretizedControl,
    VariationalError,
    critical_point_solve,
    frechet_probe,
    gateaux_fd,
    hopflax_functional,
    hopflax_solve,
    j_functional,
    parisi_functional,
    parisi_solve,
    pde_residual,
    uniqueness_probe,
)

__version__ = "0.1.0"
