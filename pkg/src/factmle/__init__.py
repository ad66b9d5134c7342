"""Maximum-likelihood factor analysis by difference-of-convex iteration.

The decision variable is ``phi = 1/psi``, the precision of the unique
variances. For fixed ``phi`` the optimal loadings come from the top
eigenpairs of ``Phi^{1/2} S Phi^{1/2}``, which leaves a box-constrained
problem in ``phi`` alone that splits into a convex part and a convex
spectral part.
"""

from .baseline_em import EmConfig, solve_em
from .blockdiag import (
    BlockConfig,
    BlockPrecision,
    BlockStructure,
    block_dc_step,
    block_objective,
    block_subgradient,
    recover_block_model,
    solve_block,
)
from .core import full_rank_objective, objective, subgradient_f2
from .data_io import (
    CovarianceInput,
    GroundTruth,
    InputMode,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    save_csv,
)
from .errors import CertificationFailure, DomainError, FactmleError, NumericalError, ParseError
from .model import FactorModel, neg_loglik, recover_loadings
from .solver import (
    Init,
    SolverConfig,
    SolverTrace,
    StopRule,
    Termination,
    box_update,
    certify_descent,
    dc_step,
    solve,
)
from .spectra import ScaledSpectrum, Strategy, eig_top
from .variants import (
    ContinuationConfig,
    RidgeConfig,
    ridge_step,
    solve_ridge_continuation,
    solve_continuation,
    solve_path,
    solve_ridge,
)

__version__ = "0.1.0"
