"""Quick-IC: adaptive-Lasso penalized likelihood that emulates information-criterion model selection."""

__version__ = "0.1.0"

from .core import (
    ALassoPenalty,
    ICKind,
    ICSpec,
    QuadraticLikelihood,
    SelectionResult,
    ic_score,
    lambda_ic,
    prop2_ic_selection,
    prop2_quickic_selection,
    saliencies,
    saliency,
    soft_threshold_diagonal,
)
from .errors import BudgetExceeded, HeywoodCase, InvalidArgument, NumericFailure, QuickICError, StepDegenerate
from .fa import FAModel, fa_cv_select, fa_em_fit, fa_ic_select, fa_loglik, quick_bic_fa
from .gmm import GMMModel, LogPenaltyWeights, gmm_em_fit, gmm_loglik, gmm_mml_length, gmm_npl, pi_update, quick_mml_gmm
from .linreg import (
    RegressionData,
    alasso_path,
    alasso_plus_ic,
    exhaustive_ic_regression,
    ols_full_fit,
    quick_ic_regression,
)
from .mfa import MFAModel, MFAPenaltyState, mfa_em_fit, mfa_loglik, mfa_mml_length, mfa_npl, nf_hat, quick_mml_mfa

__all__ = [name for name in dir() if not name.startswith("_")]
