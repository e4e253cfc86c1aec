"""Variable selection for joint frailty models of recurrent and terminal events."""
from .bar import BarConfig, BarFit, fit_bar, fit_unpenalized, initial_fit
from .derivatives import score_and_hessian
from .errors import ConvergenceError, InvalidArgumentError, JfbarError, NumericError, ValidationError
from .hazard import PiecewiseHazard, build_cuts
from .likelihood import Dataset, ParameterVector, SubjectRecord, log_likelihood
from .quadrature import AdaptiveQuadState, QuadratureRule, adaptive_integrate, gauss_hermite_rule
from .simulate import InitScheme, ScenarioConfig, gen_dataset, make_initial, scenario_config

__all__ = [
    "AdaptiveQuadState", "BarConfig", "BarFit", "ConvergenceError", "Dataset", "InitScheme", "InvalidArgumentError",
    "JfbarError", "NumericError", "ParameterVector", "PiecewiseHazard", "QuadratureRule", "ScenarioConfig",
    "SubjectRecord", "ValidationError", "adaptive_integrate", "build_cuts", "fit_bar", "fit_unpenalized",
    "gauss_hermite_rule", "gen_dataset", "initial_fit", "log_likelihood", "make_initial", "scenario_config",
    "score_and_hessian",
]
