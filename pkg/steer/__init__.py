"""
STEER - evolved persona ensembles with a percentile conservativeness dial

Evolves a pool of rater personas toward broad, safe and coherent coverage
of ordinal decision bias, distills it into a compact team, and turns the
team's decisions into one answer per case for any dial setting P.
"""

__version__ = "1.0.0"

from .config import ConfigLoader, ConfigValidationError, get_config
from .logging_setup import setup_logging, get_logger
from .core_model import Case, CaseSplit, Descriptors, OrdinalScale, Persona, PersonaOrigin, RatingMatrix
from .bias_model import BiasFit, fit_additive_bias_model
from .evolution import EvolutionState, GenerationRecord, resume_state, run_evolution
from .team import Team, assemble_team
from .inference import EnsembleOutput, percentile_select, sweep_percentiles

__all__ = [
    "__version__",
    "ConfigLoader",
    "ConfigValidationError",
    "get_config",
    "setup_logging",
    "get_logger",
    "Case",
    "CaseSplit",
    "Descriptors",
    "OrdinalScale",
    "Persona",
    "PersonaOrigin",
    "RatingMatrix",
    "BiasFit",
    "fit_additive_bias_model",
    "EvolutionState",
    "GenerationRecord",
    "resume_state",
    "run_evolution",
    "Team",
    "assemble_team",
    "EnsembleOutput",
    "percentile_select",
    "sweep_percentiles",
]
