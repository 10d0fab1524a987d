"""Cascade click models with factorized transitions, fitted by expectation maximization.

A click model is described by a binary latent state per position, a
factorization of its transition matrices into parameter literals, and one
activation function per parameter.  :func:`fit` estimates any such model
from a :class:`SessionLog`; :func:`build_czm` and :func:`build_ubm` provide
two ready-made models.
"""

from .activations import Activation, LogisticActivation, SolverSettings, TableActivation, gradient_error
from .covariates import (
    ColumnSelector,
    ConstantSelector,
    ItemFeatureSelector,
    ItemSelector,
    PositionSelector,
    SlotSelector,
)
from .data import SessionLog
from .em import FitReport, FittedModel, batch_loglik, e_step, fit
from .errors import (
    DefinitionError,
    DegenerateSessionError,
    DimensionError,
    GCMError,
    MStepError,
    NumericGuardError,
    SchemaError,
)
from .evaluation import PerplexityReport, perplexity, predict_click_probs, recovery_error
from .io import load_fitted, read_sessions, save_fitted, write_sessions
from .models import (
    ModelDefinition,
    augment_model_for_emission,
    build_czm,
    build_ubm,
    parameter_sharing,
    resolve_model,
)
from .simulator import GroundTruth, SimulationConfig, simulate
from .state_space import StateSpace, augment_for_emission, build_state_space
from .transitions import Entry, Factorization, Literal, ParameterSpec, validate_factorization

__version__ = "0.1.0"
