"""Infomax training of a V1 -> MT direction-coding network and tuning-curve analysis."""

from .analysis import (ClassifierThresholds, PopulationSummary, ShapeClass, TuningCurve,
                       bidirectional_curve, classify_shape, population_summary,
                       unidirectional_curve)
from .config import ConfigError, RunConfig, load_config, parse_config
from .infotheory import (InfoConfig, InfoEstimate, NotPositiveDefiniteError, fisher_matrix,
                         mc_fisher_validate, mi_asymptotic)
from .model import DensityVector, MotionModel
from .mt import MTParams, init_mt_params, mt_jacobian, mt_normalized, mt_raw
from .optimizer import (DensityConvergenceError, TrainConfig, TrainingDivergedError, TrainTrace,
                        grad_Q, kkt_residual, objective_Q, optimize_density, project_simplex,
                        train)
from .snapshot import ModelSnapshot
from .stimulus import (DirectionGrid, Stimulus, StimulusBatch, bidirectional_stimulus, make_grid,
                       sample_training_set, single_stimulus)
from .v1 import V1Params, v1_encode, von_mises_response

__version__ = "0.1.0"
