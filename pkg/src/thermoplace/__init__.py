"""Thermal-field simulation, PINN surrogate, and sensor placement toolkit."""

import os as _os

# The compute kernels work on small matrices where BLAS thread fan-out costs
# more than it saves, and single-threaded reductions keep results bit-stable.
# Respected only if numpy has not been imported yet; explicit user settings win.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from .errors import (ConfigError, DegenerateReferenceError,
                     DegenerateScalerError, DomainError, InfeasibleError,
                     RangeError, SizeGuardError, ThermoplaceError,
                     TrainingNumericError)
from .fdsolver import (FieldSeries, GridSpec, SourceTerm, relative_l2,
                       sample_series, solve_1d, solve_2d)
from .net import Jet, NetSpec, NetworkParams, forward, init_xavier, input_jet, param_gradient
from .physics import (DriveSample, DriveSeries, PhysicsSpec, boundary_value,
                      default_spec, drive_at, load_loss_spatial,
                      load_loss_temporal, source_q, synth_drive)
from .placement import (PlacementConfig, PlacementGrid, PlacementSolution,
                        ScoreField, bnb_solve, build_grid, exhaustive_solve,
                        overlap_cost, score_field, solve_model1, solve_model2,
                        solve_model3)
from .training import (PinnPredictor, Scaler, TrainConfig, TrainingSets,
                       TrainReport, eval_metrics, fit_scaler, pde_residual,
                       residual, sample_training_sets, total_loss, train_adam,
                       train_lbfgs, train_pinn)

__version__ = "0.1.0"
