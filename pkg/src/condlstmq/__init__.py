"""County-level quantile death-toll forecasting with a conditional LSTM.

The package is organized as a small numpy library plus a CLI:

- :mod:`condlstmq.autodiff` - reverse-mode autodiff tape
- :mod:`condlstmq.model` - the network and its tiled-static baseline
- :mod:`condlstmq.loss_optim` - pinball loss and Adam
- :mod:`condlstmq.data` - CSV loaders, interpolation, seasonality, windowing
- :mod:`condlstmq.synth` - seeded synthetic panels with ground truth
- :mod:`condlstmq.train` - training loop and checkpoints
- :mod:`condlstmq.evaluate` - forecasts, metrics, comparisons, importance
- :mod:`condlstmq.stats` - signed-rank and sign tests
- :mod:`condlstmq.fanchart` - SVG forecast rendering
- :mod:`condlstmq.cli` - the ``condlstmq`` command
"""

from .autodiff import Graph, GradCheckResult, GraphError, ShapeError, Tensor, grad_check
from .data import (CountyPanel, SeasonalityIndex, StandardizationStats,
                   WindowSample, load_panel, make_windows, preprocess_panel,
                   same_day_interpolate, save_panel, spline_interpolate,
                   standardize)
from .loss_optim import (QUANTILES, AdamState, adam_step, avg_quantile_loss,
                         batch_quantile_loss, init_adam, pinball)
from .model import (KIND_COND, KIND_PSEUDO, ModelConfig, ModelParams,
                    QuantileForecast, forward, forward_batch, init_params)
from .stats import sign_test, wilcoxon_signed_rank
from .synth import synth_generate
from .train import (Checkpoint, TrainReport, load_checkpoint, save_checkpoint,
                    split_train_val, train)

__version__ = "0.1.0"
