"""Tabular + time-series fusion with an RWKV patch encoder, on a small numpy autodiff."""
from .autodiff import Tensor, backward, no_grad, checked
from .errors import (ContractError, DataError, DimensionError, EvaluationError, FormatError,
                     NonFiniteError, StateError, TabulaTimeError, TrainingError)
from .preprocess import SeriesBatch, PatchTokens, instance_normalize, denormalize, patch, embed_patches
from .rwkv import EncoderConfig, init_encoder, encode, wkv_direct, wkv_recurrent
from .tabular import TabularSchema, TabularPipeline, Imputer
from .fusion import fuse, predict_class, forecast_head
from .models import ModelConfig, TabulaTime, PatchRWKVForecaster, PatchRWKVClassifier
from .training import TrainConfig, train, split
from .metrics import classification_metrics, forecasting_metrics
from .interpret import permutation_importance, step_importance
from .io import load_config, save_bundle, load_bundle

__version__ = "0.1.0"
