"""Translators between the two message dialects and the code that trains them."""

from .base import (Autoencoder, ConstantTranslator, EndToEndTranslator, LatentMapTranslator,
                   NumericError, OracleTranslator, TranslationError, Translator, apply)
from .losses import (LossSpec, abstract_loss, loss_abstract, loss_causation, loss_correlation,
                     loss_reconstruction, round_trip_check)
from .mlp import MlpMap
from .optim import TrainingError, grad_check, gradient_descent, spsa
from .oracle import MissingDataError, oracle_translate
from .persist import DocumentError, document_id, load_translator, save_translator
from .train import (AEConfig, E2EConfig, LatentConfig, closed_form_latent_predictions,
                    ground_sources, train_autoencoder, train_end_to_end, train_latent_map)

__all__ = [
    "Autoencoder", "ConstantTranslator", "EndToEndTranslator", "LatentMapTranslator",
    "NumericError", "OracleTranslator", "TranslationError", "Translator", "apply",
    "LossSpec", "abstract_loss", "loss_abstract", "loss_causation", "loss_correlation",
    "loss_reconstruction", "round_trip_check", "MlpMap", "TrainingError", "grad_check",
    "gradient_descent", "spsa", "MissingDataError", "oracle_translate", "DocumentError",
    "document_id", "load_translator", "save_translator", "AEConfig", "E2EConfig",
    "LatentConfig", "closed_form_latent_predictions", "ground_sources", "train_autoencoder",
    "train_end_to_end", "train_latent_map",
]
