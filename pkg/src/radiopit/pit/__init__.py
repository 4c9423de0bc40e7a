"""Pixel-transformer model, training and test-time adaptation."""
from .checkpoint import load_weights, save_weights
from .masking import SampleSet, grid_candidates, mask_generate, split_counts
from .model import (PiTConfig, attention_maps, forward, grad, init_weights, loss_and_grad,
                    param_shapes, position_encode, predict_dense, rmse_loss, value_encode)
from .optim import OptimState, adam_update, cosine_rate, sgd_update
from .train import StreamResult, TtaConfig, adapt_stream, pretrain, tta_step

__all__ = [
    "PiTConfig", "SampleSet", "TtaConfig", "OptimState", "StreamResult",
    "adam_update", "adapt_stream", "attention_maps", "cosine_rate", "forward", "grad",
    "grid_candidates", "init_weights", "load_weights", "loss_and_grad", "mask_generate",
    "param_shapes", "position_encode", "predict_dense", "pretrain", "rmse_loss", "save_weights",
    "sgd_update", "split_counts", "tta_step", "value_encode",
]
