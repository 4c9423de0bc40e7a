"""Pretraining on dense maps and single-step test-time adaptation on sparse streams."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidValueError, NumericError
from .masking import SampleSet, grid_candidates, mask_generate
from .model import Params, PiTConfig, _nonfinite_groups, forward, loss_and_grad, rmse_loss
from .optim import OptimState, adam_update, cosine_rate, sgd_update

log = logging.getLogger(__name__)

PRETRAIN_KNOWN = 50
PRETRAIN_QUERY = 1500


@dataclass(frozen=True)
class TtaConfig:
    lr: float = 5e-6
    steps_per_sample: int = 1
    optimizer: str = "adam"  # or "sgd": theta - lr * grad

    def __post_init__(self):
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise InvalidValueError(f"TTA learning rate must be finite and >= 0, got {self.lr}")
        if self.steps_per_sample < 1:
            raise InvalidValueError("steps_per_sample must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidValueError(f"unknown TTA optimizer {self.optimizer!r}")


def pretrain(params: Params, cfg: PiTConfig, dataset, epochs: int, batch_size: int = 8,
             lr: float = 1e-4, weight_decay: float = 1e-4, seed: int = 0,
             n_known: int = PRETRAIN_KNOWN, n_query: int = PRETRAIN_QUERY,
             on_epoch=None) -> tuple[Params, list[float]]:
    """AdamW with cosine annealing over freshly masked dense maps.

    ``dataset`` holds 2-D arrays (or RadioMaps). Each step draws a new
    known/query mask per map. Returns the trained parameters and the mean
    per-map loss of each epoch, measured as the steps were taken.
    """
    maps = [np.asarray(getattr(m, "values", m)) for m in dataset]
    if not maps:
        raise InvalidValueError("empty pretraining dataset")
    if batch_size < 1:
        raise InvalidValueError("batch_size must be >= 1")
    params = {k: v.copy() for k, v in params.items()}
    if epochs <= 0:
        return params, []
    candidates = [grid_candidates(m) for m in maps]
    rng = np.random.default_rng(seed)
    steps_per_epoch = math.ceil(len(maps) / batch_size)
    total = epochs * steps_per_epoch
    state = OptimState.zeros_like(params)
    history = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(maps))
        loss_sum = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * batch_size:(b + 1) * batch_size]
            batch = []
            for i in idx:
                coords, values = candidates[i]
                batch.append(mask_generate(coords, values, maps[i].shape, n_known, n_query,
                                           seed=int(rng.integers(2 ** 63))))
            try:
                loss, grads = loss_and_grad(params, cfg, batch)
            except NumericError as exc:
                raise NumericError(str(exc), step=step) from exc
            with np.errstate(over="ignore", invalid="ignore"):
                params, state = adam_update(params, grads, state, cosine_rate(lr, step, total),
                                            weight_decay)
            bad = _nonfinite_groups(params)
            if bad:
                raise NumericError("update produced non-finite parameters", step=step, groups=bad)
            loss_sum += loss * len(idx)
            step += 1
        history.append(loss_sum / len(maps))
        log.info("epoch %d/%d loss %.6f", epoch + 1, epochs, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return params, history


def tta_step(params: Params, state: OptimState, tta: TtaConfig, cfg: PiTConfig,
             sample: SampleSet) -> tuple[Params, OptimState, bool]:
    """Query-point RMSE, one gradient step at the TTA rate.

    Returns ``(params, state, updated)``; a non-finite gradient skips the
    update and reports ``updated=False``.
    """
    for _ in range(tta.steps_per_sample):
        try:
            _, grads = loss_and_grad(params, cfg, [sample])
        except NumericError as exc:
            log.warning("skipping TTA update: %s", exc)
            return params, state, False
        if tta.optimizer == "sgd":
            params = sgd_update(params, grads, tta.lr) if tta.lr else params
        else:
            params, state = adam_update(params, grads, state, tta.lr)
    return params, state, True


@dataclass
class StreamResult:
    predictions: list[np.ndarray]
    rmses: list[float]
    params: Params
    flagged: list[int] = field(default_factory=list)


def adapt_stream(params: Params, cfg: PiTConfig, tta: TtaConfig, samples) -> StreamResult:
    """Predict each sample with the current weights, then adapt on it.

    A sample's score never sees its own update. Adam moments start at zero
    and persist along the stream.
    """
    state = OptimState.zeros_like(params)
    preds, rmses, flagged = [], [], []
    for t, sample in enumerate(samples):
        out = forward(params, cfg, sample)
        preds.append(out)
        rmses.append(rmse_loss(out[:len(sample.query_rc)], sample.query_truth))
        if tta.lr == 0:
            continue
        params, state, ok = tta_step(params, state, tta, cfg, sample)
        if not ok:
            flagged.append(t)
    return StreamResult(preds, rmses, params, flagged)
