"""Joint training of the detection and intensity heads, and evaluation."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import DivergenceDetected, EmptySplit
from .metrics import confusion_matrix, scores
from .model import DhrnModel, Mode, model_backward, model_forward
from .signals import DETECTION_CLASS_NAMES, INTENSITY_CLASS_NAMES, Split
from .swinfft import SpectrumDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    max_epochs: int = 100
    loss_weights: tuple = (1.0, 1.0)  # (detection, intensity)
    early_stop_patience: int = 10
    seed: int = 0
    shuffle: bool = True
    eval_batch_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if len(self.loss_weights) != 2 or min(self.loss_weights) < 0 or sum(self.loss_weights) == 0:
            raise ValueError("loss_weights must be two non-negative numbers, not both zero")
        if not 1 <= self.early_stop_patience <= self.max_epochs:
            raise ValueError("early_stop_patience must lie in [1, max_epochs]")


@dataclass
class EpochRecord:
    epoch: int
    train_loss_a: float
    train_loss_b: float
    val_loss_a: float
    val_loss_b: float
    val_acc_a: float
    val_acc_b: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.records)

    # wall_time is left out of the files so identical runs give identical bytes
    _COLUMNS = ["epoch", "train_loss_a", "train_loss_b", "val_loss_a", "val_loss_b", "val_acc_a", "val_acc_b"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self._COLUMNS)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in self._COLUMNS[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        recs = [{c: getattr(r, c) for c in self._COLUMNS} for r in self.records]
        return json.dumps({"best_epoch": self.best_epoch, "stopped_early": self.stopped_early,
                           "epochs": recs}, indent=2) + "\n"


def _batch(ds: SpectrumDataset, idx, dtype):
    return ds.spectra[idx][:, None, :].astype(dtype, copy=False)


def predict(model: DhrnModel, ds: SpectrumDataset, batch_size: int = 64):
    """Eval-mode logits for a whole split: (intensity (n, 4), detection (n, 2))."""
    outs_b, outs_a = [], []
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        lb, la, _ = model_forward(model, _batch(ds, idx, model.dtype), Mode.EVAL)
        outs_b.append(lb)
        outs_a.append(la)
    return np.concatenate(outs_b), np.concatenate(outs_a)


def _split_losses(model, ds, batch_size):
    lb, la = predict(model, ds, batch_size)
    loss_b, _ = nn.cross_entropy(lb.astype(np.float64), ds.intensity)
    loss_a, _ = nn.cross_entropy(la.astype(np.float64), ds.detection)
    acc_b = float(np.mean(lb.argmax(axis=1) == ds.intensity))
    acc_a = float(np.mean(la.argmax(axis=1) == ds.detection))
    return loss_a, loss_b, acc_a, acc_b


def train_step(model: DhrnModel, x, y_intensity, y_detection, state: nn.AdamState, loss_weights=(1.0, 1.0)):
    """One forward/backward pass and a single Adam step on the weighted loss sum.

    Returns (loss_detection, loss_intensity).
    """
    w_a, w_b = loss_weights
    lb, la, cache = model_forward(model, x, Mode.TRAIN)
    loss_b, g_b = nn.cross_entropy(lb, y_intensity)
    loss_a, g_a = nn.cross_entropy(la, y_detection)
    grads = model_backward(model, cache, w_b * g_b, w_a * g_a)
    nn.adam_step(model.parameters(), grads, state)
    model.version += 1
    return loss_a, loss_b


def train(model: DhrnModel, datasets: dict, cfg: TrainConfig = TrainConfig(), on_step=None):
    """Train in place; on return ``model`` holds the best-validation weights.

    ``on_step(epoch, batch, loss_a, loss_b)`` is called after every update.
    Returns (model, TrainHistory).
    """
    tr, va = datasets.get(Split.TRAIN), datasets.get(Split.VAL)
    if tr is None or len(tr) == 0:
        raise EmptySplit("training split is empty")
    if va is None or len(va) == 0:
        raise EmptySplit("validation split is empty")

    state = nn.AdamState(lr=cfg.learning_rate)
    history = TrainHistory()
    best_loss = math.inf
    best_state = model.snapshot()
    n = len(tr)
    y_b_all, y_a_all = tr.intensity, tr.detection
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n) if cfg.shuffle else np.arange(n)
        sum_a = sum_b = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            loss_a, loss_b = train_step(model, _batch(tr, idx, model.dtype), y_b_all[idx], y_a_all[idx],
                                        state, cfg.loss_weights)
            if not (math.isfinite(loss_a) and math.isfinite(loss_b)):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch} batch {b}", batch_index=b)
            if on_step is not None:
                on_step(epoch, b, loss_a, loss_b)
            sum_a += loss_a * len(idx)
            sum_b += loss_b * len(idx)

        val_a, val_b, acc_a, acc_b = _split_losses(model, va, cfg.eval_batch_size)
        rec = EpochRecord(epoch, sum_a / n, sum_b / n, val_a, val_b, acc_a, acc_b, time.perf_counter() - t0)
        history.records.append(rec)
        log.info("epoch=%d loss_a=%.6f loss_b=%.6f val_acc_a=%.4f val_acc_b=%.4f",
                 epoch, rec.train_loss_a, rec.train_loss_b, acc_a, acc_b)

        combined = val_a + val_b
        if not math.isfinite(combined):
            raise DivergenceDetected(f"non-finite validation loss at epoch {epoch}")
        if combined < best_loss:
            best_loss = combined
            history.best_epoch = epoch
            best_state = model.snapshot()
        elif epoch - history.best_epoch >= cfg.early_stop_patience:
            history.stopped_early = True
            break

    model.load_state(best_state)
    return model, history


def evaluate(model: DhrnModel, ds: SpectrumDataset, batch_size: int = 64) -> dict:
    """Window-level scores for both tasks."""
    if len(ds) == 0:
        raise EmptySplit("nothing to evaluate")
    lb, la = predict(model, ds, batch_size)
    pred_b = lb.argmax(axis=1)
    pred_a = la.argmax(axis=1)
    cm_b = confusion_matrix(pred_b, ds.intensity, 4, INTENSITY_CLASS_NAMES)
    cm_a = confusion_matrix(pred_a, ds.detection, 2, DETECTION_CLASS_NAMES)
    return {
        "confusion": {"detection": cm_a, "intensity": cm_b},
        "scores": {"detection": scores(cm_a), "intensity": scores(cm_b)},
        "predictions": {"detection": pred_a, "intensity": pred_b},
    }


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["loss_weights"] = list(cfg.loss_weights)
    return d
