"""Soft-routing loss and the optimization loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.metrics import accuracy_score, f1_score, matthews_corrcoef

from . import autograd as ag
from .autograd import Tensor
from .binarize import Adam, bat_step
from .config import TrainConfig
from .data import batches
from .errors import ConfigError, DataError
from .exits import apply_exit_rule, exit_traces
from .model import BEExformer

log = logging.getLogger(__name__)


def per_exit_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy between integer labels and softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    m = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise DataError(f"labels must lie in [0, {m})")
    picked = ag.log_softmax(logits)[np.arange(len(labels)), labels]
    return -picked.mean()


def soft_routing_loss(exit_logits: dict[int, Tensor], labels) -> tuple[Tensor, list[Tensor]]:
    """Mean of the per-exit losses, plus the per-exit terms themselves."""
    losses = [per_exit_loss(z, labels) for z in exit_logits.values()]
    total = losses[0]
    for term in losses[1:]:
        total = total + term
    return total / len(losses), losses


def score(metric: str, labels, predictions) -> float:
    if metric == "accuracy":
        return float(accuracy_score(labels, predictions))
    if metric == "f1":
        return float(f1_score(labels, predictions, zero_division=0.0))
    if metric == "mcc":
        return float(matthews_corrcoef(labels, predictions))
    raise ConfigError(f"unknown metric {metric!r}")


def predict(model, ids: np.ndarray, delta: float, ctx=None) -> tuple[np.ndarray, np.ndarray]:
    """Early-exit predictions and the 1-based exit block of every sample."""
    entropies, logits = exit_traces(model, ids, ctx)
    pos = apply_exit_rule(entropies, model.config.num_classes, delta)
    chosen = logits[np.arange(len(ids)), pos]
    blocks = np.asarray(model.config.exit_blocks)[pos]
    return chosen.argmax(axis=-1), blocks


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    exit_losses: list[float]
    dev_metric: float
    lr: float
    mean_exit: float = 0.0

    def to_json(self) -> dict:
        return {"kind": "epoch", **asdict(self)}


@dataclass
class TrainResult:
    model: BEExformer
    reports: list[EpochReport]
    steps: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")


def train_step(model: BEExformer, ids, labels, optimizer, lr: float, rng, clamp_eps: float) -> tuple[float, list[float]]:
    model.zero_grad()
    logits = model.forward(ids, training=True, rng=rng)
    loss, per_exit = soft_routing_loss(logits, labels)
    ag.backward(loss)
    emb = model.fp["embedding"]
    emb.grad[0] = 0.0  # pad row stays zero
    optimizer.step(model.fp_tensors(), lr)
    bat_step(model.latent_parameters(), optimizer, lr, clamp_eps)
    return loss.item(), [t.item() for t in per_exit]


def train(model: BEExformer, train_ids: np.ndarray, train_labels: np.ndarray,
          dev_ids: np.ndarray, dev_labels: np.ndarray, cfg: TrainConfig,
          log_path=None) -> TrainResult:
    """Adam with plateau decay and early stopping; restores the best-dev weights."""
    if len(train_ids) == 0:
        raise ConfigError("training set is empty")
    if len(dev_ids) == 0:
        raise ConfigError("dev set is empty")
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(cfg.beta1, cfg.beta2, cfg.adam_eps)
    lr = cfg.lr
    result = TrainResult(model, [])
    best_state = model.state_dict()
    stale = 0
    sink = Path(log_path).open("w", encoding="utf-8") if log_path else None
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            losses, exit_sums = [], None
            for idx in batches(len(train_ids), cfg.batch_size, rng):
                loss, per_exit = train_step(model, train_ids[idx], train_labels[idx], optimizer, lr, rng, cfg.clamp_eps)
                step += 1
                record = {"kind": "step", "step": step, "epoch": epoch, "loss": loss, "exit_losses": per_exit}
                result.steps.append(record)
                if sink:
                    sink.write(json.dumps(record) + "\n")
                losses.append(loss)
                exit_sums = np.array(per_exit) if exit_sums is None else exit_sums + per_exit

            preds, exits = predict(model, dev_ids, cfg.delta)
            metric = score(cfg.metric, dev_labels, preds)
            report = EpochReport(epoch, float(np.mean(losses)), (exit_sums / len(losses)).tolist(),
                                 metric, lr, float(exits.mean()))
            result.reports.append(report)
            if sink:
                sink.write(json.dumps(report.to_json()) + "\n")
                sink.flush()
            log.info("epoch %d loss %.4f dev %s %.4f lr %.2e", epoch, report.train_loss, cfg.metric, metric, lr)

            if metric > result.best_metric:
                result.best_metric, result.best_epoch = metric, epoch
                best_state = model.state_dict()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
                if stale % cfg.plateau_patience == 0:
                    lr = max(lr * cfg.lr_decay, cfg.lr_min)
    finally:
        if sink:
            sink.close()
    model.load_state_dict(best_state)
    return result
