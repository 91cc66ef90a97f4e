"""Training loop, evaluation, and score-averaging ensemble for the toy net.

SGD with Nesterov momentum in the lookahead form:

    v <- mu * v + g
    w <- w - lr * (g + mu * v)

with the learning rate stepped down by a fixed factor at the configured
epochs. Batch order is a seeded shuffle per epoch, so a full run is a pure
function of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SyntheticMotionDataset, shuffled_indices
from .model import ToyMSNet, ToyNetConfig
from .ops import softmax, softmax_cross_entropy
from .tensor import Rng


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.01
    decay_epochs: tuple = (15, 25)
    decay_factor: float = 0.1
    momentum: float = 0.9
    seed: int = 0


def temporal_average(logits: np.ndarray):
    """(N, T, K) -> (N, K) mean over frames, with VJP."""
    t = logits.shape[1]
    y = logits.mean(axis=1)

    def vjp(dy):
        return (np.broadcast_to(dy[:, None], logits.shape).astype(logits.dtype) / t,)

    return y, vjp


def sgd_nesterov_step(params: dict, grads: dict, velocity: dict,
                      lr: float, momentum: float):
    """In-place lookahead Nesterov update of every parameter tensor."""
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"grad shape mismatch for {name}: {g.shape} vs {w.shape}")
        v = velocity[name]
        v *= momentum
        v += g
        w -= (lr * (g + momentum * v)).astype(w.dtype)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    drops = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return cfg.lr * (cfg.decay_factor ** drops)


def evaluate(model: ToyMSNet, clips: np.ndarray, labels: np.ndarray,
             batch_size: int = 64) -> float:
    """Fraction of clips whose temporally averaged logits argmax to the
    label (ties resolve to the first index)."""
    correct = 0
    for i in range(0, len(clips), batch_size):
        logits = model.forward(clips[i:i + batch_size], train=False)
        avg, _ = temporal_average(logits)
        correct += int((avg.argmax(axis=1) == labels[i:i + batch_size]).sum())
    return correct / len(clips)


CSV_HEADER = "epoch,loss,train_acc,test_acc"


def train(net_cfg: ToyNetConfig, data: SyntheticMotionDataset,
          tcfg: TrainConfig, log=None):
    """Train a fresh model; returns (model, metric rows, csv text)."""
    model = ToyMSNet(net_cfg)
    params = model.trainable()
    grads = model.grads()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n_train = len(data.train_clips)
    rows = []
    for epoch in range(tcfg.epochs):
        lr = lr_at_epoch(tcfg, epoch)
        order = shuffled_indices(Rng((tcfg.seed << 20) ^ (epoch + 1)), n_train)
        loss_sum, seen, correct = 0.0, 0, 0
        for i in range(0, n_train, tcfg.batch_size):
            idx = order[i:i + tcfg.batch_size]
            clips = data.train_clips[idx]
            labels = data.train_labels[idx]
            logits = model.forward(clips, train=True)
            avg, avg_vjp = temporal_average(logits)
            loss, davg = softmax_cross_entropy(avg, labels)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {i // tcfg.batch_size}")
            model.zero_grad()
            (dlogits,) = avg_vjp(davg)
            model.backward(dlogits)
            sgd_nesterov_step(params, grads, velocity, lr, tcfg.momentum)
            loss_sum += loss * len(idx)
            correct += int((avg.argmax(axis=1) == labels).sum())
            seen += len(idx)
        train_loss = loss_sum / seen
        train_acc = correct / seen
        test_acc = evaluate(model, data.test_clips, data.test_labels)
        rows.append((epoch, train_loss, train_acc, test_acc))
        if log is not None:
            log(f"epoch {epoch}: loss={train_loss:.4f} "
                f"train_acc={train_acc:.4f} test_acc={test_acc:.4f} lr={lr:g}")
    csv = "\n".join([CSV_HEADER] + [
        f"{e},{l:.6f},{ta:.4f},{va:.4f}" for e, l, ta, va in rows]) + "\n"
    return model, rows, csv


def ensemble_predict(models: list, clip: np.ndarray) -> np.ndarray:
    """Mean of per-model softmax scores for one clip (T, C, S, S) -> (K,)."""
    if not models:
        raise ValueError("need at least one model")
    classes = {m.cfg.classes for m in models}
    if len(classes) != 1:
        raise ValueError(f"models disagree on class count: {sorted(classes)}")
    scores = []
    for m in models:
        logits = m.forward(clip[None], train=False)
        avg, _ = temporal_average(logits)
        scores.append(softmax(avg[0]))
    return np.mean(scores, axis=0)
