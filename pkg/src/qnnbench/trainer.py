"""QAT training loop: Adam, cross-entropy, multi-step LR, checkpoint/resume.

The whole loop is deterministic for a fixed seed: shuffling and dropout pull
from one Rng stream whose state is checkpointed, so a resumed run replays
the exact batch and mask sequence of an uninterrupted one.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import container, datasets, model
from .errors import DivergedError, FormatError, ShapeError
from .numerics import Rng

ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOG_COLUMNS = ("epoch", "lr", "train_loss", "test_error", "seconds")


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.01
    beta1: float = 0.9
    milestones: tuple = (90, 95)
    gamma: float = 0.1
    batch_size: int = 100
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {self.milestones}")
        # milestones at or past the horizon never fire; drop them so short
        # desk-scale runs can keep the default schedule
        self.milestones = tuple(m for m in self.milestones if m < self.epochs)


@dataclass
class TrainLog:
    epoch: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_error: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, epoch, lr, train_loss, test_error, seconds):
        self.epoch.append(int(epoch))
        self.lr.append(float(lr))
        self.train_loss.append(float(train_loss))
        self.test_error.append(float(test_error))
        self.seconds.append(float(seconds))

    def __len__(self):
        return len(self.epoch)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log softmax likelihood and its logit gradient.

    Stabilized by per-row max subtraction; gradient is (softmax - onehot)/n.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0,{c})")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    softmax = ez / denom
    rows = np.arange(n)
    log_lik = z[rows, labels] - np.log(denom[:, 0])
    loss = -log_lik.mean()
    grad = softmax.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / n


def adam_init(params: dict[str, np.ndarray]) -> dict:
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(params: dict, grads: dict, state: dict, lr: float, beta1: float = 0.9) -> None:
    """In-place Adam update with bias correction (beta2/eps fixed module-wide)."""
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for name in sorted(grads):
        g = grads[name]
        m = state["m"][name] = beta1 * state["m"][name] + (1.0 - beta1) * g
        v = state["v"][name] = ADAM_BETA2 * state["v"][name] + (1.0 - ADAM_BETA2) * g * g
        params[name] = params[name] - lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for a 0-based epoch: lr * gamma^(#milestones <= epoch).

    Applied as one multiply per passed milestone, matching how a stepped
    scheduler actually mutates the rate.
    """
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0,{cfg.epochs})")
    lr = cfg.lr
    for m in cfg.milestones:
        if m <= epoch:
            lr *= cfg.gamma
    return lr


def evaluate(net: model.NetworkSpec, data, chunk: int = 2000) -> float:
    """Error rate percent over the test split (argmax classification)."""
    if isinstance(data, datasets.DatasetHandle):
        images, labels = data.test_images, data.test_labels
    else:
        images, labels = data
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty test set")
    wrong = 0
    for start in range(0, n, chunk):
        x = datasets.normalize(images[start : start + chunk]).reshape(-1, images.shape[-1] * images.shape[-2])
        logits = model.forward(net, x, mode="eval")
        wrong += int(np.sum(np.argmax(logits, axis=1) != labels[start : start + chunk]))
    return 100.0 * wrong / n


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(path, net, cfg: TrainConfig, epoch_done: int, adam_state, rng: Rng, log: TrainLog) -> None:
    pairs = model.model_manifest_pairs(net)
    pairs["kind"] = "checkpoint"
    pairs["epoch"] = str(epoch_done)
    pairs["adam.t"] = str(adam_state["t"])
    seed, counter = rng.state()
    pairs["rng.seed"] = str(seed)
    pairs["rng.counter"] = str(counter)
    pairs["cfg.lr"] = container.format_float(cfg.lr)
    pairs["cfg.beta1"] = container.format_float(cfg.beta1)
    pairs["cfg.gamma"] = container.format_float(cfg.gamma)
    pairs["cfg.batch_size"] = str(cfg.batch_size)
    pairs["cfg.milestones"] = ",".join(str(m) for m in cfg.milestones)
    pairs["cfg.seed"] = str(cfg.seed)
    arrays = dict(net.params)
    for name in net.params:
        arrays[f"adam.m.{name}"] = adam_state["m"][name]
        arrays[f"adam.v.{name}"] = adam_state["v"][name]
    arrays["history.epoch"] = np.asarray(log.epoch, dtype=np.float64)
    arrays["history.lr"] = np.asarray(log.lr, dtype=np.float64)
    arrays["history.train_loss"] = np.asarray(log.train_loss, dtype=np.float64)
    arrays["history.test_error"] = np.asarray(log.test_error, dtype=np.float64)
    arrays["history.seconds"] = np.asarray(log.seconds, dtype=np.float64)
    container.save_container(path, pairs, arrays)


def load_checkpoint(path):
    """-> (net, cfg, epoch_done, adam_state, rng, log)."""
    manifest = container.load_container(path)
    if manifest.get("kind") != "checkpoint":
        raise FormatError(f"{path} is not a checkpoint (kind={manifest.get('kind')!r})")
    net = model.network_from_manifest(manifest)
    cfg_fields = {
        "lr": float(manifest.require("cfg.lr")),
        "beta1": float(manifest.require("cfg.beta1")),
        "gamma": float(manifest.require("cfg.gamma")),
        "batch_size": int(manifest.require("cfg.batch_size")),
        "seed": int(manifest.require("cfg.seed")),
        "milestones": tuple(
            int(m) for m in manifest.require("cfg.milestones").split(",") if m
        ),
    }
    epoch_done = int(manifest.require("epoch"))
    adam_state = {
        "t": int(manifest.require("adam.t")),
        "m": {k: manifest.arrays[f"adam.m.{k}"] for k in net.params},
        "v": {k: manifest.arrays[f"adam.v.{k}"] for k in net.params},
    }
    for moments in (adam_state["m"], adam_state["v"]):
        for k in net.params:
            moments[k] = moments[k].reshape(net.params[k].shape)
    rng = Rng.from_state((int(manifest.require("rng.seed")), int(manifest.require("rng.counter"))))
    log = TrainLog(
        epoch=[int(e) for e in manifest.arrays["history.epoch"]],
        lr=list(manifest.arrays["history.lr"]),
        train_loss=list(manifest.arrays["history.train_loss"]),
        test_error=list(manifest.arrays["history.test_error"]),
        seconds=list(manifest.arrays["history.seconds"]),
    )
    return net, cfg_fields, epoch_done, adam_state, rng, log


def _append_log_rows(log_path, log: TrainLog, start_index: int) -> None:
    new_file = not os.path.exists(log_path)
    with open(log_path, "a", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(LOG_COLUMNS)
        for i in range(start_index, len(log)):
            writer.writerow(
                [
                    log.epoch[i],
                    container.format_float(log.lr[i]),
                    container.format_float(log.train_loss[i]),
                    container.format_float(log.test_error[i]),
                    container.format_float(log.seconds[i]),
                ]
            )


def train(
    net: model.NetworkSpec,
    data: datasets.DatasetHandle,
    cfg: TrainConfig,
    checkpoint_path=None,
    resume_from=None,
    log_path=None,
    on_epoch=None,
):
    """Run (or continue) the Table-I recipe; returns (net, TrainLog).

    A checkpoint is written after every epoch when checkpoint_path is given.
    resume_from restores parameters, optimizer moments, rng state and metric
    history, then continues to cfg.epochs; hyperparameters must match the
    checkpointed ones. Non-finite losses abort with the failing epoch.
    """
    if data.n_train == 0:
        raise ValueError("empty training split")
    if resume_from is not None:
        net, ck_cfg, start_epoch, adam_state, rng, log = load_checkpoint(resume_from)
        current = {
            "lr": cfg.lr,
            "beta1": cfg.beta1,
            "gamma": cfg.gamma,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "milestones": cfg.milestones,
        }
        if current != ck_cfg:
            raise ValueError(f"resume config mismatch: checkpoint {ck_cfg} vs requested {current}")
    else:
        start_epoch = 0
        adam_state = adam_init(net.params)
        rng = Rng(cfg.seed)
        log = TrainLog()

    flat_dim = data.train_images.shape[-1] * data.train_images.shape[-2]
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.monotonic()
        lr = lr_at(epoch, cfg)
        loss_sum = 0.0
        for x, y in datasets.batches(data.train_images.reshape(-1, flat_dim), data.train_labels, cfg.batch_size, rng):
            logits, caches, _ = model.run_forward(net, x, mode="train", rng=rng, want_cache=True)
            loss, grad_logits = cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise DivergedError(epoch=epoch + 1, loss=float(loss))
            loss_sum += loss * len(y)
            grads = model.run_backward(net, caches, grad_logits)
            adam_step(net.params, grads, adam_state, lr, beta1=cfg.beta1)
        train_loss = loss_sum / data.n_train
        test_error = evaluate(net, data)
        log.append(epoch + 1, lr, train_loss, test_error, time.monotonic() - t0)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, net, cfg, epoch + 1, adam_state, rng, log)
        if log_path is not None:
            _append_log_rows(log_path, log, len(log) - 1)
        if on_epoch is not None:
            on_epoch(epoch + 1, net, log)
    return net, log
