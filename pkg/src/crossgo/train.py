"""Supervised training over compiled shards, plus the accuracy harness.

Schedule: vanilla SGD at lr0 = 0.001 by default, halved every epoch. The
loss is softmax cross-entropy over all 361 points; legality filtering
happens at inference time only. Runs are bit-deterministic for a fixed
seed: the per-epoch shuffle derives from (shuffle_seed, epoch), batches are
visited in shuffle order, and gradient accumulation order is fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import features as ft
from . import model as modellib
from . import nn
from .shards import ShardDataset


@dataclass
class TrainConfig:
    lr0: float = 0.001
    decay_per_epoch: float = 0.5
    epochs: int = 1
    batch_size: int = 16
    shuffle_seed: int = 0
    width_multiplier: float = 1.0
    symmetry_augment: bool = False
    log_every: int = 10

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay_per_epoch <= 1:
            raise ValueError("decay_per_epoch must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("bad batch_size or epochs")


@dataclass
class EvalReport:
    topk: dict[int, float]
    loss: float
    examples_seen: int

    @property
    def top1(self) -> float:
        return self.topk[1]


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    return config.lr0 * config.decay_per_epoch**epoch


def _augment_batch(feats, labels, rng):
    syms = rng.integers(0, ft.NUM_SYMMETRIES, size=len(labels))
    for i, sym in enumerate(syms):
        if sym == 0:
            continue
        feats[i] = ft.transform_planes(feats[i], int(sym))
        point = ft.transform_coord(
            divmod(int(labels[i]), 19), int(sym)
        )
        labels[i] = point[0] * 19 + point[1]
    return feats, labels


def train(
    net: modellib.PolicyNet,
    dataset: ShardDataset,
    config: TrainConfig,
    out_dir=None,
    epoch_callback=None,
) -> tuple[modellib.PolicyNet, dict]:
    """Minibatch SGD in place over ``net``. Returns the net and a history
    dict with per-``log_every``-step mean losses and per-epoch stats.

    ``epoch_callback(net, epoch, history)`` may return True to stop early
    (used by capacity checks that train to a target accuracy).
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    history = {"config": asdict(config), "steps": [], "epochs": []}
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    step = 0
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        order = np.random.default_rng((config.shuffle_seed, epoch)).permutation(
            len(dataset)
        )
        aug_rng = np.random.default_rng((config.shuffle_seed, epoch, 1))
        window: list[float] = []
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            feats, labels = dataset.batch(idx)
            if config.symmetry_augment:
                feats, labels = _augment_batch(feats, labels, aug_rng)
            tape: list = []
            out = net.forward(feats, tape)
            scores = out.reshape(len(idx), -1)
            loss, grad = nn.softmax_cross_entropy_batch(scores, labels)
            net.zero_grads()
            net.backward(grad.reshape(out.shape), tape)
            nn.sgd_step(net.parameters(), net.gradients(), lr)
            step += 1
            window.append(loss)
            epoch_losses.append(loss)
            if step % config.log_every == 0:
                history["steps"].append(
                    {
                        "step": step,
                        "epoch": epoch,
                        "lr": lr,
                        "loss": float(np.mean(window)),
                    }
                )
                window = []
        history["epochs"].append(
            {
                "epoch": epoch,
                "lr": lr,
                "steps": step,
                "mean_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
            }
        )
        if out_dir is not None:
            net.save(out_dir / f"checkpoint-epoch-{epoch + 1:03d}.ckpt")
        if epoch_callback is not None and epoch_callback(net, epoch, history):
            break
    if out_dir is not None:
        (out_dir / "history.json").write_text(json.dumps(history, indent=2) + "\n")
    return net, history


def evaluate(
    net,
    dataset: ShardDataset,
    k_list: tuple[int, ...] = (1, 5, 10),
    symmetries: tuple[int, ...] = modellib.ALL_SYMMETRIES,
    batch_size: int = 16,
    limit: int | None = None,
    indices=None,
) -> EvalReport:
    """Top-k accuracy: a hit when the true label ranks among the k most
    probable legal moves under the symmetry ensemble. The reported loss is
    the training-style cross-entropy over all points."""
    if indices is None:
        count = len(dataset) if limit is None else min(limit, len(dataset))
        indices = np.arange(count)
    else:
        indices = np.asarray(indices)
    if indices.size == 0:
        raise ValueError("nothing to evaluate")
    hits = {k: 0 for k in k_list}
    losses = []
    for start in range(0, indices.size, batch_size):
        idx = indices[start : start + batch_size]
        feats, labels = dataset.batch(idx)
        scores = modellib.ensemble_scores_batch(net, feats, symmetries)
        flat = scores.reshape(len(idx), -1)
        loss, _ = nn.softmax_cross_entropy_batch(
            flat.astype(np.float32), labels
        )
        losses.append(loss * len(idx))
        legal = feats[:, ft.PLANE_LEGAL].reshape(len(idx), -1) > 0
        for row in range(len(idx)):
            label = int(labels[row])
            score_row = flat[row]
            mask = legal[row]
            # rank among legal points, ties to the smaller index (the same
            # order top_k uses)
            better = mask & (
                (score_row > score_row[label])
                | ((score_row == score_row[label]) & (np.arange(361) < label))
            )
            rank = int(better.sum())  # 0-based
            for k in k_list:
                if rank < k and mask[label]:
                    hits[k] += 1
    n = int(indices.size)
    return EvalReport(
        topk={k: hits[k] / n for k in k_list},
        loss=float(np.sum(losses) / n),
        examples_seen=n,
    )
