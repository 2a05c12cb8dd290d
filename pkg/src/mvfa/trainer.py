"""Training loop, evaluation, and the attention-mask ablation helper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import BackboneConfig
from .config import TrainConfig
from .data import Split
from .errors import MvfaError
from .model import Model
from .optim import Adam

PAD = 4  # pad-crop augmentation margin (64 -> 72 -> 64 at the default size)


@dataclass
class MetricsRow:
    iteration: int
    train_loss: float
    val_acc: float


def total_loss(model: Model, images: np.ndarray, labels: np.ndarray,
               rng: np.random.Generator | None = None,
               training: bool = False) -> Tensor:
    """Batch-mean combined loss for the model's mode (see ``Model.loss``)."""
    return model.loss(images, labels, rng=rng, training=training)


def attention_mask(attention: np.ndarray, eta: float) -> np.ndarray:
    """Steepened sigmoid mapping an attention map into (0, 2)."""
    if eta <= 0:
        raise MvfaError(f"eta must be positive, got {eta}")
    x = eta * np.asarray(attention, dtype=np.float64)
    return 1.0 + np.tanh(x / 2.0)  # = 2·sigmoid(x), overflow-free


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random horizontal flip (p=0.5) plus reflect-pad-and-crop jitter."""
    n, h, w, _ = images.shape
    out = images.copy()
    flips = rng.random(n) < 0.5
    out[flips] = out[flips, :, ::-1]
    padded = np.pad(out, ((0, 0), (PAD, PAD), (PAD, PAD), (0, 0)),
                    mode="reflect")
    offsets = rng.integers(0, 2 * PAD + 1, size=(n, 2))
    for i, (dy, dx) in enumerate(offsets):
        out[i] = padded[i, dy:dy + h, dx:dx + w]
    return out


def evaluate(model: Model, split: Split, batch_size: int = 64) -> float:
    """Fraction of samples whose (ensembled) prediction matches the label."""
    if len(split) == 0:
        raise MvfaError("evaluate: empty dataset")
    hits = 0
    for start in range(0, len(split), batch_size):
        images = split.images[start:start + batch_size]
        labels = split.labels[start:start + batch_size]
        predicted, _ = model.predict(images)
        hits += int((predicted == labels).sum())
    return hits / len(split)


def _probe_loss(model: Model, split: Split, batch_size: int) -> float:
    probe = slice(0, min(batch_size, len(split)))
    loss = model.loss(split.images[probe], split.labels[probe],
                     training=False)
    return loss.item()


def train(config: TrainConfig, backbone_config: BackboneConfig,
          train_split: Split, val_split: Split):
    """Train a model from scratch; returns ``(model, metrics_rows)``.

    Fully deterministic for a given config: one seeded stream drives
    initialization, batch sampling, augmentation, and dropout, in that
    order, and evaluation consumes no randomness.
    """
    num_classes = int(train_split.labels.max()) + 1
    init_seq, loop_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = Model(config, backbone_config, num_classes,
                  np.random.default_rng(init_seq))
    rng = np.random.default_rng(loop_seq)
    optimizer = Adam(model.params, lr=config.lr)

    metrics = [MetricsRow(0, _probe_loss(model, train_split, config.batch_size),
                          evaluate(model, val_split))]
    n = len(train_split)
    for it in range(1, config.iterations + 1):
        idx = rng.choice(n, size=min(config.batch_size, n), replace=False)
        images = augment_batch(train_split.images[idx], rng)
        loss = model.loss(images, train_split.labels[idx], rng=rng,
                          training=True)
        if not np.isfinite(loss.data):
            raise MvfaError(f"training diverged: non-finite loss at iteration {it}")
        optimizer.zero_grad()
        ad.backward(loss)
        optimizer.step()
        if it % config.eval_every == 0 or it == config.iterations:
            metrics.append(MetricsRow(it, loss.item(),
                                      evaluate(model, val_split)))
    return model, metrics


def metrics_to_csv(rows) -> str:
    lines = ["iter,train_loss,val_acc"]
    for row in rows:
        lines.append(f"{row.iteration},{row.train_loss:.9g},{row.val_acc:.9g}")
    return "\n".join(lines) + "\n"
