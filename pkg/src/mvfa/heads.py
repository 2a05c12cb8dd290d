"""Main classifier heads over pooled feature vectors, and their losses.

Three families: a single-FC softmax head, deeper MLP heads with dropout,
and prototype heads classifying by squared distance to one learnable
prototype per class.  All losses are graph tensors so they train end to
end through the region pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import MvfaError, ShapeError

# hidden widths of the MLP head variants; each hidden FC is followed by
# relu and dropout(0.5), then a final FC to the class count
MLP_SPECS = {
    "cls1": (256,),
    "cls2": (256, 128),
    "cls3": (256, 128, 128),
    "cls4": (256, 256, 128, 128),
}
MLP_DROPOUT = 0.5


@dataclass
class Prediction:
    """Predicted class plus the per-class aggregate it was read from."""

    label: int
    scores: np.ndarray


def _he_fc(cin: int, cout: int, rng: np.random.Generator):
    w = rng.standard_normal((cin, cout)) * np.sqrt(2.0 / cin)
    return Tensor(w, requires_grad=True), Tensor(np.zeros(cout), requires_grad=True)


class SoftmaxHead:
    """Single FC layer producing class logits."""

    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b

    @classmethod
    def create(cls, cin: int, num_classes: int, rng: np.random.Generator):
        return cls(*_he_fc(cin, num_classes, rng))

    @property
    def num_classes(self) -> int:
        return self.w.shape[1]

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def logits(self, feats: Tensor, training: bool = False,
               rng=None) -> Tensor:
        return ad.matmul(feats, self.w) + self.b


class MlpHead:
    """FC stack with relu + dropout between layers (see ``MLP_SPECS``)."""

    def __init__(self, layers, dropout_rate: float = MLP_DROPOUT):
        self.layers = layers  # list of (w, b) Tensor pairs
        self.dropout_rate = dropout_rate

    @classmethod
    def create(cls, kind: str, cin: int, num_classes: int,
               rng: np.random.Generator, dropout_rate: float = MLP_DROPOUT):
        if kind not in MLP_SPECS:
            raise MvfaError(f"unknown MLP head kind {kind!r}")
        widths = (*MLP_SPECS[kind], num_classes)
        layers = []
        prev = cin
        for width in widths:
            layers.append(_he_fc(prev, width, rng))
            prev = width
        return cls(layers, dropout_rate)

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[1]

    def named_params(self, prefix: str) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}.fc{i}.w"] = w
            out[f"{prefix}.fc{i}.b"] = b
        return out

    def logits(self, feats: Tensor, training: bool = False,
               rng=None) -> Tensor:
        x = feats
        for w, b in self.layers[:-1]:
            x = ad.relu(ad.matmul(x, w) + b)
            x = ad.dropout(x, self.dropout_rate, rng, training)
        w, b = self.layers[-1]
        return ad.matmul(x, w) + b


class PrototypeBank:
    """One learnable prototype vector per class, shape (C, L)."""

    def __init__(self, prototypes: Tensor):
        if prototypes.ndim != 2:
            raise ShapeError(f"prototypes must be (C, L), got {prototypes.shape}")
        self.prototypes = prototypes

    @classmethod
    def create(cls, num_classes: int, dim: int, rng: np.random.Generator,
               scale: float = 0.1):
        return cls(Tensor(rng.standard_normal((num_classes, dim)) * scale,
                          requires_grad=True))

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]


class ProtoHead:
    """FC projection into prototype space plus the prototype bank."""

    def __init__(self, w: Tensor, b: Tensor, bank: PrototypeBank):
        self.w = w
        self.b = b
        self.bank = bank

    @classmethod
    def create(cls, cin: int, num_classes: int, dim: int,
               rng: np.random.Generator):
        w, b = _he_fc(cin, dim, rng)
        return cls(w, b, PrototypeBank.create(num_classes, dim, rng))

    @property
    def num_classes(self) -> int:
        return self.bank.num_classes

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b,
                f"{prefix}.prototypes": self.bank.prototypes}

    def project(self, feats: Tensor) -> Tensor:
        return ad.matmul(feats, self.w) + self.b


# ---------------------------------------------------------------------------
# softmax-head losses and ensemble inference


def _check_onehot(onehot: np.ndarray) -> np.ndarray:
    onehot = np.asarray(onehot, dtype=np.float64)
    if onehot.ndim != 1 or not (np.isin(onehot, (0.0, 1.0)).all()
                                and onehot.sum() == 1.0):
        raise MvfaError("label vector must be one-hot")
    return onehot


def views_cross_entropy(logits: Tensor, onehot_rows: np.ndarray) -> Tensor:
    """Sum of softmax cross-entropies over the rows of ``logits``."""
    probs = ad.softmax(logits, axis=-1)
    return ad.neg(ad.tsum(ad.mul(Tensor(onehot_rows), ad.log(probs))))


def local_loss(features: Tensor, head, onehot: np.ndarray,
               training: bool = False, rng=None) -> Tensor:
    """Summed (not averaged) cross-entropy over every sampled view."""
    onehot = _check_onehot(onehot)
    if features.shape[0] == 0:
        raise MvfaError("local_loss: empty feature set")
    logits = head.logits(features, training=training, rng=rng)
    rows = np.broadcast_to(onehot, logits.shape)
    return views_cross_entropy(logits, rows)


def ensemble_predict(view_logits) -> Prediction:
    """Argmax of the coordinate-wise sum of per-view pre-softmax logits."""
    try:
        arr = np.asarray(view_logits, dtype=np.float64)
    except ValueError:
        raise ShapeError("ensemble_predict: view logit lengths differ")
    if arr.size == 0:
        raise MvfaError("ensemble_predict: no views")
    if arr.ndim != 2:
        raise ShapeError("ensemble_predict: view logit lengths differ")
    totals = arr.sum(axis=0)
    return Prediction(label=int(np.argmax(totals)), scores=totals)


# ---------------------------------------------------------------------------
# prototype losses (batched over views)


def _squared_distances(vecs: Tensor, prototypes: Tensor) -> Tensor:
    """Pairwise ||v_i - m_j||² as an (M, C) graph tensor."""
    v2 = ad.tsum(ad.mul(vecs, vecs), axis=1, keepdims=True)          # (M, 1)
    p2 = ad.reshape(ad.tsum(ad.mul(prototypes, prototypes), axis=1), (1, -1))
    cross = ad.matmul(vecs, ad.transpose(prototypes))                # (M, C)
    return v2 + p2 - 2.0 * cross


def _as_matrix(vecs: Tensor) -> Tensor:
    if vecs.ndim == 1:
        return ad.reshape(vecs, (1, -1))
    return vecs


def _label_rows(label, m: int, num_classes: int) -> np.ndarray:
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (m,)).copy() \
        if np.ndim(label) == 0 else np.asarray(label, dtype=np.int64)
    if labels.shape != (m,):
        raise ShapeError(f"expected {m} labels, got shape {labels.shape}")
    if (labels < 0).any() or (labels >= num_classes).any():
        raise MvfaError("label out of range")
    return labels


def mce_losses(vecs: Tensor, bank: PrototypeBank, label) -> Tensor:
    """Per-view minimum-classification-error losses, shape (M,).

    The misclassification measure is the squared distance to the genuine
    prototype minus the squared distance to the nearest wrong prototype,
    squashed through a sigmoid.  ``label`` is a class index or one index
    per view.
    """
    if bank.num_classes < 2:
        raise MvfaError("MCE needs at least 2 classes")
    vecs = _as_matrix(vecs)
    d2 = _squared_distances(vecs, bank.prototypes)
    m = d2.shape[0]
    rows = np.arange(m)
    labels = _label_rows(label, m, bank.num_classes)
    masked = d2.data.copy()
    masked[rows, labels] = np.inf
    rival = np.argmin(masked, axis=1)
    s = d2[(rows, labels)] - d2[(rows, rival)]
    return ad.sigmoid(s)


def mce_loss(vec: Tensor, bank: PrototypeBank, label: int) -> Tensor:
    return ad.tsum(mce_losses(vec, bank, label))


def dce_losses(vecs: Tensor, bank: PrototypeBank, label) -> Tensor:
    """Per-view distance-softmax cross-entropy losses, shape (M,)."""
    vecs = _as_matrix(vecs)
    d2 = _squared_distances(vecs, bank.prototypes)
    probs = ad.softmax(ad.neg(d2), axis=-1)
    m = probs.shape[0]
    labels = _label_rows(label, m, bank.num_classes)
    return ad.neg(ad.log(probs[(np.arange(m), labels)]))


def dce_loss(vec: Tensor, bank: PrototypeBank, label: int) -> Tensor:
    return ad.tsum(dce_losses(vec, bank, label))


def mfa_proto_loss(features: Tensor, head: ProtoHead, label,
                   kind: str) -> Tensor:
    """Sum of per-view MCE or DCE losses after the FC projection."""
    if features.shape[0] == 0:
        raise MvfaError("mfa_proto_loss: empty feature set")
    vecs = head.project(features)
    if kind == "mce":
        return ad.tsum(mce_losses(vecs, head.bank, label))
    if kind == "dce":
        return ad.tsum(dce_losses(vecs, head.bank, label))
    raise MvfaError(f"unknown prototype loss kind {kind!r}")


def proto_predict(features: Tensor, head: ProtoHead) -> Prediction:
    """Class whose prototype minimizes the summed squared view distances."""
    if features.shape[0] == 0:
        raise MvfaError("proto_predict: no views")
    vecs = head.project(features)
    d2 = _squared_distances(vecs, head.bank.prototypes)
    totals = d2.data.sum(axis=0)
    return Prediction(label=int(np.argmin(totals)), scores=totals)
