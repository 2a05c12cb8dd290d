"""Attention generation: auxiliary head, attention maps, and the CAM oracle.

These functions operate on single-image numpy arrays in (H, W, C) layout
and are deliberately free of autodiff plumbing: they are the reference
surfaces that the trainable graph in ``model`` is tested against.
"""

from __future__ import annotations

import numpy as np

from .autodiff import LOG_FLOOR
from .errors import MvfaError, ShapeError


class AuxHead:
    """Single 1x1-conv classifier head (no bias): weights (num_channels, C)."""

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ShapeError(f"aux head weights must be a matrix, got {weights.shape}")
        self.weights = weights

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


class CamHead:
    """GAP-then-FC classifier head (no bias): weights (num_channels, C)."""

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ShapeError(f"cam head weights must be a matrix, got {weights.shape}")
        self.weights = weights

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


def _check_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ShapeError(f"feature maps must be (H, W, C), got {features.shape}")
    return features


def softmax_vec(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def aux_forward(features: np.ndarray, head: AuxHead):
    """Per-class score maps and softmax probabilities of the auxiliary head.

    Returns ``(G, f)`` where ``G = conv1x1(F)`` has one channel per class
    and ``f = softmax(GAP(G))``.
    """
    features = _check_features(features)
    if features.shape[2] != head.weights.shape[0]:
        raise ShapeError(
            f"feature channels {features.shape[2]} do not match aux head "
            f"input size {head.weights.shape[0]}")
    score_maps = features @ head.weights
    probs = softmax_vec(score_maps.mean(axis=(0, 1)))
    return score_maps, probs


def global_loss(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Cross-entropy of the auxiliary softmax against a one-hot label."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    if onehot.shape != probs.shape:
        raise ShapeError(f"label shape {onehot.shape} != probs shape {probs.shape}")
    if not (np.isin(onehot, (0.0, 1.0)).all() and onehot.sum() == 1.0):
        raise MvfaError("label vector must be one-hot")
    return float(-(onehot * np.log(np.maximum(probs, LOG_FLOOR))).sum())


def adacam(score_maps: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Label-independent attention map: softmax-weighted channel sum of G.

    Raw values, no rectification or normalization.
    """
    score_maps = _check_features(score_maps)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (score_maps.shape[2],):
        raise ShapeError(
            f"probs length {probs.shape} does not match {score_maps.shape[2]} channels")
    return score_maps @ probs


def cam_reference(features: np.ndarray, head: CamHead, class_index: int) -> np.ndarray:
    """Classic class activation map: channel sum weighted by one FC column."""
    features = _check_features(features)
    if not 0 <= class_index < head.num_classes:
        raise MvfaError(f"class index {class_index} out of range [0, {head.num_classes})")
    if features.shape[2] != head.weights.shape[0]:
        raise ShapeError(
            f"feature channels {features.shape[2]} do not match cam head "
            f"input size {head.weights.shape[0]}")
    return features @ head.weights[:, class_index]


def equivalence_oracle(features: np.ndarray, weights: np.ndarray):
    """Pre-softmax logits via GAP-then-FC vs conv1x1-then-GAP, shared weights.

    Returns ``(f_cam, f_adacam, max_abs_diff)``; the two routes are
    algebraically identical, so the difference is pure rounding noise.
    """
    features = _check_features(features)
    cam_head = CamHead(weights)
    aux_head = AuxHead(weights)
    pooled = features.mean(axis=(0, 1))
    f_cam = cam_head.weights.T @ pooled
    f_adacam = (features @ aux_head.weights).mean(axis=(0, 1))
    return f_cam, f_adacam, float(np.abs(f_cam - f_adacam).max())


def sharpness_study(features: np.ndarray, head: AuxHead, temperatures):
    """Gap between the attention map and the top class's score map per τ.

    Logits are divided by each temperature before softmax; the reported
    error is the max-abs difference between the resulting attention map and
    the score map of the argmax class.  Sharper softmax means smaller error.
    """
    temperatures = list(temperatures)
    if any(b >= a for a, b in zip(temperatures, temperatures[1:])):
        raise MvfaError("temperatures must be strictly decreasing")
    score_maps, _ = aux_forward(features, head)
    logits = score_maps.mean(axis=(0, 1))
    order = np.sort(logits)
    if logits.size > 1 and order[-1] == order[-2]:
        raise MvfaError("sharpness_study: argmax of the logits is tied")
    top = int(np.argmax(logits))
    errors = []
    for tau in temperatures:
        if tau <= 0:
            raise MvfaError(f"temperature must be positive, got {tau}")
        probs = softmax_vec(logits / tau)
        attention = score_maps @ probs
        errors.append(float(np.abs(attention - score_maps[:, :, top]).max()))
    return errors
