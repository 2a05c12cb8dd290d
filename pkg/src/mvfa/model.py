"""The assembled classifier: backbone, attention head, sampling, main head.

Four operating modes:

* ``GAP`` — plain global-average-pool baseline, no attention head.
* ``MFA`` — attention-guided multi-view sampling with ensemble inference.
* ``WO_FEAAUG`` — attention mask reweights the features before GAP; no
  view sampling.
* ``WO_ADACAM`` — multi-view sampling on a fixed even grid of anchors; no
  attention head.

Anchor positions are selected numerically (no gradient flows through the
ranking); gradients reach the backbone through the pooled region values
and, in ``WO_FEAAUG``, through the sigmoid mask.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import heads as heads_mod
from .autodiff import Tensor
from .backbone import BackboneConfig, backbone_forward, init_backbone
from .config import TrainConfig
from .errors import ConfigError, MvfaError, ShapeError
from .sampler import anchor_boxes, batch_topk_anchors, even_grid_anchors


class Model:
    def __init__(self, train_config: TrainConfig,
                 backbone_config: BackboneConfig, num_classes: int,
                 rng: np.random.Generator):
        if num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {num_classes}")
        self.config = train_config
        self.backbone_config = backbone_config
        self.num_classes = num_classes
        side = backbone_config.feature_side
        if self.uses_views:
            backbone_config.validate_for_regions(train_config.region_sizes)
        if train_config.mode == "MFA" and train_config.k > side * side:
            raise ConfigError(
                f"k={train_config.k} exceeds the {side}x{side} feature map")
        if train_config.mode == "WO_ADACAM" \
                and train_config.grid_side ** 2 > side * side:
            raise ConfigError(
                f"grid {train_config.grid_side}² exceeds the {side}x{side} map")

        self.params: dict[str, Tensor] = init_backbone(backbone_config, rng)
        cin = backbone_config.num_channels
        if self.has_aux:
            aux_w = rng.standard_normal((cin, num_classes)) * np.sqrt(2.0 / cin)
            self.params["aux.w"] = Tensor(aux_w, requires_grad=True)
        self.head = self._build_head(cin, rng)
        self.params.update(self.head.named_params("head"))

    # -- structure -----------------------------------------------------------

    @property
    def uses_views(self) -> bool:
        return self.config.mode in ("MFA", "WO_ADACAM")

    @property
    def has_aux(self) -> bool:
        return self.config.mode in ("MFA", "WO_FEAAUG")

    @property
    def is_proto(self) -> bool:
        return self.config.head.startswith("proto_")

    @property
    def views_per_image(self) -> int:
        r = len(self.config.region_sizes)
        if self.config.mode == "MFA":
            return self.config.k * r
        if self.config.mode == "WO_ADACAM":
            return self.config.grid_side ** 2 * r
        return 1

    def _build_head(self, cin: int, rng: np.random.Generator):
        kind = self.config.head
        if kind == "single_fc":
            return heads_mod.SoftmaxHead.create(cin, self.num_classes, rng)
        if kind.startswith("mlp:"):
            return heads_mod.MlpHead.create(kind.split(":", 1)[1], cin,
                                            self.num_classes, rng)
        return heads_mod.ProtoHead.create(cin, self.num_classes,
                                          self.config.proto_dim, rng)

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def load_state(self, state: dict) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise MvfaError(
                f"checkpoint mismatch: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}")
        for name, p in self.params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"checkpoint parameter {name!r} has shape {arr.shape}, "
                    f"expected {p.data.shape}")
            p.data = arr.copy()

    # -- forward pieces ------------------------------------------------------

    def features(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim != 4 or x.shape[3] != 3:
            raise ShapeError(f"images must be (N, H, W, 3), got {x.shape}")
        return backbone_forward(x, self.params, self.backbone_config)

    def _aux_maps(self, feats: Tensor):
        score_maps = ad.conv1x1(feats, self.params["aux.w"])
        return score_maps, ad.gap(score_maps)

    def attention(self, images) -> np.ndarray:
        """AdaCAM maps for a batch, shape (N, H, W)."""
        if not self.has_aux:
            raise MvfaError(f"mode {self.config.mode} has no attention head")
        feats = self.features(images)
        score_maps, aux_logits = self._aux_maps(feats)
        probs = _softmax_rows(aux_logits.data)
        return np.einsum("nhwc,nc->nhw", score_maps.data, probs)

    def _pooled_views(self, feats: Tensor, attention: np.ndarray | None):
        n, h, w, _ = feats.shape
        if self.config.mode == "MFA":
            anchors = batch_topk_anchors(attention, self.config.k)
        else:
            grid = even_grid_anchors(h, w, self.config.grid_side)
            single = np.array([(y, x) for x, y in grid], dtype=np.int64)
            anchors = np.broadcast_to(single, (n, *single.shape))
        boxes, image_index = anchor_boxes(anchors, self.config.region_sizes,
                                          h, w)
        return ad.region_avg_pool(feats, boxes, image_index), boxes, image_index

    def _masked_gap(self, feats: Tensor, score_maps: Tensor,
                    aux_logits: Tensor) -> Tensor:
        n, h, w, _ = feats.shape
        probs = ad.softmax(aux_logits, axis=-1)
        attention = ad.tsum(ad.mul(score_maps,
                                   ad.reshape(probs, (n, 1, 1, -1))), axis=3)
        mask = 2.0 * ad.sigmoid(self.config.eta * attention)
        return ad.gap(ad.mul(feats, ad.reshape(mask, (n, h, w, 1))))

    def _head_loss(self, view_feats: Tensor, labels: np.ndarray,
                   training: bool, rng) -> Tensor:
        if self.is_proto:
            kind = self.config.head.split("_", 1)[1]
            return heads_mod.mfa_proto_loss(view_feats, self.head, labels, kind)
        logits = self.head.logits(view_feats, training=training, rng=rng)
        onehot_rows = np.eye(self.num_classes)[labels]
        return heads_mod.views_cross_entropy(logits, onehot_rows)

    # -- training loss -------------------------------------------------------

    def loss(self, images: np.ndarray, labels: np.ndarray,
             rng: np.random.Generator | None = None,
             training: bool = True) -> Tensor:
        """Mean over the batch of (global loss + local/head loss)."""
        labels = np.asarray(labels, dtype=np.int64)
        n = labels.shape[0]
        if n == 0:
            raise MvfaError("empty batch")
        onehots = np.eye(self.num_classes)[labels]
        feats = self.features(images)
        mode = self.config.mode

        if mode == "GAP":
            total = self._head_loss(ad.gap(feats), labels, training, rng)
        elif mode == "WO_FEAAUG":
            score_maps, aux_logits = self._aux_maps(feats)
            global_l = heads_mod.views_cross_entropy(aux_logits, onehots)
            pooled = self._masked_gap(feats, score_maps, aux_logits)
            total = global_l + self._head_loss(pooled, labels, training, rng)
        elif mode == "MFA":
            score_maps, aux_logits = self._aux_maps(feats)
            global_l = heads_mod.views_cross_entropy(aux_logits, onehots)
            probs = _softmax_rows(aux_logits.data)
            attention = np.einsum("nhwc,nc->nhw", score_maps.data, probs)
            views, _, _ = self._pooled_views(feats, attention)
            view_labels = np.repeat(labels, self.views_per_image)
            total = global_l + self._head_loss(views, view_labels, training, rng)
        else:  # WO_ADACAM
            views, _, _ = self._pooled_views(feats, None)
            view_labels = np.repeat(labels, self.views_per_image)
            total = self._head_loss(views, view_labels, training, rng)
        return total / n

    # -- inference -----------------------------------------------------------

    def predict(self, images: np.ndarray):
        """Predicted labels and per-class aggregate scores for a batch.

        Scores are summed pre-softmax logits for softmax heads and negated
        summed squared distances for prototype heads, so the argmax of the
        scores is always the predicted label (ties fall to the lowest
        class index).
        """
        feats = self.features(images)
        n = feats.shape[0]
        mode = self.config.mode

        if mode in ("GAP", "WO_FEAAUG"):
            if mode == "GAP":
                pooled = ad.gap(feats)
            else:
                score_maps, aux_logits = self._aux_maps(feats)
                pooled = self._masked_gap(feats, score_maps, aux_logits)
            scores = self._single_view_scores(pooled)
        else:
            if mode == "MFA":
                score_maps, aux_logits = self._aux_maps(feats)
                probs = _softmax_rows(aux_logits.data)
                attention = np.einsum("nhwc,nc->nhw", score_maps.data, probs)
            else:
                attention = None
            views, _, _ = self._pooled_views(feats, attention)
            per_view = self._per_view_scores(views)
            scores = per_view.reshape(n, self.views_per_image,
                                      self.num_classes).sum(axis=1)
        return np.argmax(scores, axis=1), scores

    def _single_view_scores(self, pooled: Tensor) -> np.ndarray:
        if self.is_proto:
            vecs = self.head.project(pooled)
            d2 = heads_mod._squared_distances(vecs, self.head.bank.prototypes)
            return -d2.data
        return self.head.logits(pooled, training=False).data

    def _per_view_scores(self, views: Tensor) -> np.ndarray:
        if self.is_proto:
            vecs = self.head.project(views)
            d2 = heads_mod._squared_distances(vecs, self.head.bank.prototypes)
            return -d2.data
        return self.head.logits(views, training=False).data

    def view_report(self, image: np.ndarray):
        """Per-view boxes and class probabilities for one image.

        Returns ``(boxes, probs, predicted_label)`` where ``boxes`` is
        (V, 4) as inclusive (y_tl, x_tl, y_br, x_br) on the feature grid
        and ``probs`` is the per-view class distribution (softmax of the
        head logits, or the distance softmax for prototype heads).
        """
        if not self.uses_views:
            raise MvfaError(f"mode {self.config.mode} samples no views")
        feats = self.features(image[None])
        if self.config.mode == "MFA":
            score_maps, aux_logits = self._aux_maps(feats)
            probs_aux = _softmax_rows(aux_logits.data)
            attention = np.einsum("nhwc,nc->nhw", score_maps.data, probs_aux)
        else:
            attention = None
        views, boxes, _ = self._pooled_views(feats, attention)
        per_view = self._per_view_scores(views)
        label = int(np.argmax(per_view.sum(axis=0)))
        probs = _softmax_rows(per_view)
        return boxes, probs, label


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
