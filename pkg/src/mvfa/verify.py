"""Self-contained correctness oracles behind the ``verify`` command.

Each check returns a ``CheckResult``; the CLI prints one line per check
and fails the run if any check fails.  Tests reuse the same functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adacam, autodiff as ad, heads, sampler
from .autodiff import Tensor, grad_check
from .backbone import BackboneConfig
from .config import TrainConfig
from .model import Model


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    threshold: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: max error {self.max_error:.3e} "
                f"(threshold {self.threshold:.1e})")


def check_equivalence(trials: int = 100, h: int = 14, w: int = 14,
                      channels: int = 8, num_classes: int = 5,
                      seed: int = 0, inject_bias: bool = False) -> CheckResult:
    """Shared-weight logit agreement between the two head layouts."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        feats = rng.standard_normal((h, w, channels))
        weights = rng.standard_normal((channels, num_classes))
        f_cam, f_ada, diff = adacam.equivalence_oracle(feats, weights)
        if inject_bias:
            # deliberate violation hook: bias the conv1x1 route only
            f_ada = f_ada + rng.standard_normal(num_classes) * 0.1
            diff = float(np.abs(f_cam - f_ada).max())
        worst = max(worst, diff)
    return CheckResult("head equivalence (100 random trials)", worst <= 1e-9,
                       worst, 1e-9)


def _toy_parts(seed: int = 0):
    backbone = BackboneConfig(stages=((4, 3, 2),), input_side=16)
    rng = np.random.default_rng(seed)
    images = rng.random((2, 16, 16, 3))
    labels = np.array([0, 1])
    return backbone, images, labels


def _model_loss_err(mode: str, head: str, seed: int = 0, **cfg) -> float:
    backbone, images, labels = _toy_parts(seed)
    config = TrainConfig(mode=mode, head=head, k=cfg.pop("k", 3),
                        region_sizes=cfg.pop("region_sizes", (3, 5)),
                        grid_side=cfg.pop("grid_side", 2),
                        proto_dim=cfg.pop("proto_dim", 6),
                        iterations=0, batch_size=2, **cfg)
    model = Model(config, backbone, num_classes=2,
                  rng=np.random.default_rng(seed + 1))
    # A small step keeps the central difference on one smooth piece of the
    # loss: at 1e-3 the probe can cross relu kinks or flip the discrete
    # anchor ranking, both of which make the quotient meaningless.
    return grad_check(lambda: model.loss(images, labels, training=False),
                      model.params, eps=1e-5)


def check_gradients(seed: int = 0) -> list:
    """Finite-difference checks for every loss on toy-size configurations."""
    results = []

    def add(name, err, threshold=1e-4):
        results.append(CheckResult(f"gradient: {name}", err < threshold,
                                   err, threshold))

    # global loss alone: the MFA total includes it, but check it isolated
    rng = np.random.default_rng(seed)
    feats_np = rng.random((1, 6, 6, 4))
    aux_w = Tensor(rng.standard_normal((4, 2)) * 0.5, requires_grad=True)
    onehot = np.array([[1.0, 0.0]])

    def global_fn():
        maps = ad.conv1x1(Tensor(feats_np), aux_w)
        return heads.views_cross_entropy(ad.gap(maps), onehot)

    add("global loss", grad_check(global_fn, [aux_w]))

    # local loss over pooled views, single-FC head
    head = heads.SoftmaxHead.create(4, 2, rng)
    x = Tensor(feats_np, requires_grad=True)
    boxes, img_idx = sampler.anchor_boxes(
        np.array([[[1, 1], [4, 3]]]), (3,), 6, 6)

    def local_fn():
        views = ad.region_avg_pool(x, boxes, img_idx)
        return heads.local_loss(views, head, np.array([1.0, 0.0]))

    add("local loss", grad_check(local_fn, [x, head.w, head.b]))

    # total losses through the full model
    add("total loss (MFA)", _model_loss_err("MFA", "single_fc", seed))
    add("masked-GAP ablation loss", _model_loss_err("WO_FEAAUG", "single_fc", seed))

    # prototype losses: gradients w.r.t. both the vectors and the bank
    bank = heads.PrototypeBank.create(3, 4, rng)
    vecs = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    add("MCE loss", grad_check(
        lambda: heads.mce_loss(vecs, bank, 1), [vecs, bank.prototypes]))
    add("DCE loss", grad_check(
        lambda: heads.dce_loss(vecs, bank, 1), [vecs, bank.prototypes]))
    return results


def _brute_force_rank(attention: np.ndarray):
    h, w = attention.shape
    entries = [(-attention[y, x], y * w + x, (x, y))
               for y in range(h) for x in range(w)]
    entries.sort()
    return [coord for _, _, coord in entries]


def check_sampler(seed: int = 0) -> list:
    """Ranking vs brute force, crop invariants, pooled means, view count."""
    results = []
    rng = np.random.default_rng(seed)

    worst_rank = 0.0
    ok = True
    for h in range(1, 7):
        for w in range(1, 7):
            maps = [rng.standard_normal((h, w)), np.zeros((h, w)),
                    rng.integers(0, 3, size=(h, w)).astype(float)]
            for attention in maps:
                got = sampler.rank_positions(attention)
                if got != _brute_force_rank(attention):
                    ok = False
                for k in (1, h * w):
                    if sampler.select_anchors(got, k) != got[:k]:
                        ok = False
    results.append(CheckResult("ranking vs brute-force sort (H,W <= 6)",
                               ok, 0.0 if ok else 1.0, 0.5))

    ok = True
    for y in range(14):
        for x in range(14):
            for r in (3, 5, 7, 9):
                reg = sampler.crop_region((x, y), r, 14, 14)
                half = (r - 1) // 2
                ok &= 0 <= reg.x_tl <= reg.x_br <= 13
                ok &= 0 <= reg.y_tl <= reg.y_br <= 13
                ok &= reg.x_tl == max(x - half, 0) and reg.x_br == min(x + half, 13)
                ok &= reg.y_tl == max(y - half, 0) and reg.y_br == min(y + half, 13)
    results.append(CheckResult("crop clamping (14x14, r in {3,5,7,9})",
                               ok, 0.0 if ok else 1.0, 0.5))

    feats = rng.standard_normal((14, 14, 6))
    attention = rng.standard_normal((14, 14))
    anchors = sampler.select_anchors(sampler.rank_positions(attention), 50)
    pooled = sampler.pool_regions(feats, anchors, (3, 5, 7, 9))
    worst = 0.0
    row = 0
    for anchor in anchors:
        for r in (3, 5, 7, 9):
            reg = sampler.crop_region(anchor, r, 14, 14)
            total = np.zeros(6)
            for y in range(reg.y_tl, reg.y_br + 1):
                for x in range(reg.x_tl, reg.x_br + 1):
                    total += feats[y, x]
            worst = max(worst, np.abs(pooled[row] - total / reg.area).max())
            row += 1
    count_ok = pooled.shape == (200, 6)
    results.append(CheckResult("pooled means vs nested loops (K=50, R=4)",
                               worst <= 1e-12 and count_ok, worst, 1e-12))
    return results


def run_all(inject_aux_bias: bool = False) -> list:
    results = [check_equivalence(inject_bias=inject_aux_bias)]
    results.extend(check_gradients())
    results.extend(check_sampler())
    return results
