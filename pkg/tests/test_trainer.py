"""Training loop, loss assembly across modes, evaluation, ablation helpers."""

import numpy as np
import pytest

from mvfa import trainer
from mvfa.backbone import BackboneConfig
from mvfa.config import TrainConfig
from mvfa.data import Split
from mvfa.errors import MvfaError
from mvfa.model import Model

TOY_BACKBONE = BackboneConfig(stages=((4, 3, 2),), input_side=16)


def toy_split(n=8, seed=0, num_classes=2, side=16):
    rng = np.random.default_rng(seed)
    return Split(images=rng.random((n, side, side, 3)),
                 labels=np.arange(n) % num_classes)


def toy_config(**kwargs):
    base = dict(mode="MFA", head="single_fc", k=3, region_sizes=(3, 5),
                grid_side=2, batch_size=4, iterations=0, eval_every=100)
    base.update(kwargs)
    return TrainConfig(**base)


def make_model(config, seed=0, num_classes=2):
    return Model(config, TOY_BACKBONE, num_classes,
                 np.random.default_rng(seed))


# -- attention mask -----------------------------------------------------------


def test_attention_mask_examples():
    assert trainer.attention_mask(np.array(0.0), 10.0) == pytest.approx(1.0)
    assert trainer.attention_mask(np.array(0.1), 10.0) == pytest.approx(
        2 / (1 + np.exp(-1.0)), abs=1e-12)
    assert trainer.attention_mask(np.array(0.1), 10.0) == pytest.approx(
        1.4621, abs=1e-4)
    big = trainer.attention_mask(np.array([100.0, -100.0]), 10.0)
    assert big[0] == pytest.approx(2.0) and big[1] == pytest.approx(0.0)
    assert (trainer.attention_mask(np.zeros((3, 3)), 5.0) == 1.0).all()
    with pytest.raises(MvfaError):
        trainer.attention_mask(np.zeros(2), 0.0)


# -- loss assembly ------------------------------------------------------------


def test_total_loss_single_sample_equals_per_sample_value():
    split = toy_split(1)
    model = make_model(toy_config())
    batch = trainer.total_loss(model, split.images, split.labels,
                               training=False)
    single = model.loss(split.images, split.labels, training=False)
    assert batch.item() == pytest.approx(single.item(), rel=1e-12)


@pytest.mark.parametrize("mode", ["GAP", "MFA", "WO_FEAAUG", "WO_ADACAM"])
def test_batch_loss_matches_per_sample_loop(mode):
    split = toy_split(5)
    model = make_model(toy_config(mode=mode))
    batch = model.loss(split.images, split.labels, training=False).item()
    per_sample = [model.loss(split.images[i:i + 1], split.labels[i:i + 1],
                             training=False).item() for i in range(5)]
    assert batch == pytest.approx(np.mean(per_sample), abs=1e-12)


def test_empty_batch_faults():
    model = make_model(toy_config())
    with pytest.raises(MvfaError):
        model.loss(np.zeros((0, 16, 16, 3)), np.zeros(0, dtype=int))


def test_gap_mode_has_no_attention_params():
    gap = make_model(toy_config(mode="GAP"))
    fea = make_model(toy_config(mode="WO_FEAAUG"))
    assert "aux.w" not in gap.params and "aux.w" in fea.params
    # masked-GAP model is the GAP baseline plus exactly the aux conv1x1
    aux_size = fea.params["aux.w"].size
    assert fea.num_params() == gap.num_params() + aux_size


def test_view_counts_per_mode():
    assert make_model(toy_config(mode="MFA")).views_per_image == 6  # k*R
    assert make_model(toy_config(mode="WO_ADACAM")).views_per_image == 8  # G²*R
    assert make_model(toy_config(mode="GAP")).views_per_image == 1


def test_wo_adacam_has_no_aux_and_no_attention():
    model = make_model(toy_config(mode="WO_ADACAM"))
    assert "aux.w" not in model.params
    with pytest.raises(MvfaError):
        model.attention(np.zeros((1, 16, 16, 3)))


# -- augmentation -------------------------------------------------------------


def test_augment_batch_is_seeded_and_shape_preserving():
    images = np.random.default_rng(0).random((6, 16, 16, 3))
    out_a = trainer.augment_batch(images, np.random.default_rng(5))
    out_b = trainer.augment_batch(images, np.random.default_rng(5))
    assert out_a.shape == images.shape
    np.testing.assert_array_equal(out_a, out_b)
    assert (out_a != images).any()  # some jitter actually happened


# -- evaluate -----------------------------------------------------------------


class _StubModel:
    def __init__(self, outputs):
        self.outputs = np.asarray(outputs)

    def predict(self, images):
        n = images.shape[0]
        return self.outputs[:n], np.zeros((n, 2))


def test_evaluate_constant_model_frequency():
    split = toy_split(8)  # labels alternate 0,1
    constant = _StubModel(np.zeros(8, dtype=int))
    assert trainer.evaluate(constant, split) == 0.5


def test_evaluate_perfect_model():
    split = toy_split(8)
    perfect = _StubModel(split.labels.copy())
    assert trainer.evaluate(perfect, split) == 1.0


def test_evaluate_empty_faults():
    with pytest.raises(MvfaError):
        trainer.evaluate(_StubModel([]), Split(images=np.zeros((0, 16, 16, 3)),
                                               labels=np.zeros(0, dtype=int)))


def test_mfa_accuracy_matches_manual_reaggregation():
    split = toy_split(4)
    model = make_model(toy_config(mode="MFA"))
    acc = trainer.evaluate(model, split)
    hits = 0
    for i in range(4):
        feats = model.features(split.images[i:i + 1])
        attention = model.attention(split.images[i:i + 1])
        views, _, _ = model._pooled_views(feats, attention)
        logits = model.head.logits(views, training=False).data
        if int(np.argmax(logits.sum(axis=0))) == split.labels[i]:
            hits += 1
    assert acc == hits / 4


# -- training loop ------------------------------------------------------------


def test_zero_iterations_single_metrics_row():
    split = toy_split(6)
    model, metrics = trainer.train(toy_config(iterations=0), TOY_BACKBONE,
                                   split, split)
    assert len(metrics) == 1
    assert metrics[0].iteration == 0
    assert 0.0 <= metrics[0].val_acc <= 1.0


def test_training_is_deterministic():
    split = toy_split(8)
    config = toy_config(iterations=4, eval_every=2)
    model_a, metrics_a = trainer.train(config, TOY_BACKBONE, split, split)
    model_b, metrics_b = trainer.train(config, TOY_BACKBONE, split, split)
    assert trainer.metrics_to_csv(metrics_a) == trainer.metrics_to_csv(metrics_b)
    for name in model_a.params:
        np.testing.assert_array_equal(model_a.params[name].data,
                                      model_b.params[name].data)


def test_metrics_iterations_increase_and_csv_format():
    split = toy_split(6)
    model, metrics = trainer.train(toy_config(iterations=4, eval_every=2),
                                   TOY_BACKBONE, split, split)
    iters = [m.iteration for m in metrics]
    assert iters == [0, 2, 4]
    csv = trainer.metrics_to_csv(metrics)
    lines = csv.strip().split("\n")
    assert lines[0] == "iter,train_loss,val_acc"
    assert len(lines) == 4


def test_training_reduces_loss_on_memorizable_set():
    # two images, hundreds of steps at a high rate: loss must drop
    split = toy_split(2, seed=3)
    config = toy_config(mode="GAP", iterations=60, lr=1e-2, batch_size=2,
                        eval_every=30)
    model, metrics = trainer.train(config, TOY_BACKBONE, split, split)
    assert metrics[-1].train_loss < metrics[0].train_loss


def test_mlp_and_proto_heads_train_without_fault():
    split = toy_split(4)
    for head in ("mlp:cls1", "proto_mce", "proto_dce"):
        config = toy_config(head=head, iterations=2, proto_dim=6, eval_every=1)
        model, metrics = trainer.train(config, TOY_BACKBONE, split, split)
        assert np.isfinite([m.train_loss for m in metrics]).all()
