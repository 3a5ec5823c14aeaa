import math

import numpy as np
import pytest

from foml import autodiff as ad
from foml import models
from helpers import (
    assert_grad_close_piecewise,
    eager_mlp_logits,
    eager_softmax_cross_entropy,
)

MLP = models.Architecture("mlp", input_shape=(1, 4, 4), num_classes=10, hidden=(12,))
CONV = models.Architecture("convnet4", input_shape=(3, 8, 8), num_classes=10, filters=(4, 4, 6, 6))
SIAM = models.Architecture(
    "siamese7", input_shape=(1, 8, 8), num_classes=2, filters=(2, 2, 2, 3, 3, 3, 4), embedding_dim=6
)


def image_batch(arch, n, seed=0, pairwise=False):
    rng = np.random.default_rng(seed)
    shape = (n, *arch.input_shape)
    if pairwise:
        ins = (rng.random(shape), rng.random(shape))
        labels = rng.integers(0, 2, size=n)
    else:
        ins = rng.random(shape)
        labels = rng.integers(0, arch.num_classes, size=n)
    return models.LabeledBatch(ins, labels)


class TestArchitecture:
    def test_filter_count_enforced(self):
        with pytest.raises(ValueError):
            models.Architecture("convnet4", input_shape=(3, 8, 8), filters=(8, 8))
        with pytest.raises(ValueError):
            models.Architecture("siamese7", input_shape=(3, 8, 8), filters=(8,) * 4)

    def test_num_classes_enforced(self):
        with pytest.raises(ValueError):
            models.Architecture("mlp", input_shape=(1, 4, 4), num_classes=1)


class TestInitParams:
    @pytest.mark.parametrize("arch", [MLP, CONV, SIAM], ids=["mlp", "conv", "siam"])
    def test_deterministic_and_seed_sensitive(self, arch):
        p1 = models.init_params(arch, seed=11)
        p2 = models.init_params(arch, seed=11)
        p3 = models.init_params(arch, seed=12)
        assert np.array_equal(p1.flatten(), p2.flatten())
        weights1 = np.concatenate(
            [a.ravel() for n, a in p1 if not n.endswith("_b") and not n.startswith("b")]
        )
        weights3 = np.concatenate(
            [a.ravel() for n, a in p3 if not n.endswith("_b") and not n.startswith("b")]
        )
        assert np.mean(weights1 != weights3) >= 0.99

    def test_biases_exactly_zero(self):
        for arch in (MLP, CONV, SIAM):
            p = models.init_params(arch, seed=0)
            for name, arr in p:
                if name.startswith("b") or name.endswith("_b"):
                    assert np.array_equal(arr, np.zeros_like(arr))


class TestPredict:
    def test_zero_weights_give_uniform_softmax(self):
        p = models.init_params(MLP, seed=0)
        zeros = ad.ParameterVector({k: np.zeros_like(v) for k, v in p})
        batch = image_batch(MLP, 5)
        logits = models.predict(MLP, zeros, batch)
        assert logits.shape == (5, 10)
        assert np.array_equal(logits, np.zeros((5, 10)))

    def test_logits_shape_per_arch(self):
        for arch, pairwise, want in ((MLP, False, (3, 10)), (CONV, False, (3, 10)), (SIAM, True, (3, 1))):
            p = models.init_params(arch, seed=1)
            batch = image_batch(arch, 3, pairwise=pairwise)
            assert models.predict(arch, p, batch).shape == want

    def test_shape_mismatch_rejected(self):
        p = models.init_params(CONV, seed=1)
        bad = models.LabeledBatch(np.zeros((2, 3, 4, 4)), np.zeros(2, dtype=int))
        with pytest.raises(ad.ShapeError):
            models.predict(CONV, p, bad)

    def test_identical_pair_gives_zero_feature_and_symmetry(self):
        p = models.init_params(SIAM, seed=3)
        img = np.random.default_rng(0).random((4, *SIAM.input_shape))
        same = models.LabeledBatch((img, img.copy()), np.ones(4, dtype=int))
        score = models.predict(SIAM, p, same)
        # |e1 - e2| = 0, so the score is exactly the head bias (zero at init)
        assert np.array_equal(score, np.zeros((4, 1)))

        other = np.random.default_rng(1).random((4, *SIAM.input_shape))
        fwd = models.predict(SIAM, p, models.LabeledBatch((img, other), np.ones(4, dtype=int)))
        rev = models.predict(SIAM, p, models.LabeledBatch((other, img), np.ones(4, dtype=int)))
        assert np.array_equal(fwd, rev)

    def test_mlp_matches_eager_oracle(self):
        p = models.init_params(MLP, seed=9)
        batch = image_batch(MLP, 6, seed=2)
        got = models.predict(MLP, p, batch)
        seg = p.segments
        flat = batch.inputs.reshape(6, -1)
        want = eager_mlp_logits(flat, [seg["w1"], seg["w2"]], [seg["b1"], seg["b2"]])
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestLoss:
    def test_uniform_logits_loss_is_log_c(self):
        p = models.init_params(MLP, seed=0)
        zeros = ad.ParameterVector({k: np.zeros_like(v) for k, v in p})
        batch = image_batch(MLP, 8)
        assert abs(models.loss_value(MLP, zeros, batch) - math.log(10)) < 1e-12

    def test_large_margin_loss_near_zero(self):
        # hand-built logits: correct class at +20, rest at 0
        arch = models.Architecture("mlp", input_shape=(1, 1, 1), num_classes=4, hidden=())
        p = ad.ParameterVector({"w1": np.zeros((1, 4)), "b1": np.array([20.0, 0.0, 0.0, 0.0])})
        batch = models.LabeledBatch(np.ones((3, 1, 1, 1)), np.zeros(3, dtype=int))
        assert models.loss_value(arch, p, batch) < 1e-8

    def test_batch_loss_is_mean_of_per_example(self):
        p = models.init_params(MLP, seed=4)
        batch = image_batch(MLP, 2, seed=5)
        whole = models.loss_value(MLP, p, batch)
        parts = [models.loss_value(MLP, p, batch.take([i])) for i in range(2)]
        assert abs(whole - np.mean(parts)) < 1e-12

    def test_loss_matches_eager_oracle(self):
        p = models.init_params(MLP, seed=6)
        batch = image_batch(MLP, 5, seed=6)
        got = models.loss_value(MLP, p, batch)
        logits = models.predict(MLP, p, batch)
        want = eager_softmax_cross_entropy(logits, batch.labels)
        assert abs(got - want) < 1e-12

    def test_loss_nonnegative(self):
        for arch, pairwise in ((MLP, False), (CONV, False), (SIAM, True)):
            p = models.init_params(arch, seed=8)
            batch = image_batch(arch, 4, seed=8, pairwise=pairwise)
            assert models.loss_value(arch, p, batch) >= 0.0


@pytest.mark.parametrize(
    "arch,pairwise", [(MLP, False), (CONV, False), (SIAM, True)], ids=["mlp", "conv", "siam"]
)
def test_loss_gradient_matches_finite_differences(arch, pairwise):
    p = models.init_params(arch, seed=13)
    batch = image_batch(arch, 3, seed=13, pairwise=pairwise)
    _, g = models.loss_and_grad(arch, p, batch)

    def f(flat):
        return models.loss_value(arch, p.unflatten(flat), batch)

    assert_grad_close_piecewise(f, g.flatten(), p.flatten(), rtol=1e-6, atol=1e-7)


def test_labeled_batch_has_no_task_fields():
    fields = set(models.LabeledBatch.__dataclass_fields__)
    assert fields == {"inputs", "labels"}
