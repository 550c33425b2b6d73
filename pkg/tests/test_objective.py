import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcdnet import tensor as tn
from bcdnet.objective import (SGD, LossTerms, LossWeights, SamplingError, batch_hard_triplet, cross_entropy_part,
                              lr_at, sample_pk, sgd_step, total_loss)
from bcdnet.tensor import Tensor

import oracles


class TestSamplePK:
    def test_default_batch_size(self):
        labels = np.repeat(np.arange(10), 9)
        b = sample_pk(labels, 6, 8, np.random.default_rng(0))
        assert b.size == 48 and len(b.indices) == 48
        ids, counts = np.unique(b.labels, return_counts=True)
        assert len(ids) == 6 and (counts == 8).all()

    def test_exhaustive_case(self):
        labels = np.array([0, 0, 1, 1])
        b = sample_pk(labels, 2, 2, np.random.default_rng(3))
        assert sorted(b.indices.tolist()) == [0, 1, 2, 3]

    def test_deterministic(self):
        labels = np.repeat(np.arange(8), 5)
        a = [sample_pk(labels, 4, 3, r).indices for r in [np.random.default_rng(7)] * 5]
        b = [sample_pk(labels, 4, 3, r).indices for r in [np.random.default_rng(7)] * 5]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_too_few_identities(self):
        with pytest.raises(SamplingError):
            sample_pk(np.array([0, 0, 1]), 3, 1, np.random.default_rng(0))

    def test_short_identity_is_resampled(self):
        b = sample_pk(np.array([0, 1, 1, 1]), 2, 3, np.random.default_rng(0))
        assert (b.labels == 0).sum() == 3


class TestCrossEntropy:
    @pytest.mark.parametrize("J", [1, 2, 10, 32])
    def test_uniform_logits(self, J):
        loss = cross_entropy_part(Tensor(np.zeros((4, J))), [0, 0, 0, 0])
        assert loss.item() == pytest.approx(math.log(J), abs=1e-15)

    def test_saturation(self):
        logits = np.zeros((2, 5))
        logits[[0, 1], [1, 3]] = 800.0
        assert cross_entropy_part(Tensor(logits), [1, 3]).item() == pytest.approx(0.0, abs=1e-300)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n, J = int(rng.integers(1, 6)), int(rng.integers(2, 8))
            logits = rng.normal(scale=3, size=(n, J))
            y = rng.integers(0, J, size=n)
            ref = np.mean([math.log(sum(math.exp(v) for v in row)) - row[t] for row, t in zip(logits, y)])
            assert cross_entropy_part(Tensor(logits), y).item() == pytest.approx(ref, rel=0, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises((IndexError, ValueError)):
            cross_entropy_part(Tensor(np.zeros((1, 3))), [3])


class TestBatchHardTriplet:
    def test_identical_embeddings_give_margin(self):
        h = np.tile(np.random.default_rng(0).normal(size=8), (6, 1))
        assert batch_hard_triplet(Tensor(h), [0, 0, 1, 1, 2, 2], 0.20).item() == pytest.approx(0.20, abs=1e-12)

    def test_separated_clusters(self):
        h = np.repeat(np.eye(3), 2, axis=0)
        assert batch_hard_triplet(Tensor(h), [0, 0, 1, 1, 2, 2], 0.20).item() == 0.0

    def test_single_identity_rejected(self):
        with pytest.raises(SamplingError):
            batch_hard_triplet(Tensor(np.ones((3, 2))), [4, 4, 4])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            P, A = int(rng.integers(2, 4)), int(rng.integers(1, 4))
            labels = np.repeat(np.arange(P), A)
            h = rng.normal(size=(P * A, 5))
            alpha = float(rng.uniform(0.05, 1.0))
            assert batch_hard_triplet(Tensor(h), labels, alpha).item() == pytest.approx(
                oracles.triplet(h, labels, alpha), rel=0, abs=1e-12)

    @given(st.integers(0, 2**31), st.floats(0.1, 50.0))
    @settings(max_examples=30, deadline=None)
    def test_scale_invariant(self, seed, scale):
        rng = np.random.default_rng(seed)
        h = rng.normal(size=(6, 4))
        labels = [0, 0, 1, 1, 2, 2]
        a = batch_hard_triplet(Tensor(h), labels).item()
        # eps in the normalization breaks exact invariance at the 1e-12 level
        assert batch_hard_triplet(Tensor(h * scale), labels).item() == pytest.approx(a, abs=1e-10)


def _random_terms(rng, with_all=True):
    def scalar():
        return Tensor(float(rng.uniform(0.1, 2)))

    return LossTerms(
        identity=[scalar() for _ in range(3)],
        triplet=scalar(),
        attention=[scalar() for _ in range(3)] if with_all else [],
        part_reg=[scalar() for _ in range(3)] if with_all else [],
        holistic_reg=scalar() if with_all else None,
        stripe_identity=[scalar() for _ in range(3)],
    )


class TestTotalLoss:
    def test_recomposition(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = _random_terms(rng)
            w = LossWeights(lambda1=float(rng.uniform(0, 2)), lambda2=float(rng.uniform(0, 2)))
            s = t.scalars()
            expected = (s["identity"] + s["triplet"] + s["stripe_identity"] + w.lambda1 * s["attention"]
                        + w.lambda2 * (s["holistic_reg"] + s["part_reg"]))
            assert total_loss(t, w).item() == pytest.approx(expected, rel=1e-14)

    def test_baseline_row(self):
        t = _random_terms(np.random.default_rng(4))
        t.stripe_identity = []
        w = LossWeights(use_bcca_loss=False, use_part_reg=False, use_holistic_reg=False)
        s = t.scalars()
        assert total_loss(t, w).item() == pytest.approx(s["identity"] + s["triplet"], rel=1e-15)

    def test_zero_lambdas_equal_toggles_off(self):
        t = _random_terms(np.random.default_rng(5))
        off = LossWeights(use_bcca_loss=False, use_part_reg=False, use_holistic_reg=False)
        zero = LossWeights(lambda1=0.0, lambda2=0.0)
        assert abs(total_loss(t, off).item() - total_loss(t, zero).item()) <= 1e-15

    def test_gradient_flows_to_every_term(self):
        leaves = [Tensor(1.0, requires_grad=True) for _ in range(6)]
        with tn.fresh_tape():
            t = LossTerms([leaves[0]], leaves[1], [leaves[2]], [leaves[3]], leaves[4], [leaves[5]])
            tn.backward(total_loss(t, LossWeights(lambda1=0.5, lambda2=2.0)))
        np.testing.assert_allclose([x.grad.item() for x in leaves], [1, 1, 0.5, 2, 2, 1])


class TestSGD:
    def test_fixed_point(self):
        p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        sgd_step(p, {"w": np.zeros(2)}, lr=0.1, momentum=0.9, weight_decay=0.0, velocity={})
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])

    def test_hand_step(self):
        p = {"x": Tensor(1.0, requires_grad=True)}
        sgd_step(p, {"x": 2 * p["x"].data}, lr=0.1, momentum=0.0, weight_decay=0.0, velocity={})
        assert p["x"].item() == pytest.approx(0.8, abs=1e-15)

    def test_quadratic_converges_monotonically(self):
        A = np.diag([1.0, 4.0, 0.5])
        x = Tensor(np.array([3.0, -2.0, 5.0]), requires_grad=True)
        opt = SGD({"x": x}, momentum=0.3, weight_decay=0.0)
        losses = []
        for _ in range(200):
            losses.append(0.5 * x.data @ A @ x.data)
            x.grad = A @ x.data
            opt.step(0.05)
        assert losses[-1] < 1e-6 * losses[0]
        assert (np.diff(losses[20:]) <= 0).all()

    def test_weight_decay_is_added_to_gradient(self):
        p = {"w": Tensor(np.array([2.0]), requires_grad=True)}
        sgd_step(p, {"w": np.zeros(1)}, lr=0.1, momentum=0.0, weight_decay=0.5, velocity={})
        assert p["w"].item() == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, abs=1e-15)

    @pytest.mark.parametrize("epoch,expected", [(0, 0.1), (11, 0.1), (12, 0.01), (23, 0.01), (24, 0.001)])
    def test_step_schedule(self, epoch, expected):
        assert lr_at(epoch, 0.1, [12, 24], 0.1) == pytest.approx(expected, rel=1e-12)
