"""Metric oracles: exact translation property of sliced W2, closed-form
Frechet distances on synthetic Gaussians, chance-level conditioning."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from addlab.datasets import DatasetSpec, make_points
from addlab.metrics import cond_accuracy, ffd, sliced_w2
from addlab.nets import pretrain_feature_network


class TestSlicedW2:
    def test_identical_sets_zero(self):
        a = np.random.default_rng(0).normal(size=(100, 2))
        assert sliced_w2(a, a) == 0.0

    def test_translation_exact_any_projections(self):
        # frame construction makes a pure shift score exactly its norm
        rng = np.random.default_rng(1)
        a = rng.normal(size=(200, 2))
        v = np.array([0.8, -0.6])
        for seed in (0, 1, 2, 99):
            d = sliced_w2(a, a + v, n_proj=128, seed=seed)
            assert abs(d - 1.0) < 1e-12

    def test_translation_exact_unequal_sizes(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(150, 3))
        v = np.array([1.0, 2.0, 2.0])
        d = sliced_w2(a[:100], a + v, n_proj=128, seed=7)
        base = sliced_w2(a[:100], a, n_proj=128, seed=7)
        # shift dominates; exact cancellation of the shift component
        assert abs(d - np.sqrt(9.0 + base**2)) < base  # loose sanity
        big = a + 100.0 * v
        assert abs(sliced_w2(a, big, n_proj=64, seed=3) - 300.0) < 0.5

    def test_same_distribution_calibration(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((10000, 2))
        b = rng.standard_normal((10000, 2))
        assert sliced_w2(a, b, n_proj=128, seed=0) < 0.05

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(64, 2)), rng.normal(size=(80, 2))
        assert abs(sliced_w2(a, b, seed=5) - sliced_w2(b, a, seed=5)) < 1e-12

    def test_triangle_inequality_fixed_projections(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(64, 2))
        b = rng.normal(size=(64, 2)) + 1.0
        c = rng.normal(size=(64, 2)) - 1.0
        ab = sliced_w2(a, b, seed=11)
        bc = sliced_w2(b, c, seed=11)
        ac = sliced_w2(a, c, seed=11)
        assert ac <= ab + bc + 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
        perm = rng.permutation(50)
        assert sliced_w2(a, b, seed=1) == sliced_w2(a[perm], b, seed=1)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sliced_w2(np.zeros((4, 2)), np.zeros((4, 3)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sliced_w2(np.zeros((0, 2)), np.zeros((4, 2)))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**16), shift=st.floats(-3, 3))
    def test_translation_property(self, seed, shift):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(40, 2))
        v = np.array([shift, -shift / 2])
        d = sliced_w2(a, a + v, n_proj=32, seed=seed)
        assert abs(d - np.linalg.norm(v)) < 1e-10


class TestFFD:
    def test_identical_sets_near_zero(self):
        feats = np.random.default_rng(0).normal(size=(200, 8))
        assert ffd(feats, feats) <= 1e-8

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(150, 6)), 0.5 * rng.normal(size=(180, 6)) + 1.0
        assert abs(ffd(a, b) - ffd(b, a)) < 1e-8

    def test_mean_shift_closed_form(self):
        # equal covariance I, means d apart -> distance d^2 (within 5%)
        rng = np.random.default_rng(2)
        d_vec = np.array([2.0, 0.0, 0.0, 0.0])
        a = rng.standard_normal((20000, 4))
        b = rng.standard_normal((20000, 4)) + d_vec
        val = ffd(a, b)
        assert abs(val - 4.0) < 0.2

    def test_needs_enough_points(self):
        with pytest.raises(ValueError):
            ffd(np.zeros((4, 8)), np.zeros((100, 8)))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(50, 4)), rng.normal(size=(60, 4))
        perm = rng.permutation(50)
        assert ffd(a[perm], b) == ffd(a, b)

    def test_nonnegative_scale_variation(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(500, 5))
        b = 2.0 * rng.normal(size=(500, 5))
        assert ffd(a, b) > 0


class TestCondAccuracy:
    @pytest.fixture(scope="class")
    def featnet_and_data(self):
        points, labels = make_points(DatasetSpec("ring_mixture", 8, 4000, 0.1), 0)
        net = pretrain_feature_network(points[:3600], labels[:3600], 8, epochs=15, seed=0)
        return net, points[3600:], labels[3600:]

    def test_real_data_accuracy_high(self, featnet_and_data):
        net, held, held_lab = featnet_and_data
        assert cond_accuracy(held, held_lab, net) >= 0.9

    def test_permuted_labels_chance_level(self, featnet_and_data):
        net, held, held_lab = featnet_and_data
        shuffled = np.roll(held_lab, 1)
        changed = shuffled != held_lab
        acc = cond_accuracy(held[changed], shuffled[changed], net)
        assert acc < 0.1  # chance is 1/8 among wrong labels

    def test_single_class_well_defined(self, featnet_and_data):
        net, held, held_lab = featnet_and_data
        mask = held_lab == 0
        acc = cond_accuracy(held[mask], held_lab[mask], net)
        assert 0.0 <= acc <= 1.0

    def test_unconditional_rejected(self, featnet_and_data):
        net, held, _ = featnet_and_data
        with pytest.raises(ValueError):
            cond_accuracy(held, None, net)

    def test_length_mismatch(self, featnet_and_data):
        net, held, held_lab = featnet_and_data
        with pytest.raises(ValueError):
            cond_accuracy(held, held_lab[:5], net)
