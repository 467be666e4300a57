"""Scalar sigmoid gates and the affine fusion projection."""

import math

import numpy as np
import pytest

from fgpan.fusion import FusionParams, GateParams, fuse_heads, gate_head


class TestGate:
    def test_zero_gate_is_half(self):
        h = np.array([1.0, -2.0, 3.0])
        gamma, h_hat = gate_head(h, np.zeros(3), 0.0)
        assert gamma == 0.5
        np.testing.assert_array_equal(h_hat, 0.5 * h)

    def test_sigmoid_of_two(self):
        h = np.array([2.0, 0.0])
        gamma, _ = gate_head(h, np.array([1.0, 0.0]), 0.0)
        assert abs(gamma - 0.8807970779778823) < 1e-5

    def test_large_bias_saturates(self):
        h = np.array([0.3, -0.7])
        gamma, h_hat = gate_head(h, np.zeros(2), 20.0)
        assert abs(gamma - 1.0) < 1e-8
        np.testing.assert_allclose(h_hat, h, rtol=1e-8)

    def test_gamma_strictly_open_interval(self):
        """Strict bounds hold on the float64-representable pre-saturation range."""
        rng = np.random.default_rng(0)
        for _ in range(200):
            h = rng.standard_normal(4)
            w = rng.standard_normal(4)
            b = float(rng.uniform(-25, 25))
            gamma, _ = gate_head(h, w, b)
            assert 0.0 < gamma < 1.0

    def test_monotone_in_bias(self):
        rng = np.random.default_rng(1)
        h = rng.standard_normal(5)
        w = rng.standard_normal(5)
        gammas = [gate_head(h, w, b)[0] for b in np.linspace(-4, 4, 30)]
        assert all(b > a for a, b in zip(gammas, gammas[1:]))

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dimensions differ"):
            gate_head(np.zeros(3), np.zeros(2), 0.0)


class TestFusion:
    def test_identity_projection_single_head(self):
        v = np.array([1.0, 2.0, 3.0])
        fusion = FusionParams(np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(fuse_heads([v], fusion), v)

    def test_two_equal_heads_double(self):
        v = np.array([1.0, -1.0])
        fusion = FusionParams(np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(fuse_heads([v, v], fusion), 2 * v)

    def test_zero_inputs_give_offset(self):
        b = np.array([0.25, -0.5])
        fusion = FusionParams(np.eye(2), b)
        np.testing.assert_array_equal(fuse_heads([np.zeros(2), np.zeros(2)], fusion), b)

    def test_affine_in_inputs(self):
        """fuse(a + b) - b_f == (fuse(a) - b_f) + (fuse(b) - b_f)."""
        rng = np.random.default_rng(2)
        fusion = FusionParams(rng.standard_normal((4, 4)), rng.standard_normal(4))
        a = [rng.standard_normal(4) for _ in range(3)]
        b = [rng.standard_normal(4) for _ in range(3)]
        lhs = fuse_heads([x + y for x, y in zip(a, b)], fusion) - fusion.b_f
        rhs = (fuse_heads(a, fusion) - fusion.b_f) + (fuse_heads(b, fusion) - fusion.b_f)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_dim_mismatch(self):
        fusion = FusionParams(np.eye(3), np.zeros(3))
        with pytest.raises(ValueError, match="does not match"):
            fuse_heads([np.zeros(2)], fusion)

    def test_gate_params_validated(self):
        with pytest.raises(ValueError, match="w_g"):
            GateParams(np.zeros(3), np.zeros(1))
        with pytest.raises(ValueError, match="non-finite"):
            GateParams(np.full((1, 2), np.nan), np.zeros(1))
