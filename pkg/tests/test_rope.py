import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import rotate_head_vector
from synattn import (
    RopeConfig,
    ShapeError,
    apply_rope,
    frequencies,
    oracle_rotation_matrix,
    rotate_tokens,
    rotation_angles,
    scaled_inner_product,
)

FULL = RopeConfig()  # 24 heads x 128, splits (16, 56, 56)
TOY = RopeConfig(head_dim=16, axis_dims=(4, 6, 6), num_heads=2)

vectors16 = arrays(np.float64, (16,), elements=st.floats(-10.0, 10.0))
positions = arrays(np.float64, (3,), elements=st.floats(-32.0, 32.0))
weights = st.floats(0.0, 1.0)


class TestConfig:
    def test_defaults_are_full_scale(self):
        assert FULL.head_dim == 128
        assert FULL.axis_dims == (16, 56, 56)
        assert FULL.num_heads == 24
        assert FULL.d_model == 3072

    def test_axis_sum_must_match(self):
        with pytest.raises(ValueError):
            RopeConfig(head_dim=16, axis_dims=(4, 6, 4))

    def test_axis_dims_must_be_even(self):
        with pytest.raises(ValueError):
            RopeConfig(head_dim=16, axis_dims=(3, 6, 7))

    def test_theta_base_above_one(self):
        with pytest.raises(ValueError):
            RopeConfig(head_dim=16, axis_dims=(4, 6, 6), theta_base=1.0)


class TestFrequencies:
    def test_first_frequency_is_one(self):
        assert frequencies(56, 10000.0)[0] == 1.0

    def test_direct_evaluation_at_k27(self):
        # 10000 ** (-54 / 56), roughly 1.3895e-4
        expected = 10000.0 ** (-54.0 / 56.0)
        got = frequencies(56, 10000.0)[27]
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(1.3895e-4, rel=1e-4)

    def test_minimal_axis(self):
        np.testing.assert_array_equal(frequencies(2, 10000.0), [1.0])

    def test_strictly_decreasing(self):
        f = frequencies(56, 10000.0)
        assert np.all(np.diff(f) < 0)

    def test_odd_axis_rejected(self):
        with pytest.raises(ValueError):
            frequencies(7, 10000.0)


class TestApplyRope:
    def test_zero_weight_is_identity(self):
        rng = np.random.default_rng(31)
        v = rng.normal(size=128)
        pos = rng.uniform(-9, 9, size=3)
        np.testing.assert_array_equal(apply_rope(v, pos, 0.0, FULL), v)

    def test_zero_position_is_identity(self):
        rng = np.random.default_rng(32)
        v = rng.normal(size=128)
        np.testing.assert_array_equal(apply_rope(v, (0.0, 0.0, 0.0), 1.0, FULL), v)

    def test_against_oracle_matrix(self):
        rng = np.random.default_rng(33)
        v = rng.normal(size=128)
        pos = np.array([0.0, 3.0, 5.0])
        got = apply_rope(v, pos, 1.0, FULL)
        want = oracle_rotation_matrix(pos, 1.0, FULL) @ v
        assert np.abs(got - want).max() <= 1e-9

    def test_against_longhand_rotation(self):
        rng = np.random.default_rng(34)
        v = rng.normal(size=16)
        pos = rng.uniform(-5, 5, size=3)
        want = rotate_head_vector(v, pos, 0.37, TOY.axis_dims, TOY.theta_base)
        assert np.abs(apply_rope(v, pos, 0.37, TOY) - want).max() <= 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            apply_rope(np.ones(64), (0, 1, 2), 1.0, FULL)

    @given(vectors16, positions, weights)
    def test_norm_preserved(self, v, pos, w):
        rotated = apply_rope(v, pos, w, TOY)
        assert abs(np.linalg.norm(rotated) - np.linalg.norm(v)) <= 1e-12

    @given(vectors16, positions, positions, weights)
    def test_composition_adds_positions(self, v, p1, p2, w):
        twice = apply_rope(apply_rope(v, p1, w, TOY), p2, w, TOY)
        once = apply_rope(v, np.asarray(p1) + np.asarray(p2), w, TOY)
        assert np.abs(twice - once).max() <= 1e-9


class TestOracleMatrix:
    def test_zero_position_gives_identity(self):
        np.testing.assert_array_equal(
            oracle_rotation_matrix((0.0, 0.0, 0.0), 1.0, FULL), np.eye(128)
        )

    @given(positions, weights)
    @settings(max_examples=25)
    def test_orthogonality(self, pos, w):
        r = oracle_rotation_matrix(pos, w, TOY)
        assert np.abs(r.T @ r - np.eye(TOY.head_dim)).max() <= 1e-12

    def test_half_weight_equals_prescaled_position(self):
        rng = np.random.default_rng(35)
        pos = rng.uniform(-9, 9, size=3)
        a = oracle_rotation_matrix(pos, 0.5, FULL)
        b = oracle_rotation_matrix(0.5 * pos, 1.0, FULL)
        np.testing.assert_array_equal(a, b)


class TestScaledInnerProduct:
    def test_equal_positions_give_plain_dot(self):
        rng = np.random.default_rng(36)
        q, k = rng.normal(size=(2, 128))
        pos = np.array([0.0, 4.0, 2.0])
        got = scaled_inner_product(q, k, pos, pos, 0.8, FULL)
        assert got == pytest.approx(float(q @ k), abs=1e-12)

    def test_zero_weight_gives_plain_dot_exactly(self):
        rng = np.random.default_rng(37)
        q, k = rng.normal(size=(2, 128))
        got = scaled_inner_product(q, k, (0, 1, 2), (0, 5, 3), 0.0, FULL)
        assert got == float(np.dot(q, k))

    def test_matches_displacement_matrix_form(self):
        rng = np.random.default_rng(38)
        q, k = rng.normal(size=(2, 128))
        pos_q = np.array([0.0, 2.0, 7.0])
        pos_k = np.array([0.0, 5.0, 1.0])
        got = scaled_inner_product(q, k, pos_q, pos_k, 0.3, FULL)
        want = q @ oracle_rotation_matrix(pos_k - pos_q, 0.3, FULL) @ k
        assert got == pytest.approx(float(want), abs=1e-9)

    @given(vectors16, vectors16, positions, positions, positions)
    def test_translation_invariance(self, q, k, pos_q, pos_k, offset):
        a = scaled_inner_product(q, k, pos_q, pos_k, 1.0, TOY)
        b = scaled_inner_product(
            q, k, np.asarray(pos_q) + offset, np.asarray(pos_k) + offset, 1.0, TOY
        )
        assert abs(a - b) <= 1e-9

    @given(vectors16, vectors16, positions, positions, weights)
    def test_scaling_linearity(self, q, k, pos_q, pos_k, w):
        a = scaled_inner_product(q, k, pos_q, pos_k, w, TOY)
        b = scaled_inner_product(q, k, w * np.asarray(pos_q), w * np.asarray(pos_k), 1.0, TOY)
        assert abs(a - b) <= 1e-9


class TestRotateTokens:
    def test_each_head_matches_single_vector_path(self):
        rng = np.random.default_rng(39)
        tokens = rng.normal(size=(5, TOY.d_model))
        pos = rng.uniform(-6, 6, size=(5, 3))
        got = rotate_tokens(tokens, pos, 0.6, TOY)
        for r in range(5):
            for h in range(TOY.num_heads):
                seg = slice(h * TOY.head_dim, (h + 1) * TOY.head_dim)
                want = apply_rope(tokens[r, seg], pos[r], 0.6, TOY)
                assert np.abs(got[r, seg] - want).max() <= 1e-12

    def test_rejects_wrong_widths(self):
        with pytest.raises(ShapeError):
            rotate_tokens(np.ones((2, 8)), np.zeros((2, 3)), 1.0, TOY)
        with pytest.raises(ShapeError):
            rotate_tokens(np.ones((2, TOY.d_model)), np.zeros((3, 3)), 1.0, TOY)


def test_rotation_angles_scale_positions_first():
    # angles for (pos, w) and (w * pos, 1) agree down to the float
    rng = np.random.default_rng(40)
    pos = rng.uniform(-9, 9, size=3)
    np.testing.assert_array_equal(
        rotation_angles(pos, 0.25, FULL), rotation_angles(0.25 * pos, 1.0, FULL)
    )
