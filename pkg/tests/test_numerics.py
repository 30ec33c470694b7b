import math

import numpy as np
import pytest

from deltamem.numerics import (
    Rng,
    as_matrix,
    causal_mask,
    matmul,
    row_softmax,
    tri_inverse_logdepth,
    tri_inverse_padded,
    tri_solve_unit_lower,
)
from deltamem.numerics import _doubling_iterates, _logdepth_steps


def naive_matmul(a, b):
    """Triple-loop oracle for the matrix product."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_hand_checked(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0], [1.0]]))
        assert np.array_equal(out, np.array([[2.0], [4.0]]))

    def test_against_triple_loop(self):
        rng = Rng(7)
        a = rng.normal((7, 5))
        b = rng.normal((5, 3))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestRowSoftmax:
    def test_symmetry(self):
        out = row_softmax(np.array([[0.0, 0.0]]))
        assert np.allclose(out, [[0.5, 0.5]], atol=1e-15)

    def test_large_entries_stable(self):
        out = row_softmax(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0)
        assert out[0, 1] == 0.0

    def test_causal_first_row(self):
        t = 4
        out = row_softmax(np.zeros((t, t)), mask=causal_mask(t))
        assert out[0, 0] == 1.0
        assert np.all(out[0, 1:] == 0.0)

    def test_rows_sum_to_one_and_shift_invariant(self):
        rng = Rng(3)
        a = rng.normal((6, 6)) * 10
        mask = causal_mask(6)
        out = row_softmax(a, mask=mask)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-12
        shifted = row_softmax(a + 3.7, mask=mask)
        assert np.allclose(out, shifted, atol=1e-12)

    def test_fully_masked_row_errors(self):
        with pytest.raises(ValueError, match="masked"):
            row_softmax(np.zeros((3, 3)), mask=causal_mask(3, strict=True))


def random_strictly_lower(rng, c):
    # Scaled by 1/(2*sqrt(c)) so the unit-lower inverse stays O(1); raw
    # Gaussian triangles have inverses that overflow float64 by c ~ 100.
    return np.tril(rng.normal((c, c)), k=-1) / (2.0 * np.sqrt(c))


class TestTriSolve:
    def test_zero_system_is_identity(self):
        rhs = Rng(1).normal((4, 2))
        assert np.allclose(tri_solve_unit_lower(np.zeros((4, 4)), rhs), rhs)

    def test_two_by_two(self):
        c = 0.7
        a = np.array([[0.0, 0.0], [c, 0.0]])
        rhs = np.array([[1.0, 2.0], [3.0, 4.0]])
        x = tri_solve_unit_lower(a, rhs)
        assert np.allclose(x[0], rhs[0])
        assert np.allclose(x[1], rhs[1] - c * rhs[0])

    def test_residual_random(self):
        rng = Rng(11)
        a = random_strictly_lower(rng, 16)
        rhs = rng.normal((16, 5))
        x = tri_solve_unit_lower(a, rhs)
        residual = (np.eye(16) + a) @ x - rhs
        assert np.max(np.abs(residual)) < 1e-10

    def test_non_square_errors(self):
        with pytest.raises(ValueError, match="square"):
            tri_solve_unit_lower(np.zeros((3, 4)), np.zeros((3, 2)))


class TestTriInverseLogdepth:
    def test_zero_gives_identity(self):
        assert np.array_equal(tri_inverse_logdepth(np.zeros((4, 4))), np.eye(4))

    def test_two_by_two_exact(self):
        c = -1.3
        a = np.array([[0.0, 0.0], [c, 0.0]])
        assert np.array_equal(tri_inverse_logdepth(a), np.array([[1.0, 0.0], [-c, 1.0]]))

    def test_residual_c64(self):
        a = random_strictly_lower(Rng(5), 64)
        inv = tri_inverse_logdepth(a)
        assert np.max(np.abs((np.eye(64) + a) @ inv - np.eye(64))) < 1e-9

    @pytest.mark.parametrize("c", [2, 4, 8, 16, 32, 64, 128])
    def test_matches_tri_solve_on_identity(self, c):
        a = random_strictly_lower(Rng(c), c)
        inv = tri_inverse_logdepth(a)
        ref = tri_solve_unit_lower(a, np.eye(c))
        assert np.max(np.abs(inv - ref)) < 1e-9

    @pytest.mark.parametrize("c", [2, 4, 8, 16, 32, 64, 128])
    def test_iteration_count_is_log2(self, c):
        a = random_strictly_lower(Rng(c), c)
        n_steps = sum(1 for _ in _doubling_iterates(a))
        assert n_steps == int(math.log2(c))
        assert _logdepth_steps(c) == int(math.log2(c))

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError, match="power of two"):
            tri_inverse_logdepth(np.zeros((5, 5)))

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValueError, match="strictly lower"):
            tri_inverse_logdepth(np.eye(4))

    def test_padded_handles_general_size(self):
        a = random_strictly_lower(Rng(9), 11)
        inv = tri_inverse_padded(a)
        assert np.max(np.abs((np.eye(11) + a) @ inv - np.eye(11))) < 1e-9


class TestAsMatrix:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite"):
            as_matrix([[1.0, float("nan")]])

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError, match="2-D"):
            as_matrix([1.0, 2.0])


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(123).normal((100,))
        b = Rng(123).normal((100,))
        assert np.array_equal(a, b)

    def test_different_seed_different_stream(self):
        assert not np.array_equal(Rng(1).normal((50,)), Rng(2).normal((50,)))

    def test_split_streams_independent_and_stable(self):
        root = Rng(9)
        a = root.split(0).normal((20,))
        b = root.split(1).normal((20,))
        assert not np.array_equal(a, b)
        assert np.array_equal(a, Rng(9).split(0).normal((20,)))

    def test_normal_moments(self):
        z = Rng(42).normal((200_000,))
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01

    def test_integers_in_range(self):
        v = Rng(4).integers(0, 10, (1000,))
        assert v.min() >= 0 and v.max() < 10
