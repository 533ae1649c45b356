import numpy as np
import pytest
from hypothesis import given, strategies as st

from gradlite.errors import DimError
from gradlite.feedback import (DeltaEstimate, correct, estimate_delta,
                               update_accumulator, zero_accumulator)
from gradlite.rng import SplitMix64

J32 = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])


class TestCorrect:
    def test_recovers_exact_gradient_in_worked_example(self):
        acc = update_accumulator(zero_accumulator(2, "ef-standard"),
                                 DeltaEstimate(np.array([1.0, 0.0]), True))
        assert np.array_equal(correct(np.array([0.0, 2.0]), acc), [1.0, 2.0])

    def test_zero_accumulator_is_identity(self):
        g = np.array([0.4, -0.2, 1.1])
        assert np.array_equal(correct(g, zero_accumulator(3)), g)

    def test_zero_gradient_passes_accumulator_through(self):
        acc = update_accumulator(zero_accumulator(2, "paper"),
                                 DeltaEstimate(np.array([3.0, -7.0]), True))
        assert np.array_equal(correct(np.zeros(2), acc), [3.0, -7.0])

    def test_dim_mismatch(self):
        with pytest.raises(DimError):
            correct(np.zeros(3), zero_accumulator(2))


class TestEstimateDelta:
    def test_hand_example(self):
        est = estimate_delta(J32, np.array([1.0, 1.0, 1.0]),
                             np.array([0.0, 2.0]), "exact")
        assert est.exact
        assert np.allclose(est.delta, [1.0, 0.0], atol=1e-12)

    def test_full_rank_residual_vanishes(self):
        stream = SplitMix64(12)
        a = stream.normal_matrix(6, 4)
        delta = stream.normals(6)
        from gradlite.linalg import matvec_t
        g = matvec_t(a, delta)
        est = estimate_delta(a, delta, g, "exact")
        assert np.linalg.norm(est.delta) <= 1e-10

    def test_probe_none_returns_zero_inexact(self):
        est = estimate_delta(None, None, np.array([1.0, 2.0]), "none")
        assert not est.exact
        assert np.array_equal(est.delta, [0.0, 0.0])

    def test_unknown_probe(self):
        with pytest.raises(ValueError):
            estimate_delta(J32, np.zeros(3), np.zeros(2), "sketchy")


class TestUpdateAccumulator:
    def test_paper_mode_adds(self):
        acc = zero_accumulator(2, "paper")
        acc = update_accumulator(acc, DeltaEstimate(np.array([1.0, 0.0]), True))
        assert np.array_equal(acc.r, [1.0, 0.0])

    def test_paper_mode_grows_without_bound_under_persistent_error(self):
        acc = zero_accumulator(2, "paper")
        step = DeltaEstimate(np.array([1.0, 0.0]), True)
        acc = update_accumulator(update_accumulator(acc, step), step)
        assert np.array_equal(acc.r, [2.0, 0.0])

    def test_standard_mode_replaces(self):
        acc = zero_accumulator(2, "ef-standard")
        acc = update_accumulator(acc, DeltaEstimate(np.array([5.0, 5.0]), True))
        acc = update_accumulator(acc, DeltaEstimate(np.array([1.0, 0.0]), True))
        assert np.array_equal(acc.r, [1.0, 0.0])

    def test_dim_mismatch(self):
        with pytest.raises(DimError):
            update_accumulator(zero_accumulator(2),
                               DeltaEstimate(np.zeros(3), True))


class TestAccumulatorAlgebra:
    @given(st.integers(0, 2**32), st.integers(1, 40))
    def test_paper_mode_closed_form_is_bitwise(self, seed, steps):
        stream = SplitMix64(seed)
        acc = zero_accumulator(5, "paper")
        running = np.zeros(5)
        for _ in range(steps):
            delta = stream.normals(5)
            acc = update_accumulator(acc, DeltaEstimate(delta, True))
            running = running + delta
        assert np.array_equal(acc.r, running)

    @given(st.integers(0, 2**32), st.integers(1, 40))
    def test_standard_mode_telescopes(self, seed, steps):
        # with r0 = 0 and exact residuals, sum(g^) = sum(g) - last residual
        stream = SplitMix64(seed)
        acc = zero_accumulator(4, "ef-standard")
        sum_ghat = np.zeros(4)
        sum_g = np.zeros(4)
        last = np.zeros(4)
        for _ in range(steps):
            g = stream.normals(4)
            g_tilde = stream.normals(4)
            ghat = correct(g_tilde, acc)
            est = DeltaEstimate(g - g_tilde, True)
            acc = update_accumulator(acc, est)
            sum_ghat += ghat
            sum_g += g
            last = est.delta
        assert np.linalg.norm(sum_ghat - sum_g + last) <= 1e-12 * (1.0 + steps)

    def test_zero_error_fixed_point_both_modes(self):
        for mode in ("paper", "ef-standard"):
            acc = zero_accumulator(3, mode)
            for _ in range(10):
                acc = update_accumulator(acc, DeltaEstimate(np.zeros(3), True))
                assert np.array_equal(acc.r, np.zeros(3))
                g = np.array([1.0, -2.0, 0.5])
                assert np.array_equal(correct(g, acc), g)
