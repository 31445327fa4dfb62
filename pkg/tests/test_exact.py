import math

import numpy as np
import pytest

from isinggame.exact import OracleInfeasible, brute_force, exact, transfer_matrix
from isinggame.model import IsingModel, ModelClass, all_assignments, generate_model, grid_model, potential

from conftest import pair_model, random_graph_model, single_node


def naive_enumeration(model):
    """Direct exp-sum over every state; fine for small, weakly coupled models."""
    xs = all_assignments(model.n).astype(float)
    psi = np.array([potential(model, x) for x in xs])
    p = np.exp(psi)
    z = p.sum()
    return (p @ (xs > 0)) / z, math.log(z)


class TestBruteForce:
    def test_single_node(self):
        res = brute_force(single_node(1.0))
        assert res.marginals[0] == pytest.approx(math.e / (math.e + 1 / math.e), abs=1e-12)
        assert res.marginals[0] == pytest.approx(0.8807971, abs=1e-7)

    @pytest.mark.parametrize("n", [1, 4, 9])
    def test_zero_model(self, n):
        m = IsingModel(n, np.zeros((0, 2), dtype=np.int64), [], np.zeros(n))
        res = brute_force(m)
        np.testing.assert_allclose(res.marginals, 0.5, atol=1e-15)
        assert res.log_Z == pytest.approx(n * math.log(2), abs=1e-12)

    def test_pair_correlation(self):
        res = brute_force(pair_model(1.0))
        assert res.marginals[0] == pytest.approx(0.5, abs=1e-15)
        # 2e^1 states aligned, 2e^-1 anti-aligned
        expected = (2 * math.e - 2 / math.e) / (2 * math.e + 2 / math.e)
        assert res.edge_corr[0] == pytest.approx(expected, abs=1e-14)
        assert res.edge_corr[0] == pytest.approx(math.tanh(1.0), abs=1e-14)

    def test_matches_naive(self, rng):
        for _ in range(10):
            m = random_graph_model(rng, int(rng.integers(2, 9)), 4, scale=1.0)
            p, lz = naive_enumeration(m)
            res = brute_force(m)
            np.testing.assert_allclose(res.marginals, p, atol=1e-12)
            assert res.log_Z == pytest.approx(lz, abs=1e-10)

    def test_strong_coupling_no_overflow(self):
        m = generate_model(4, ModelClass("signprob", 400.0, 1.0), 0)
        res = brute_force(m)
        assert np.isfinite(res.log_Z)
        assert np.all((res.marginals >= 0) & (res.marginals <= 1))

    def test_cap(self):
        m = generate_model(6, ModelClass("mixed", 1.0), 0)
        with pytest.raises(OracleInfeasible, match="transfer"):
            brute_force(m)

    def test_spans_multiple_blocks(self, rng):
        # n = 18 enumerates in four blocks of 2**16 states
        m = random_graph_model(rng, 18, 10, scale=1.5)
        res = brute_force(m)
        sub = brute_force(m.with_biases(-m.biases))
        np.testing.assert_allclose(res.marginals, 1 - sub.marginals, atol=1e-12)
        assert res.log_Z == pytest.approx(sub.log_Z, abs=1e-10)


class TestTransferMatrix:
    def test_zero_grid(self):
        res = transfer_matrix(grid_model(3, np.zeros(12), np.zeros(9)))
        np.testing.assert_allclose(res.marginals, 0.5, atol=1e-15)
        assert res.log_Z == pytest.approx(9 * math.log(2), abs=1e-12)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_agrees_with_brute_force(self, d):
        for seed in range(5):
            m = generate_model(d, ModelClass("mixed", 4.0), seed)
            a, b = brute_force(m), transfer_matrix(m)
            assert np.abs(a.marginals - b.marginals).max() <= 1e-10
            assert abs(a.log_Z - b.log_Z) <= 1e-9

    def test_spin_flip(self):
        m = generate_model(5, ModelClass("mixed", 3.0), 4)
        a = transfer_matrix(m)
        b = transfer_matrix(m.with_biases(-m.biases))
        np.testing.assert_allclose(a.marginals, 1 - b.marginals, atol=1e-12)

    def test_rejects_non_grid(self):
        with pytest.raises(OracleInfeasible):
            transfer_matrix(pair_model(1.0))

    def test_cap(self):
        m = generate_model(5, ModelClass("mixed", 1.0), 0)
        with pytest.raises(OracleInfeasible):
            transfer_matrix(m, cap=4)


class TestExactDispatch:
    def test_log_z_dominates_potential(self, rng):
        m = generate_model(6, ModelClass("mixed", 4.0), 2)
        lz = exact(m).log_Z
        for _ in range(100):
            assert lz >= potential(m, rng.choice([-1, 1], m.n))

    def test_methods_agree(self):
        m = generate_model(3, ModelClass("attractive", 2.0), 1)
        a, b, c = exact(m), exact(m, "brute"), exact(m, "transfer")
        np.testing.assert_allclose(a.marginals, b.marginals, atol=1e-12)
        np.testing.assert_allclose(a.marginals, c.marginals, atol=1e-10)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            exact(pair_model(1.0), "magic")

    def test_infeasible(self, rng):
        m = random_graph_model(rng, 30, 5)
        with pytest.raises(OracleInfeasible):
            exact(m)
