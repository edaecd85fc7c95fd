import itertools

import numpy as np
import pytest

from surrobench.basis import BasisSpec
from surrobench.cross import (CrossConfig, OracleFunction, _CrossState, _Grid, fit_gradient_cross,
                              local_ls_update, maxvol)
from surrobench.errors import PivotError
from surrobench.metrics import err2
from surrobench.tt import FunctionalTT, TensorTrain, tt_eval, tt_grad


class TestMaxvol:
    def test_identity_block(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        assert sorted(maxvol(a)) == [0, 1]

    def test_single_column(self):
        np.testing.assert_array_equal(maxvol(np.array([[1.0], [2.0], [3.0]])), [2])

    def test_tie_goes_to_lowest_row(self):
        np.testing.assert_array_equal(maxvol(np.array([[3.0], [-3.0], [1.0]])), [0])

    @pytest.mark.parametrize("delta", [1e-2, 0.05])
    def test_dominance(self, rng, delta):
        for _ in range(20):
            a = rng.standard_normal((50, 5))
            rows = maxvol(a, delta)
            assert len(set(rows.tolist())) == 5
            assert np.abs(a @ np.linalg.inv(a[rows])).max() <= 1 + delta + 1e-12

    def test_rank_deficient(self):
        a = np.ones((6, 2))
        with pytest.raises(PivotError) as info:
            maxvol(a, mode=3)
        assert info.value.mode == 3


class TestOracle:
    def test_distinct_counting(self):
        calls = []
        o = OracleFunction(value=lambda x: (calls.append(len(x)), x.sum(axis=1))[1],
                           grad=lambda x: np.ones_like(x))
        x = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 2.0]])
        v, g = o.query(x)
        np.testing.assert_array_equal(v, [1.0, 1.0, 3.0])
        assert o.n_queries == 2
        o.query(x[:1])
        assert o.n_queries == 2 and o.n_evaluations == 2

    def test_needs_value(self):
        with pytest.raises(ValueError):
            OracleFunction()

    def test_gradient_required_for_lambda(self):
        o = OracleFunction(value=lambda x: x[:, 0])
        with pytest.raises(ValueError):
            fit_gradient_cross(o, [BasisSpec(3)] * 2, CrossConfig(gradient_weight=1.0))


def _oracle_from_ftt(target):
    return OracleFunction(value_and_grad=lambda x: (tt_eval(target, x), tt_grad(target, x)))


class TestLocalUpdate:
    def test_constant_target(self):
        bases = [BasisSpec(4)] * 3
        grid = _Grid(bases)
        for lam in (0.0,):
            cfg = CrossConfig(gradient_weight=lam)
            state = _CrossState(grid, cfg)
            o = OracleFunction(value=lambda x: np.full(len(x), 2.5), grad=lambda x: np.zeros_like(x))
            core, f, _ = local_ls_update(0, state.sets, o, cfg, grid)
            # first core in the right-interface gauge: values on the cross are reproduced
            nodal = np.einsum("jm,pms->pjs", grid.psi[0], core)
            np.testing.assert_allclose(nodal, f, atol=1e-12)
            np.testing.assert_allclose(f, 2.5)


class TestFit:
    def test_constant_converges_fast(self):
        o = OracleFunction(value=lambda x: np.full(len(x), -1.5), grad=lambda x: np.zeros_like(x))
        ftt, stats = fit_gradient_cross(o, [BasisSpec(5)] * 4, CrossConfig(tol_stop=1e-8))
        assert stats.converged and stats.sweeps <= 2
        assert stats.final_ranks == (1, 1, 1)
        np.testing.assert_allclose(ftt(np.zeros(4)), -1.5, atol=1e-12)

    def test_interpolation_at_cross_when_lambda_zero(self, rng):
        target = FunctionalTT(TensorTrain.random((4, 4, 4), (3, 3), rng), (BasisSpec(4),) * 3)
        o = _oracle_from_ftt(target)
        ftt, stats = fit_gradient_cross(o, [BasisSpec(4)] * 3, CrossConfig(gradient_weight=0.0, tol_stop=1e-10))
        x, y = o.samples()
        np.testing.assert_allclose(ftt(x), y, atol=1e-9 * np.abs(y).max())

    @pytest.mark.parametrize("lam", [0.0, 1.0])
    def test_exact_recovery(self, rng, lam):
        target = FunctionalTT(TensorTrain.random((5, 5, 5), (2, 2), rng), (BasisSpec(5),) * 3)
        o = _oracle_from_ftt(target)
        ftt, stats = fit_gradient_cross(o, [BasisSpec(5)] * 3, CrossConfig(gradient_weight=lam, tol_stop=1e-9))
        x = rng.uniform(-1, 1, (1000, 3))
        assert err2(ftt(x), target(x)) <= 1e-8
        assert stats.extra["index_sets_nested"]

    @pytest.mark.parametrize("lam", [0.0, 1.0])
    def test_quadratic_recovered(self, rng, lam):
        a = rng.standard_normal((3, 3))
        f = lambda x: np.einsum("pi,ij,pj->p", x, a, x) + x[:, 0]
        grad = lambda x: x @ (a + a.T) + np.array([1.0, 0.0, 0.0])
        o = OracleFunction(value=f, grad=grad)
        ftt, stats = fit_gradient_cross(o, [BasisSpec(3)] * 3, CrossConfig(gradient_weight=lam, tol_stop=1e-10))
        xt = rng.uniform(-1, 1, (200, 3))
        np.testing.assert_allclose(ftt(xt), f(xt), atol=1e-9)
        np.testing.assert_allclose(ftt.grad(xt), grad(xt), atol=1e-8)
        assert max(stats.final_ranks) <= 4

    def test_stopping_rule(self):
        o = OracleFunction(value=lambda x: np.exp(-x.sum(axis=1) / 8), grad=lambda x: -np.exp(-x.sum(axis=1) / 8)[:, None] / 8 * np.ones_like(x))
        _, stats = fit_gradient_cross(o, [BasisSpec(6)] * 4, CrossConfig(tol_stop=1e-6))
        hist = stats.extra["history"]
        assert all(np.isfinite(hist))
        assert stats.converged and hist[-1] < 1e-6 and all(h >= 1e-6 for h in hist[:-1])

    def test_not_converged_flag(self):
        o = OracleFunction(value=lambda x: np.exp(-np.prod(x, axis=1)))
        _, stats = fit_gradient_cross(o, [BasisSpec(5, (0, 2))] * 6,
                                      CrossConfig(gradient_weight=0.0, tol_stop=1e-14, max_sweeps=2))
        assert not stats.converged and stats.sweeps == 2

    def test_sample_accounting(self):
        o = OracleFunction(value=lambda x: np.cos(x.sum(axis=1)))
        _, stats = fit_gradient_cross(o, [BasisSpec(4)] * 5, CrossConfig(gradient_weight=0.0, max_sweeps=3))
        assert stats.n_train_samples == o.n_queries <= stats.extra["n_evaluations"] + 0
        assert o.n_evaluations == o.n_queries

    @pytest.mark.parametrize("lam", [0.0, 1.0])
    def test_one_sweep_matches_dense_least_squares(self, rng, lam):
        a = rng.standard_normal((3, 3))
        f = lambda x: np.einsum("pi,ij,pj->p", x, a, x) + x[:, 0]
        grad = lambda x: x @ (a + a.T) + np.array([1.0, 0.0, 0.0])
        bases = [BasisSpec(3)] * 3
        o = OracleFunction(value=f, grad=grad)
        ftt, stats = fit_gradient_cross(o, bases, CrossConfig(gradient_weight=lam, max_sweeps=1, init_rank=3))
        assert stats.sweeps == 1
        idx = list(itertools.product(range(3), repeat=3))

        def design(z, j=None):
            return np.column_stack([np.prod([(bases[k].deriv if k == j else bases[k])(z[:, k])[:, m[k]]
                                             for k in range(3)], axis=0) for m in idx])

        x, y = o.samples()
        w = np.sqrt(lam / 3)
        rows = np.vstack([design(x)] + [w * design(x, j) for j in range(3)])
        rhs = np.concatenate([y] + [w * grad(x)[:, j] for j in range(3)])
        assert np.linalg.matrix_rank(rows) == 27
        coef = np.linalg.lstsq(rows, rhs, rcond=None)[0]
        xt = rng.uniform(-1, 1, (200, 3))
        np.testing.assert_allclose(ftt(xt), design(xt) @ coef, atol=1e-8)
