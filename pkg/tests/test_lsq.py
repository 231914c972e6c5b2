import itertools

import numpy as np
import pytest

from descsearch.lsq import (
    RANK_TOL_FACTOR,
    fill_combinations,
    fit_tuple_kernel,
    householder_qr,
    score_tuples,
)

from _oracles import normal_equations_fit


def _random_problem(rng, m=12, s=30):
    values = rng.uniform(0.5, 2.0, size=(m, s))
    y = rng.standard_normal(s)
    bounds = np.array([0, s], dtype=np.int64)
    return values, y, bounds


class TestHouseholderQr:
    def test_orthonormal_and_reconstructs(self, rng):
        for s, p in ((5, 3), (12, 4), (30, 7), (4, 4)):
            A = rng.standard_normal((s, p))
            Q, R = householder_qr(A)
            assert Q.shape == (s, p) and R.shape == (p, p)
            assert np.linalg.norm(Q.T @ Q - np.eye(p)) <= 1e-12
            assert np.linalg.norm(Q @ R - A) <= 1e-12 * max(1.0, np.linalg.norm(A))
            assert np.allclose(R, np.triu(R))

    def test_rejects_wide_matrix(self):
        with pytest.raises(ValueError):
            householder_qr(np.ones((2, 3)))

    def test_diagonal_flags_dependent_columns(self, rng):
        A = rng.standard_normal((10, 3))
        A[:, 2] = 2.0 * A[:, 0] - A[:, 1]
        _, R = householder_qr(A)
        diag = np.abs(np.diag(R))
        assert diag[2] < 1e-10 * diag.max()


class TestScoreTuples:
    def test_matches_normal_equations(self, rng, warm_kernels):
        values, y, bounds = _random_problem(rng)
        s = values.shape[1]
        tuples = np.array(list(itertools.combinations(range(values.shape[0]), 2)), dtype=np.int64)
        out = np.empty(len(tuples), dtype=np.float64)
        score_tuples(values, y, bounds, tuples, RANK_TOL_FACTOR["fp64"], out)
        for t, tup in enumerate(tuples):
            X = np.column_stack([values[tup[0]], values[tup[1]], np.ones(s)])
            _, ssr = normal_equations_fit(X, y)
            assert out[t] == pytest.approx(ssr / s, rel=1e-9, abs=1e-14)

    def test_multitask_pools_residuals(self, rng, warm_kernels):
        values, y, _ = _random_problem(rng, m=6, s=24)
        s = values.shape[1]
        bounds = np.array([0, 10, 24], dtype=np.int64)
        tuples = np.array([[1, 4]], dtype=np.int64)
        out = np.empty(1, dtype=np.float64)
        score_tuples(values, y, bounds, tuples, RANK_TOL_FACTOR["fp64"], out)
        total = 0.0
        for lo, hi in ((0, 10), (10, 24)):
            X = np.column_stack([values[1, lo:hi], values[4, lo:hi], np.ones(hi - lo)])
            _, ssr = normal_equations_fit(X, y[lo:hi])
            total += ssr
        assert out[0] == pytest.approx(total / s, rel=1e-9)

    def test_duplicate_feature_scores_inf(self, rng, warm_kernels):
        values, y, bounds = _random_problem(rng, m=4)
        values[3] = values[1]
        tuples = np.array([[0, 2], [1, 3]], dtype=np.int64)
        out = np.empty(2, dtype=np.float64)
        score_tuples(values, y, bounds, tuples, RANK_TOL_FACTOR["fp64"], out)
        assert np.isfinite(out[0])
        assert out[1] == np.inf

    def test_constant_feature_collides_with_intercept(self, rng, warm_kernels):
        values, y, bounds = _random_problem(rng, m=3)
        values[2] = 4.25
        tuples = np.array([[0, 2]], dtype=np.int64)
        out = np.empty(1, dtype=np.float64)
        score_tuples(values, y, bounds, tuples, RANK_TOL_FACTOR["fp64"], out)
        assert out[0] == np.inf

    def test_fp32_close_to_fp64(self, rng, warm_kernels):
        values, y, bounds = _random_problem(rng, m=8)
        tuples = np.array(list(itertools.combinations(range(8), 2)), dtype=np.int64)
        out64 = np.empty(len(tuples), dtype=np.float64)
        out32 = np.empty(len(tuples), dtype=np.float64)
        score_tuples(values, y, bounds, tuples, RANK_TOL_FACTOR["fp64"], out64)
        score_tuples(
            values.astype(np.float32),
            y.astype(np.float32),
            bounds,
            tuples,
            RANK_TOL_FACTOR["fp32"],
            out32,
        )
        assert np.allclose(out32, out64, rtol=1e-3, atol=1e-5)

    def test_independent_of_batch_split(self, rng, warm_kernels):
        # scoring tuple by tuple must agree bitwise with one big batch
        values, y, bounds = _random_problem(rng, m=7)
        tuples = np.array(list(itertools.combinations(range(7), 3)), dtype=np.int64)
        whole = np.empty(len(tuples), dtype=np.float64)
        score_tuples(values, y, bounds, tuples, RANK_TOL_FACTOR["fp64"], whole)
        for t in range(len(tuples)):
            one = np.empty(1, dtype=np.float64)
            score_tuples(values, y, bounds, tuples[t : t + 1], RANK_TOL_FACTOR["fp64"], one)
            assert one[0] == whole[t]


class TestFitTupleKernel:
    def test_frozen_line(self, warm_kernels):
        # x = [0, 1, 2], y = [1, 2, 4]: slope 3/2, intercept 5/6, ssr 1/6
        values = np.array([[0.0, 1.0, 2.0]])
        y = np.array([1.0, 2.0, 4.0])
        bounds = np.array([0, 3], dtype=np.int64)
        coef = np.empty((1, 2), dtype=np.float64)
        ssr = np.empty(1, dtype=np.float64)
        ok = fit_tuple_kernel(values, y, bounds, np.array([0], dtype=np.int64), 1e-10, coef, ssr)
        assert ok
        assert coef[0, 0] == pytest.approx(1.5, abs=1e-14)
        assert coef[0, 1] == pytest.approx(5.0 / 6.0, abs=1e-14)
        assert ssr[0] == pytest.approx(1.0 / 6.0, abs=1e-14)

    def test_agrees_with_score(self, rng, warm_kernels):
        values, y, bounds = _random_problem(rng, m=5)
        s = values.shape[1]
        tup = np.array([0, 3], dtype=np.int64)
        coef = np.empty((1, 3), dtype=np.float64)
        ssr = np.empty(1, dtype=np.float64)
        assert fit_tuple_kernel(values, y, bounds, tup, RANK_TOL_FACTOR["fp64"], coef, ssr)
        out = np.empty(1, dtype=np.float64)
        score_tuples(values, y, bounds, tup[None, :], RANK_TOL_FACTOR["fp64"], out)
        assert out[0] == pytest.approx(ssr[0] / s, rel=1e-12)
        pred = coef[0, 0] * values[0] + coef[0, 1] * values[3] + coef[0, 2]
        assert float(np.sum((y - pred) ** 2)) == pytest.approx(ssr[0], rel=1e-9)

    def test_per_task_coefficients(self, rng, warm_kernels):
        values, y, _ = _random_problem(rng, m=4, s=20)
        bounds = np.array([0, 8, 20], dtype=np.int64)
        tup = np.array([2], dtype=np.int64)
        coef = np.empty((2, 2), dtype=np.float64)
        ssr = np.empty(2, dtype=np.float64)
        assert fit_tuple_kernel(values, y, bounds, tup, RANK_TOL_FACTOR["fp64"], coef, ssr)
        for task, (lo, hi) in enumerate(((0, 8), (8, 20))):
            X = np.column_stack([values[2, lo:hi], np.ones(hi - lo)])
            want, want_ssr = normal_equations_fit(X, y[lo:hi])
            assert np.allclose(coef[task], want, rtol=1e-9)
            assert ssr[task] == pytest.approx(want_ssr, rel=1e-9, abs=1e-14)

    def test_rank_deficient_returns_false(self, rng, warm_kernels):
        values, y, bounds = _random_problem(rng, m=3)
        values[1] = values[0]
        coef = np.empty((1, 3), dtype=np.float64)
        ssr = np.empty(1, dtype=np.float64)
        ok = fit_tuple_kernel(
            values, y, bounds, np.array([0, 1], dtype=np.int64), RANK_TOL_FACTOR["fp64"], coef, ssr
        )
        assert not ok


class TestFillCombinations:
    def _collect(self, m, n, slab):
        cur = np.arange(n, dtype=np.int64)
        total = 1
        for i in range(n):
            total = total * (m - i) // (i + 1)
        rows = []
        left = total
        while left > 0:
            cnt = min(slab, left)
            out = np.empty((cnt, n), dtype=np.int64)
            fill_combinations(cur, m, out, cnt)
            rows.extend(map(tuple, out))
            left -= cnt
        return rows

    @pytest.mark.parametrize("m,n", [(5, 2), (7, 3), (6, 1), (6, 6), (9, 4)])
    def test_matches_itertools(self, m, n, warm_kernels):
        want = list(itertools.combinations(range(m), n))
        for slab in (1, 3, len(want)):
            assert self._collect(m, n, slab) == want

    def test_cursor_resumes_mid_stream(self, warm_kernels):
        want = list(itertools.combinations(range(8), 3))
        cur = np.array([0, 1, 2], dtype=np.int64)
        first = np.empty((10, 3), dtype=np.int64)
        fill_combinations(cur, 8, first, 10)
        assert list(map(tuple, first)) == want[:10]
        assert tuple(cur) == want[10]
        rest = np.empty((len(want) - 10, 3), dtype=np.int64)
        fill_combinations(cur, 8, rest, len(want) - 10)
        assert list(map(tuple, rest)) == want[10:]
