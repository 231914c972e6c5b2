import numpy as np
import pytest

from descsearch.expressions import primary
from descsearch.generation import FeatureSpace
from descsearch.screening import (
    DegenerateInput,
    EmptySpace,
    ScreeningTarget,
    SelectedSubspace,
    SubspaceEntry,
    pearson,
    projection_score,
    sis_select,
)
from descsearch.units import Unit

from _oracles import scalar_pearson


class TestPearson:
    def test_frozen_example(self):
        # hand-checked: cov = 2.5, var_x = 5, var_y = 5
        assert pearson([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]) == pytest.approx(0.8, abs=1e-15)

    def test_exact_linear_pairs(self):
        x = np.array([0.5, 1.0, 4.0, -2.0])
        assert pearson(x, 3.0 * x - 7.0) == pytest.approx(1.0, abs=1e-15)
        assert pearson(x, -0.25 * x + 2.0) == pytest.approx(-1.0, abs=1e-15)

    def test_against_scalar_oracle(self, rng):
        for _ in range(1000):
            n = int(rng.integers(2, 40))
            x = rng.standard_normal(n)
            y = rng.standard_normal(n)
            assert pearson(x, y) == pytest.approx(scalar_pearson(list(x), list(y)), abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateInput):
            pearson([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])
        with pytest.raises(DegenerateInput):
            pearson([1.0], [2.0])

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])


class TestScreeningTarget:
    def test_partition_validation(self):
        y = np.arange(6.0)
        ScreeningTarget([y], [np.array([0, 2, 4]), np.array([1, 3, 5])])
        with pytest.raises(ValueError):
            ScreeningTarget([y], [np.array([0, 1]), np.array([1, 2, 3, 4, 5])])
        with pytest.raises(ValueError):
            ScreeningTarget([y], [np.array([0, 1, 2])])

    def test_casts_to_float64(self):
        t = ScreeningTarget([np.arange(4, dtype=np.float32)])
        assert t.targets[0].dtype == np.float64


class TestProjectionScore:
    def test_single_task_is_abs_pearson(self, rng):
        y = rng.standard_normal(12)
        f = rng.standard_normal(12)
        t = ScreeningTarget([y])
        assert projection_score(f, t) == pytest.approx(abs(pearson(f, y)), abs=1e-14)

    def test_multitask_weighted_average(self):
        # task A: 4 samples perfectly correlated; task B: 2 samples anti-correlated
        f = np.array([1.0, 2.0, 3.0, 4.0, 1.0, 2.0])
        y = np.array([2.0, 4.0, 6.0, 8.0, 5.0, 3.0])
        t = ScreeningTarget([y], [np.arange(4), np.array([4, 5])])
        # |r| = 1 in both tasks; weights 4/6 and 2/6
        assert projection_score(f, t) == pytest.approx(1.0, abs=1e-14)
        # break task A: constant feature slice contributes zero there
        f2 = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 2.0])
        assert projection_score(f2, t) == pytest.approx(2.0 / 6.0, abs=1e-14)

    def test_constant_target_slice_contributes_zero(self):
        f = np.array([1.0, 2.0, 3.0, 4.0])
        y = np.array([5.0, 5.0, 1.0, 2.0])
        t = ScreeningTarget([y], [np.array([0, 1]), np.array([2, 3])])
        assert projection_score(f, t) == pytest.approx(0.5, abs=1e-14)

    def test_multiple_targets_take_best(self, rng):
        f = rng.standard_normal(10)
        y1 = rng.standard_normal(10)
        y2 = 2.0 * f + 0.001 * rng.standard_normal(10)
        t = ScreeningTarget([y1, y2])
        assert projection_score(f, t) == pytest.approx(
            max(abs(pearson(f, y1)), abs(pearson(f, y2))), abs=1e-14
        )

    def test_clipped_to_unit_interval(self):
        f = np.array([1.0, 2.0, 3.0])
        t = ScreeningTarget([np.array([2.0, 4.0, 6.0])])
        assert projection_score(f, t) <= 1.0


def _chunks_from(names, matrix, chunk=3):
    exprs = [primary(i, n, Unit()) for i, n in enumerate(names)]
    out = []
    for s in range(0, len(names), chunk):
        out.append((exprs[s : s + chunk], np.asarray(matrix[s : s + chunk], dtype=np.float64)))
    return out


class TestSisSelect:
    def _instance(self, rng, m=30, s=16):
        y = rng.standard_normal(s)
        F = rng.standard_normal((m, s))
        names = [f"f{i:03d}" for i in range(m)]
        target = ScreeningTarget([y])
        return names, F, target, y

    def test_top_k_matches_direct_ranking(self, rng):
        names, F, target, y = self._instance(rng)
        sel = sis_select(_chunks_from(names, F), target, 7)
        scores = [(-projection_score(F[i], target), names[i]) for i in range(len(names))]
        want = [nm for _, nm in sorted(scores)[:7]]
        got = [e.expression.name for e in sel.entries]
        assert got == want
        assert sel.scores == sorted(sel.scores, reverse=True)

    def test_chunk_and_worker_invariance(self, rng):
        names, F, target, _ = self._instance(rng, m=41)
        ref = None
        for chunk in (1, 4, 100):
            for workers in (1, 3):
                sel = sis_select(_chunks_from(names, F, chunk), target, 9, workers=workers)
                got = [(e.expression.name, e.score) for e in sel.entries]
                if ref is None:
                    ref = got
                assert got == ref

    def test_excludes_already_selected_and_accumulates(self, rng):
        names, F, target, _ = self._instance(rng, m=20)
        first = sis_select(_chunks_from(names, F), target, 5)
        second = sis_select(_chunks_from(names, F), target, 5, already_selected=first)
        assert len(second) == 10
        assert second.entries[:5] == first.entries
        new_names = {e.expression.name for e in second.entries[5:]}
        old_names = {e.expression.name for e in first.entries}
        assert not (new_names & old_names)
        # the two selections together are the direct top 10
        direct = sis_select(_chunks_from(names, F), target, 10)
        assert {e.expression.name for e in direct.entries} == new_names | old_names

    def test_requesting_more_than_space_returns_all(self, rng):
        names, F, target, _ = self._instance(rng, m=6)
        sel = sis_select(_chunks_from(names, F), target, 50)
        assert len(sel) == 6

    def test_empty_stream_raises(self):
        target = ScreeningTarget([np.array([1.0, 2.0])])
        with pytest.raises(EmptySpace):
            sis_select([], target, 3)

    def test_all_already_selected_raises(self, rng):
        names, F, target, _ = self._instance(rng, m=4)
        first = sis_select(_chunks_from(names, F), target, 4)
        with pytest.raises(EmptySpace):
            sis_select(_chunks_from(names, F), target, 2, already_selected=first)

    def test_tie_break_by_canonical_key(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        f = np.array([2.0, 4.0, 6.0, 8.0])
        # three features with identical values -> identical scores; keys差 decide
        F = np.stack([f, f + 0.0, f + 0.0])
        names = ["zc", "aa", "mm"]
        target = ScreeningTarget([y])
        sel = sis_select(_chunks_from(names, F), target, 2)
        assert [e.expression.name for e in sel.entries] == ["aa", "mm"]

    def test_captured_values_are_copies(self, rng):
        names, F, target, _ = self._instance(rng, m=5)
        chunks = _chunks_from(names, F)
        sel = sis_select(chunks, target, 3)
        for e in sel.entries:
            i = names.index(e.expression.name)
            np.testing.assert_array_equal(e.values, F[i])
        F[:] = 0.0
        assert not np.allclose(sel.entries[0].values, 0.0)

    def test_featurespace_source(self, rng):
        x = rng.uniform(0.5, 2.0, size=(10, 4))
        pool = FeatureSpace.from_primaries(
            [f"x{i}" for i in range(4)], [Unit() for _ in range(4)], x
        )
        y = x[:, 0] * 2.0 + rng.standard_normal(10) * 0.1
        target = ScreeningTarget([y])
        sel = sis_select(pool, target, 2, chunk_size=3)
        assert len(sel) == 2
        assert sel.entries[0].expression.name == "x0"


def test_subspace_matrix_and_keys(rng):
    e = [primary(i, f"n{i}", Unit()) for i in range(3)]
    vals = rng.standard_normal((3, 5))
    sub = SelectedSubspace([SubspaceEntry(e[i], 1.0 - 0.1 * i, vals[i]) for i in range(3)])
    np.testing.assert_array_equal(sub.values_matrix(), vals)
    assert sub.values_matrix(np.float32).dtype == np.float32
    assert sub.keys() == {"n0", "n1", "n2"}
    with pytest.raises(EmptySpace):
        SelectedSubspace().values_matrix()
