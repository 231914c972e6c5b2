import numpy as np
import pytest

from descsearch.expressions import OPERATORS, apply, evaluate, primary
from descsearch.models import (
    Model,
    ModelFormatError,
    parse_model_record,
    predict,
    read_models_file,
    residuals,
    serialize_model,
    write_models_file,
)
from descsearch.units import Unit


def _primaries():
    a = primary(0, "a", Unit())
    b = primary(1, "b", Unit())
    return a, b


def _two_term_model(coeffs, labels=("0",)):
    a, b = _primaries()
    prod = apply(OPERATORS["mul"], a, b)
    return Model(
        indices=(0, 1),
        expressions=(a, prod),
        coefficients=np.asarray(coeffs, dtype=np.float64),
        score=0.0625,
        rmse_per_task=np.full(len(labels), 0.25),
        task_labels=tuple(labels),
    )


class TestPredict:
    def test_hand_checked_single_task(self):
        # y_hat = 2*a - 3*(a*b) + 1 on two samples
        model = _two_term_model([[2.0, -3.0, 1.0]])
        x = np.array([[1.0, 4.0], [2.0, 0.5]])
        got = predict(model, x)
        want = np.array([2 * 1 - 3 * 4 + 1, 2 * 2 - 3 * 1 + 1])
        assert np.array_equal(got, want)

    def test_per_task_coefficients_apply_to_their_rows(self):
        model = _two_term_model([[1.0, 0.0, 0.0], [0.0, 1.0, 2.0]], labels=("u", "v"))
        x = np.array([[3.0, 2.0], [5.0, 4.0]])
        got = predict(model, x, task_slices=[np.array([1]), np.array([0])])
        # sample 1 uses task u (just a), sample 0 uses task v (a*b + 2)
        assert got[1] == 5.0
        assert got[0] == 3.0 * 2.0 + 2.0

    def test_partition_mismatch_raises(self):
        model = _two_term_model([[2.0, -3.0, 1.0]])
        x = np.ones((4, 2))
        with pytest.raises(ValueError):
            predict(model, x, task_slices=[np.arange(2), np.arange(2, 4)])

    def test_needs_expressions(self):
        model = _two_term_model([[2.0, -3.0, 1.0]])
        stripped = Model(
            indices=model.indices,
            expressions=None,
            coefficients=model.coefficients,
            score=model.score,
            rmse_per_task=model.rmse_per_task,
            task_labels=model.task_labels,
        )
        with pytest.raises(ValueError):
            predict(stripped, np.ones((2, 2)))


class TestResiduals:
    def test_property_minus_prediction(self, rng):
        model = _two_term_model([[2.0, -3.0, 1.0]])
        x = rng.uniform(0.5, 2.0, size=(6, 2))
        y = rng.standard_normal(6)
        res = residuals([model, model], y, x, n_residual=1)
        assert len(res) == 1
        assert np.array_equal(res[0], y - predict(model, x))

    def test_takes_all_when_unbounded(self, rng):
        model = _two_term_model([[2.0, -3.0, 1.0]])
        x = rng.uniform(0.5, 2.0, size=(4, 2))
        y = rng.standard_normal(4)
        assert len(residuals([model, model, model], y, x)) == 3


class TestTextRoundTrip:
    def test_serialize_parse_exact(self):
        model = _two_term_model([[1.0 / 3.0, -2.0e-7, 9.87654321012345678e5]])
        text = serialize_model(model, 3)
        rec = parse_model_record(text)
        assert rec.number == 3
        assert rec.score == model.score
        assert rec.terms == ["a", "(a * b)"]
        assert rec.task_labels == ["0"]
        assert np.array_equal(rec.coefficients, model.coefficients)
        assert np.array_equal(rec.rmse_per_task, model.rmse_per_task)

    def test_round_trip_random_floats(self, rng):
        # 17 significant digits must reproduce every float64 bit for bit
        for _ in range(200):
            x = float(rng.standard_normal() * 10.0 ** rng.integers(-300, 300))
            assert float("%.17e" % x) == x

    def test_parsed_model_evaluates(self, rng):
        model = _two_term_model([[2.0, -3.0, 1.0]])
        rec = parse_model_record(serialize_model(model, 1))
        a, b = _primaries()
        rebuilt = rec.to_model({"a": a, "b": b})
        x = rng.uniform(0.5, 2.0, size=(5, 2))
        assert np.array_equal(predict(rebuilt, x), predict(model, x))

    def test_multi_task_record(self):
        model = _two_term_model([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], labels=("alpha", "beta"))
        rec = parse_model_record(serialize_model(model, 2))
        assert rec.task_labels == ["alpha", "beta"]
        assert rec.coefficients.shape == (2, 3)

    @pytest.mark.parametrize(
        "mangle",
        [
            lambda t: t.replace("model:", "mdl:"),
            lambda t: t.replace("score_mse:", "score:"),
            lambda t: "\n".join(ln for ln in t.splitlines() if not ln.startswith("term:")),
            lambda t: "\n".join(ln for ln in t.splitlines() if not ln.startswith("task:")),
            lambda t: t + "\nextra: 1",
        ],
    )
    def test_malformed_records_rejected(self, mangle):
        text = serialize_model(_two_term_model([[1.0, 2.0, 3.0]]), 1)
        with pytest.raises(ModelFormatError):
            parse_model_record(mangle(text))

    def test_wrong_coefficient_count_rejected(self):
        text = serialize_model(_two_term_model([[1.0, 2.0, 3.0]]), 1)
        bad = text.replace("coefficients: ", "coefficients: 1.0 ")
        with pytest.raises(ModelFormatError):
            parse_model_record(bad)


class TestModelsFile:
    def test_write_and_read_back(self, tmp_path):
        models = [
            _two_term_model([[1.5, -0.25, 0.75]]),
            _two_term_model([[0.5, 0.5, 0.0]]),
        ]
        path = tmp_path / "models_dim2.txt"
        write_models_file(path, models, 2, "fp64", "abc123", "energy")
        meta, records = read_models_file(path)
        assert meta["dimension"] == "2"
        assert meta["precision"] == "fp64"
        assert meta["config"] == "abc123"
        assert meta["property"] == "energy"
        assert [r.number for r in records] == [1, 2]
        assert np.array_equal(records[0].coefficients, models[0].coefficients)

    def test_empty_model_list(self, tmp_path):
        path = tmp_path / "models_dim1.txt"
        write_models_file(path, [], 1, "fp64", "abc123", "energy")
        meta, records = read_models_file(path)
        assert meta["dimension"] == "1"
        assert records == []
