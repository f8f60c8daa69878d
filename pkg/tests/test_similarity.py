import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pathmv.similarity import (
    DegenerateSeriesError,
    SimilarityConfig,
    SimilarityMatrix,
    cum_distance,
    sim,
    similarity_matrix,
    tau,
)

returns = st.integers(2, 40).flatmap(
    lambda n: arrays(float, n, elements=st.floats(-0.5, 0.5, allow_subnormal=False))
).filter(lambda x: np.any(x != 0))


def _oracle(x, y, w):
    # straight transcription of the metric with loops
    px = py = 1.0
    for a in x:
        px *= 1 + a
    for b in y:
        py *= 1 + b
    e = math.sqrt((px - py) ** 2)
    num = sum(a * b for a, b in zip(x, y))
    t = num / (math.sqrt(sum(a * a for a in x)) * math.sqrt(sum(b * b for b in y)))
    return w / (1 + e) + (1 - w) * t


def test_cum_distance_examples(rng):
    x = rng.normal(0, 0.02, 20)
    assert cum_distance(x, x) == 0.0
    assert cum_distance([1, 0], [0, 1]) == 0.0
    y = rng.normal(0, 0.02, 20)
    assert cum_distance(x, y) == pytest.approx(abs(np.prod(1 + x) - np.prod(1 + y)), rel=1e-12)


def test_cum_distance_length_mismatch():
    with pytest.raises(ValueError):
        cum_distance([0.1], [0.1, 0.2])


def test_tau_examples():
    x = np.array([0.1, -0.2, 0.05])
    assert tau(x, x) == 1.0
    assert tau(x, -x) == -1.0
    assert tau([1, 0], [0, 1]) == 0.0


def test_tau_zero_norm():
    with pytest.raises(DegenerateSeriesError):
        tau([0.0, 0.0], [0.1, 0.2])


def test_sim_examples(rng):
    assert sim([1, 0], [0, 1], SimilarityConfig(0.5)) == 0.5
    x, y = rng.normal(0, 0.02, 30), rng.normal(0, 0.02, 30)
    assert sim(x, y, SimilarityConfig(0.4)) == pytest.approx(_oracle(x, y, 0.4), rel=1e-12, abs=1e-14)


def test_config_bounds():
    with pytest.raises(ValueError):
        SimilarityConfig(1.5)
    with pytest.raises(ValueError):
        SimilarityConfig(-0.1)


@given(returns, st.floats(0, 1))
def test_self_similarity_exact(x, w):
    assert sim(x, x, SimilarityConfig(w)) == 1.0


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_symmetry_and_bounds(seed, w):
    g = np.random.default_rng(seed)
    n = int(g.integers(2, 50))
    x, y = g.normal(0, 0.05, n), g.normal(0, 0.05, n)
    cfg = SimilarityConfig(w)
    s = sim(x, y, cfg)
    assert s == sim(y, x, cfg)
    assert -(1 - w) - 1e-15 <= s <= 1.0


def test_scale_sensitivity():
    x = np.array([0.01, 0.02, -0.005, 0.03])
    y = 2 * x
    assert tau(x, y) == pytest.approx(1.0)
    assert cum_distance(x, y) > 0
    assert sim(x, y) < 1.0


def test_matrix_examples(rng):
    x = rng.normal(0, 0.02, 25)
    m = similarity_matrix([x, x])
    np.testing.assert_array_equal(m.values, 1.0)
    series = rng.normal(0, 0.02, (25, 10))
    m = similarity_matrix(series, SimilarityConfig(0.3))
    np.testing.assert_array_equal(m.values, m.values.T)
    np.testing.assert_array_equal(np.diag(m.values), 1.0)
    for i in range(10):
        for j in range(10):
            if i != j:
                assert m.values[i, j] == pytest.approx(sim(series[:, i], series[:, j], SimilarityConfig(0.3)), abs=1e-14)


def test_matrix_aggregates_degenerate_series(rng):
    series = rng.normal(0, 0.02, (10, 4))
    series[:, 1] = 0
    series[:, 3] = 0
    with pytest.raises(DegenerateSeriesError) as exc:
        similarity_matrix(series)
    assert exc.value.indices == [1, 3]


def test_matrix_csv_roundtrip(tmp_path, rng):
    m = similarity_matrix(rng.normal(0, 0.02, (15, 4)), tickers=["A", "B", "C", "D"])
    m.to_csv(tmp_path / "s.csv")
    again = SimilarityMatrix.from_csv(tmp_path / "s.csv")
    assert again.tickers == m.tickers
    np.testing.assert_array_equal(again.values, m.values)
