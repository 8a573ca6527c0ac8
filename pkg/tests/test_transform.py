import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from evotab.errors import SchemaError, ShapeError
from evotab.schema import CATEGORICAL, CONTINUOUS, ColumnSpec, Table, TableSchema
from evotab.transform import (
    STD_SCALE,
    CondSampler,
    ContinuousEncoder,
    DataTransformer,
    fit_continuous_encoder,
    sample_condvec,
    sample_real_matching,
)
from evotab.vgm import fit_vgm

from conftest import mixed_schema, random_table


@pytest.fixture(scope="module")
def bimodal_encoder():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(0, 1, 5000), rng.normal(10, 1, 5000)])
    return fit_continuous_encoder(x, max_modes=10, column="x")


def test_two_modes_recovered(bimodal_encoder):
    enc = bimodal_encoder
    assert enc.mode_count == 2
    means = sorted(enc.mode_means)
    assert abs(means[0] - 0) < 0.5 and abs(means[1] - 10) < 0.5
    assert np.allclose(sorted(enc.mode_stds), [1, 1], atol=0.1)
    assert np.allclose(enc.mode_weights, [0.5, 0.5], atol=0.03)


def test_unimodal_data_gives_one_mode():
    x = np.random.default_rng(1).normal(3, 2, 10000)
    assert fit_continuous_encoder(x).mode_count == 1


def test_three_modes():
    rng = np.random.default_rng(2)
    x = np.concatenate([rng.normal(m, 1, 3000) for m in (-10, 0, 12)])
    fit = fit_vgm(x, max_modes=10, seed=0)
    assert len(fit.means) == 3
    assert np.allclose(np.sort(fit.means), [-10, 0, 12], atol=0.3)


def test_constant_column_rejected():
    with pytest.raises(SchemaError, match="categorical"):
        fit_continuous_encoder(np.full(50, 4.0), column="c")


def test_encoder_invariants():
    with pytest.raises(ValueError):
        ContinuousEncoder("x", (0.0,), (0.0,), (1.0,))
    with pytest.raises(ValueError):
        ContinuousEncoder("x", (0.0, 1.0), (1.0, 1.0), (0.3, 0.3))


def _transformer():
    enc = ContinuousEncoder("age", (25.0, 60.0), (2.0, 3.0), (0.5, 0.5))
    return DataTransformer(mixed_schema(), {"age": enc})


def test_layout():
    tr = _transformer()
    # sex(2) + age(1 + 2) + region(3)
    assert tr.output_dim == 8
    assert tr.cond_dim == 5
    assert [(s.start, s.width, s.activation) for s in tr.spans] == [
        (0, 2, "softmax"), (2, 1, "tanh"), (3, 2, "softmax"), (5, 3, "softmax")
    ]


def test_scalar_at_mode_mean_and_scale():
    tr = _transformer()
    row = tr.encode_row([1, 60.0, 2], seed=0)
    assert row[2] == 0.0 and row[3:5].tolist() == [0, 1]
    assert row[0:2].tolist() == [0, 1] and row[5:8].tolist() == [0, 0, 1]
    row = tr.encode_row([0, 60.0 + STD_SCALE * 3.0, 0], seed=0)
    assert row[2] == pytest.approx(1.0)


def test_categorical_one_hot():
    tr = _transformer()
    assert tr.encode_row([0, 25.0, 1], seed=0)[0:2].tolist() == [1, 0]


def test_round_trip(small_table):
    tr = DataTransformer.fit(small_table, seed=0)
    enc = tr.encode(small_table, seed=4)
    back = tr.decode(enc)
    cat = small_table.schema.categorical_indices
    assert np.array_equal(back.values[:, cat], small_table.values[:, cat])
    # unclamped continuous values come back to within float rounding
    unclamped = np.abs(enc[:, tr.blocks[1].start]) < 1
    err = np.abs(back.column("age") - small_table.column("age"))[unclamped]
    assert unclamped.mean() > 0.95 and err.max() <= 1e-9


def test_clamped_scalar_decodes_to_boundary():
    tr = _transformer()
    enc = tr.encode_row([0, 25.0, 0], seed=0)
    enc[2] = 1.7
    enc[3:5] = [1, 0]
    assert tr.decode(enc[None]).column("age")[0] == pytest.approx(25 + 4 * 2)


def test_decode_soft_rows_by_argmax():
    tr = _transformer()
    rng = np.random.default_rng(3)
    soft = rng.random((40, tr.output_dim))
    soft[:, 2] = rng.uniform(-1, 1, 40)
    out = tr.decode(soft)
    for i in range(40):
        # enumerate each block and pick the first maximal entry
        sex = max(range(2), key=lambda k: (soft[i, k], -k))
        mode = max(range(2), key=lambda k: (soft[i, 3 + k], -k))
        region = max(range(3), key=lambda k: (soft[i, 5 + k], -k))
        assert out.values[i, 0] == sex and out.values[i, 2] == region
        expected = soft[i, 2] * 4 * (2.0, 3.0)[mode] + (25.0, 60.0)[mode]
        assert out.values[i, 1] == pytest.approx(expected)


def test_decode_width_mismatch():
    with pytest.raises(ShapeError):
        _transformer().decode(np.zeros((2, 7)))


def test_transformer_serialization(small_table):
    tr = DataTransformer.fit(small_table, seed=0)
    tr2 = DataTransformer.from_dict(tr.to_dict())
    assert np.array_equal(tr.encode(small_table, seed=1), tr2.encode(small_table, seed=1))


def test_mode_posterior_sampling_frequency():
    enc = ContinuousEncoder("age", (0.0, 1.0), (1.0, 1.0), (0.5, 0.5))
    tr = DataTransformer(mixed_schema(), {"age": enc})
    n = 20000
    t = Table(mixed_schema(), np.column_stack([np.zeros(n), np.full(n, 0.5), np.zeros(n)]))
    modes = tr.encode(t, seed=0)[:, 3:5].argmax(axis=1)
    # v = 0.5 is equidistant from both means, so the posterior is 1/2 each
    assert abs(modes.mean() - 0.5) < 0.02


# ---------------------------------------------------------------- training-by-sampling


def _one_column_table(counts):
    schema = TableSchema((ColumnSpec("g", CATEGORICAL, tuple(f"c{i}" for i in range(len(counts)))),))
    codes = np.repeat(np.arange(len(counts)), counts)
    return Table(schema, codes[:, None].astype(float))


def test_equal_categories_half_each():
    t = _one_column_table([300, 300])
    _, chosen = sample_condvec(t, 10000, seed=0)
    assert abs(np.mean(chosen[:, 1] == 0) - 0.5) < 0.02


def test_zero_frequency_category_never_chosen():
    t = _one_column_table([50, 0, 10])
    _, chosen = sample_condvec(t, 5000, seed=1)
    assert not np.any(chosen[:, 1] == 1)


def test_columns_chosen_uniformly(small_table):
    _, chosen = sample_condvec(small_table, 10000, seed=2)
    assert abs(np.mean(chosen[:, 0] == 0) - 0.5) < 0.02


def test_log_frequency_weights_chi_square():
    counts = [1000, 100, 10, 1]
    t = _one_column_table(counts)
    _, chosen = sample_condvec(t, 20000, seed=5)
    observed = np.bincount(chosen[:, 1], minlength=4)
    w = np.log1p(counts)
    expected = 20000 * w / w.sum()
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_condvecs_are_valid_one_hots(small_table):
    cond, chosen = sample_condvec(small_table, 500, seed=3)
    assert np.all(cond.sum(axis=1) == 1) and set(np.unique(cond)) <= {0.0, 1.0}
    offsets = {0: 0, 2: 2}
    for row, (col, cat) in zip(cond, chosen):
        assert row[offsets[col] + cat] == 1


def test_real_matching_filters(small_table):
    chosen = np.array([[0, 0]] * 50 + [[2, 2]] * 50)
    rows, cond = sample_real_matching(small_table, chosen, seed=0)
    assert np.all(rows.codes("sex")[:50] == 0)
    assert np.all(rows.codes("region")[50:] == 2)
    assert np.all(cond.sum(axis=1) == 1)


def test_real_matching_uniform_over_matches():
    schema = TableSchema((ColumnSpec("g", CATEGORICAL, ("a", "b")), ColumnSpec("x", CONTINUOUS)))
    vals = np.array([[0, 1], [1, 2], [0, 3], [1, 4], [0, 5], [0, 6]], dtype=float)
    t = Table(schema, vals)
    rows, _ = sample_real_matching(t, np.array([[0, 0]] * 10000), seed=0)
    share = np.array([np.mean(rows.column("x") == v) for v in (1, 3, 5, 6)])
    assert np.all(np.abs(share - 0.25) < 0.03)


def test_frequency_only_sampler(small_table):
    full = CondSampler(small_table)
    lite = CondSampler.from_frequencies(small_table.schema, full.category_frequencies())
    assert np.array_equal(full.sample_condvec(100, 0)[0], lite.sample_condvec(100, 0)[0])
    with pytest.raises(RuntimeError):
        lite.sample_real_matching(np.array([[0, 0]]), 0)


def test_original_condvec_uses_raw_frequency():
    t = _one_column_table([900, 100])
    _, chosen = CondSampler(t).sample_original_condvec(20000, seed=0)
    assert abs(np.mean(chosen[:, 1] == 0) - 0.9) < 0.01


@given(st.integers(1, 300), st.integers(0, 10**6))
def test_condvec_property(n, seed):
    t = random_table(n=60, seed=7)
    cond, chosen = sample_condvec(t, n, seed)
    assert cond.shape == (n, 5)
    assert np.all(cond.sum(axis=1) == 1)
    idx, _ = CondSampler(t).sample_real_matching(chosen, seed)
    assert np.all(t.values[idx, chosen[:, 0]] == chosen[:, 1])
