import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gencov.data import (
    Dataset,
    GlmFamily,
    IndexSets,
    align_samples,
    expit,
    load_dataset,
    union_dataset,
    write_dataset,
)
from gencov.errors import AlignmentError, ConfigurationError, DataError, ParseError, ShapeError


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_three_rows(tmp_path):
    p = _write(tmp_path, "id,y,x1,x2\na,1.5,0,1\nb,2,3e-1,-4\nc,-1,.5,7.\n")
    ds = load_dataset(p, "id", "y")
    assert (ds.n, ds.p) == (3, 2)
    assert ds.ids == ("a", "b", "c")
    assert ds.covariate_names == ("x1", "x2")
    np.testing.assert_array_equal(ds.covariates[1], [0.3, -4.0])
    np.testing.assert_array_equal(ds.outcome, [1.5, 2.0, -1.0])


def test_column_order_preserved_and_crlf(tmp_path):
    p = _write(tmp_path, "x2,id,x1,y\r\n1,a,2,0\r\n3,b,4,1\r\n")
    ds = load_dataset(p, "id", "y")
    assert ds.covariate_names == ("x2", "x1")
    np.testing.assert_array_equal(ds.covariates, [[1, 2], [3, 4]])


def test_nan_cell_is_parse_error_with_location(tmp_path):
    p = _write(tmp_path, "id,y,x1,x2\na,1,0,1\nb,2,NaN,1\n")
    with pytest.raises(ParseError) as e:
        load_dataset(p, "id", "y")
    assert e.value.row == 2 and e.value.column == "x1"
    assert "x1" in str(e.value) and "row 2" in str(e.value)


@pytest.mark.parametrize("cell", ["inf", "1,000", "abc", "", "0x10", "1e"])
def test_non_decimal_cells_rejected(tmp_path, cell):
    p = _write(tmp_path, f'id,y,x1\na,1,"{cell}"\n')
    with pytest.raises(ParseError):
        load_dataset(p, "id", "y")


def test_binary_outcome_with_two_is_data_error(tmp_path):
    p = _write(tmp_path, "id,y,x1\na,1,0\nb,2.0,1\n")
    with pytest.raises(DataError, match="2.0"):
        load_dataset(p, "id", "y", outcome_kind="binary")


def test_missing_column_is_configuration_error(tmp_path):
    p = _write(tmp_path, "id,y,x1\na,1,0\n")
    with pytest.raises(ConfigurationError):
        load_dataset(p, "id", "z")


def test_duplicate_id_is_data_error(tmp_path):
    p = _write(tmp_path, "id,y,x1\na,1,0\na,2,1\n")
    with pytest.raises(DataError, match="duplicate"):
        load_dataset(p, "id", "y")


def test_ragged_row_is_parse_error(tmp_path):
    p = _write(tmp_path, "id,y,x1\na,1\n")
    with pytest.raises(ParseError):
        load_dataset(p, "id", "y")


def test_no_covariates_rejected(tmp_path):
    p = _write(tmp_path, "id,y\na,1\n")
    with pytest.raises(ConfigurationError):
        load_dataset(p, "id", "y")


def test_dataset_is_read_only():
    ds = Dataset(ids=["a"], covariates=[[1.0]], outcome=[0.0])
    with pytest.raises(ValueError):
        ds.covariates[0, 0] = 2.0


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 4)) * 10.0 ** rng.integers(-300, 300, (30, 4))
    y = rng.standard_normal(30) / 3.0
    ds = Dataset(ids=[f"s{i}" for i in range(30)], covariates=X, outcome=y)
    p = tmp_path / "rt.csv"
    write_dataset(ds, p)
    assert load_dataset(p, "id", "y").equals(ds)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(allow_nan=False, allow_infinity=False), st.floats(allow_nan=False, allow_infinity=False)),
        min_size=1,
        max_size=8,
    )
)
def test_round_trip_property(tmp_path_factory, rows):
    X = np.array([[a] for a, _ in rows])
    y = np.array([b for _, b in rows])
    ds = Dataset(ids=[str(i) for i in range(len(rows))], covariates=X, outcome=y)
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset(ds, p)
    back = load_dataset(p, "id", "y")
    assert back.equals(ds)


def _ds(ids, p=2, seed=0, shared=None):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((len(ids), p))
    if shared is not None:
        for k, sid in enumerate(ids):
            if sid in shared:
                X[k] = shared[sid]
    return Dataset(ids=ids, covariates=X, outcome=rng.standard_normal(len(ids)))


def test_align_partial_overlap():
    rows = {"b": np.array([1.0, 2.0])}
    al = align_samples(_ds(["a", "b"], shared=rows), _ds(["b", "c"], seed=1, shared=rows))
    idx = al.index
    assert (idx.N, idx.n_o) == (3, 1)
    assert al.ids == ("a", "b", "c")
    assert [al.ids[i] for i in idx.idx_overlap] == ["b"]
    np.testing.assert_array_equal(idx.idx_z, [1, 2])


def test_align_identical_ids():
    ds = _ds(["a", "b", "c"])
    idx = align_samples(ds, ds).index
    assert idx.N == idx.n_y == idx.n_z == idx.n_o == 3
    np.testing.assert_array_equal(idx.idx_y, idx.idx_z)


def test_align_disjoint_200_600():
    ds_y = _ds([f"y{i}" for i in range(200)])
    ds_z = _ds([f"z{i}" for i in range(600)], seed=1)
    idx = align_samples(ds_y, ds_z).index
    assert (idx.N, idx.n_o) == (800, 0)


def test_align_mismatched_shared_row():
    with pytest.raises(AlignmentError):
        align_samples(_ds(["a", "b"]), _ds(["b"], seed=5))


def test_align_p_mismatch():
    with pytest.raises(ShapeError):
        align_samples(_ds(["a"], p=2), _ds(["b"], p=3))


@settings(max_examples=60, deadline=None)
@given(st.sets(st.integers(0, 30)), st.sets(st.integers(0, 30)))
def test_index_set_identities(a, b):
    if not a and not b:
        return
    ids_y = [f"s{i}" for i in sorted(a)]
    ids_z = [f"s{i}" for i in sorted(b, reverse=True)]
    base = {f"s{i}": np.array([float(i), -float(i)]) for i in range(31)}
    al = align_samples(_ds(ids_y, shared=base), _ds(ids_z, shared=base))
    idx = al.index
    assert idx.N == idx.n_y + idx.n_z - idx.n_o
    assert idx.N == len(a | b)
    assert set(idx.idx_overlap) == set(idx.idx_y) & set(idx.idx_z)
    assert set(idx.idx_overlap) <= set(idx.idx_y) and set(idx.idx_overlap) <= set(idx.idx_z)
    # each study's rows in the union match its own covariates
    for k, sid in enumerate(ids_z):
        assert al.ids[idx.idx_z[k]] == sid
        np.testing.assert_array_equal(al.covariates[idx.idx_z[k]], base[sid])
    # realigning the union with itself is idempotent
    u = union_dataset(al)
    again = align_samples(u, u)
    assert again.index.N == idx.N
    assert again.index.same_as(align_samples(u, u).index)
    np.testing.assert_array_equal(again.covariates, al.covariates)


def test_index_sets_from_masks():
    idx = IndexSets.from_masks([True, True, False], [False, True, True])
    assert (idx.n_y, idx.n_z, idx.n_o, idx.N) == (2, 2, 1, 3)


def test_family_means():
    assert GlmFamily.parse("Logistic") is GlmFamily.LOGISTIC
    np.testing.assert_allclose(GlmFamily.LOGISTIC.mean([0.0]), [0.5])
    t = np.array([-800.0, -3.0, 0.0, 3.0, 800.0])
    p = expit(t)
    assert np.all(np.diff(p) >= 0) and p[0] >= 0 and p[-1] <= 1
    assert np.all((expit(np.array([-30.0, 30.0])) > 0) & (expit(np.array([-30.0, 30.0])) < 1))
    with pytest.raises(ConfigurationError):
        GlmFamily.parse("poisson")
