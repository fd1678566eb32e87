import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etnode.data import (
    DEFAULT_LAGS,
    Driver,
    MultivariateSeries,
    Resampled,
    format_lags,
    gen_synthetic,
    load_csv,
    make_windows,
    normalize,
    parse_lags,
    resample_half,
    window_count,
    write_csv,
)
from etnode.errors import ContractError, IoError, ParseError, SchemaError


def _series(n, cols=2, seed=0):
    rng = np.random.default_rng(seed)
    names = tuple(f"x{k + 1}" for k in range(cols - 1)) + ("y",)
    return MultivariateSeries(names, rng.normal(size=(n, cols)))


def test_load_csv_selects_and_orders(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,y,b\n" + "".join(f"{i},{10 * i},{-i}\n" for i in range(5)))
    s = load_csv(path, "y", ["b", "a"])
    assert s.names == ("b", "a", "y") and len(s) == 5
    assert s.exogenous_names == ("b", "a") and s.target_name == "y"
    np.testing.assert_array_equal(s.values[2], [-2, 2, 20])


def test_load_csv_typo_lists_columns(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("temp,humidity,y\n1,2,3\n")
    with pytest.raises(SchemaError) as info:
        load_csv(path, "y", ["tmep"])
    msg = str(info.value)
    assert "tmep" in msg and "temp, humidity, y" in msg


def test_load_csv_blank_cell_names_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x,y\n1,2\n3,\n5,6\n")
    with pytest.raises(ParseError, match="row 3"):
        load_csv(path, "y", ["x"])


def test_load_csv_row_count_and_missing_file(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x,y\n1,2\n3,4\n")
    with pytest.raises(ContractError, match="at least 5"):
        load_csv(path, "y", ["x"], min_rows=5)
    with pytest.raises(IoError):
        load_csv(tmp_path / "missing.csv", "y", ["x"])


def test_csv_round_trip_is_exact(tmp_path):
    s = _series(7, 3)
    write_csv(s, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv", "y", ["x1", "x2"])
    np.testing.assert_array_equal(back.values, s.values)


def test_normalize_closed_form():
    s = MultivariateSeries(("x", "y"), np.array([[1.0, 1.0], [2.0, 5.0], [3.0, 3.0], [100.0, -7.0]]))
    z, stats = normalize(s, 3)
    np.testing.assert_allclose(z[:3, 0], [-math.sqrt(1.5), 0, math.sqrt(1.5)], atol=1e-12)
    assert stats.mean[0] == 2.0 and stats.std[0] == pytest.approx(math.sqrt(2 / 3))
    # the row after the split is scaled with training statistics, not its own
    assert z[3, 0] == pytest.approx((100 - 2) / math.sqrt(2 / 3))
    np.testing.assert_allclose(stats.invert(z), s.values, atol=1e-12)


def test_zero_variance_column_named():
    s = MultivariateSeries(("flat", "y"), np.column_stack([np.ones(10), np.arange(10.0)]))
    with pytest.raises(ContractError, match="flat"):
        normalize(s, 8)


def test_window_examples():
    assert make_windows(_series(100), 20, 3).n_windows == 78
    assert make_windows(_series(23), 20, 3).n_windows == 1
    s = _series(60)
    ds = make_windows(s, 5, 3)
    last = ds.n_windows - 1
    assert ds.targets([last])[0, -1] == ds.normalized[-1, -1]
    assert ds.truth([last], (3.0,))[0, 0] == s.target[-1]
    with pytest.raises(ContractError, match="23"):
        make_windows(_series(22), 20, 3)


def test_window_alignment():
    s = _series(40)
    ds = make_windows(s, 6, 2)
    i = 7
    np.testing.assert_array_equal(ds.inputs([i])[0], ds.normalized[i:i + 6])
    np.testing.assert_array_equal(ds.targets([i])[0], ds.normalized[i + 6:i + 8, -1])
    assert ds.last_target([i])[0] == s.target[i + 5]


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 400), T=st.integers(1, 30), K=st.integers(1, 6))
def test_window_count_formula_and_no_leakage(n, T, K):
    if n < T + K:
        with pytest.raises(ContractError):
            make_windows(_series(n, seed=n), T, K)
        return
    try:
        ds = make_windows(_series(n, seed=n), T, K)
    except ContractError:
        # tiny training prefixes can have zero variance only with < 2 rows, never here
        raise
    assert ds.n_windows == window_count(n, T, K) == n - T - K + 1
    tr, va, te = (ds.splits[k] for k in ("train", "val", "test"))
    first = lambda idx: idx + T
    last = lambda idx: idx + T + K - 1
    if len(tr) and len(te):
        assert first(te).min() > last(tr).max()
    if len(va) and len(te):
        assert first(te).min() > last(va).max()
    if len(tr) and len(va):
        assert first(va).min() > last(tr).max()
    assert not (set(tr) & set(va) or set(tr) & set(te) or set(va) & set(te))


def test_chronological_split_boundaries():
    ds = make_windows(_series(1000), 20, 3)
    train_end = 900
    val_start = train_end - 90
    assert (ds.splits["train"] + 22).max() < val_start
    assert (ds.splits["val"] + 20).min() >= val_start and (ds.splits["val"] + 22).max() < train_end
    assert (ds.splits["test"] + 20).min() >= train_end


def test_resample_examples():
    s = MultivariateSeries(("x", "y"), np.column_stack([np.arange(6.0), np.arange(6.0) * 10]))
    r = resample_half(s)
    np.testing.assert_array_equal(r.kept.values[:, 0], [0, 2, 4])
    np.testing.assert_array_equal(r.held_out.values[:, 0], [1, 3, 5])
    assert len(resample_half(resample_half(_series(12)).kept).kept) == 12 // 4
    for n in range(3, 40):
        # kept rows are 0, 2, 4, ..., so odd lengths round up
        assert len(resample_half(resample_half(_series(n)).kept).kept) == math.ceil(math.ceil(n / 2) / 2)
    with pytest.raises(ContractError):
        resample_half(_series(1))


def test_fractional_ground_truth_index_by_enumeration():
    # tag every original row with its own index and look up what each offset addresses
    n = 61
    s = MultivariateSeries(("x", "y"), np.column_stack([np.sin(np.arange(n)), np.arange(n, dtype=float)]))
    r = resample_half(s)
    T, K = 4, 3
    ds = make_windows(r.kept, T, K, original_target=s.target)
    for i in range(ds.n_windows):
        j = i + T - 1                      # resampled index of the last input
        kept_row_of_j = r.kept.values[j, 1]  # original index carried as the target value
        pos, ok = ds.truth_index(np.array([i]), (1.5,))
        if ok[0, 0]:
            assert ds.truth(np.array([i]), (1.5,))[0, 0] == 2 * j + 3 == kept_row_of_j + 3
        assert Resampled.original_index(j, 1.5) == 2 * j + 3


def test_fractional_offsets_hit_only_held_out_rows():
    n = 200
    s = MultivariateSeries(("x", "y"), np.column_stack([np.cos(np.arange(n)), np.arange(n, dtype=float)]))
    r = resample_half(s)
    ds = make_windows(r.kept, 5, 3, original_target=s.target)
    kept = set(r.kept.values[:, 1].astype(int))
    held = set(r.held_out.values[:, 1].astype(int))
    assert not kept & held
    idx = np.arange(ds.n_windows)
    pos, ok = ds.truth_index(idx, (0.5, 1.5, 2.5))
    assert set(pos[ok].tolist()) <= held
    pos, ok = ds.truth_index(idx, (1.0, 2.0, 3.0))
    assert set(pos[ok].tolist()) <= kept


def test_fractional_offsets_need_resampled_data():
    ds = make_windows(_series(50), 5, 3)
    with pytest.raises(ContractError):
        ds.truth([0], (1.5,))


def test_synthetic_identity_driver():
    s = gen_synthetic(3, 300, drivers=(Driver(0, 0, 1.0),), noise=0.0, ar=0.0)
    np.testing.assert_array_equal(s.values[:, -1], s.values[:, 0])


def test_synthetic_default_shape_and_determinism():
    a, b = gen_synthetic(7), gen_synthetic(7)
    assert a.names == ("x1", "x2", "x3", "x4", "x5", "y") and len(a) == 2000
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, gen_synthetic(8).values)


def test_synthetic_lag_validation():
    with pytest.raises(ContractError):
        gen_synthetic(0, 10, drivers=(Driver(0, 10, 1.0),))
    with pytest.raises(ContractError):
        gen_synthetic(0, 100, n_exo=1, drivers=DEFAULT_LAGS)


def test_lag_spec_text_round_trip():
    assert parse_lags("x1:3:0.6,x2:6:0.3", 5) == DEFAULT_LAGS
    assert format_lags(DEFAULT_LAGS) == "x1:3:0.6,x2:6:0.3"
    with pytest.raises(ContractError):
        parse_lags("x9:1:1", 5)
    with pytest.raises(ContractError):
        parse_lags("x1:one:1", 5)


@pytest.mark.parametrize("seed", range(3))
def test_least_squares_recovers_the_lag_structure(seed):
    # long series so estimation error sits well inside the tolerance
    v = gen_synthetic(seed, 20000).values
    L, n = 8, len(v)
    cols, truth = [], []
    lookup = {(d.column, d.lag): d.coeff for d in DEFAULT_LAGS}
    for k in range(5):
        for lag in range(L + 1):
            cols.append(v[L - lag:n - lag, k])
            truth.append(lookup.get((k, lag), 0.0))
    cols.append(v[L - 1:n - 1, 5])
    truth.append(0.3)
    A = np.column_stack(cols + [np.ones(n - L)])
    coef = np.linalg.lstsq(A, v[L:, 5], rcond=None)[0][:-1]
    np.testing.assert_allclose(coef, truth, atol=0.05)
