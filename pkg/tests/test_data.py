import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seapp.data import (
    CorpusSpec,
    DataError,
    NormStats,
    SyntheticShiftSpec,
    cap_rul,
    generate_synthetic,
    interpolate_missing,
    load_csv_corpus,
    read_manifest,
    sliding_windows,
    window_starts,
    write_corpus_csv,
)


# ---------------------------------------------------------------- windowing


def test_sliding_windows_example():
    stream = np.arange(20.0).reshape(10, 2)
    w = sliding_windows(stream, 4)
    assert w.shape == (2, 2, 4)
    np.testing.assert_array_equal(w[1, 0], [8, 10, 12, 14])


def test_half_overlap_windows():
    assert window_starts(256, 128, 0.5).tolist() == [0, 64, 128]
    assert window_starts(10, 11).size == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 200), st.integers(1, 40), st.sampled_from([0.0, 0.25, 0.5, 0.9]))
def test_window_count_formula(M, L, overlap):
    stride = max(1, round(L * (1 - overlap)))
    want = 0 if M < L else 1 + (M - L) // stride
    assert len(window_starts(M, L, overlap)) == want


def test_bad_overlap():
    with pytest.raises(ValueError):
        window_starts(10, 4, 1.0)


# ---------------------------------------------------------------- cleaning


def test_interpolate_missing_example():
    s = [np.nan, 1.0, np.nan, np.nan, 4.0, np.nan]
    np.testing.assert_array_equal(interpolate_missing(s), [1, 1, 2, 3, 4, 4])


def test_interpolate_all_missing_column():
    with pytest.raises(DataError):
        interpolate_missing(np.array([[1.0, np.nan], [2.0, np.nan]]))


def test_cap_rul():
    np.testing.assert_array_equal(cap_rul([0, 50, 125, 300]), [0, 50, 125, 125])
    with pytest.raises(DataError):
        cap_rul([-1.0])


def test_norm_stats_constant_column_kept_finite():
    X = np.ones((5, 2, 4))
    X[:, 1] = np.random.default_rng(0).normal(size=(5, 4))
    st_ = NormStats.fit(X)
    Z = st_.apply(X)
    assert np.all(np.isfinite(Z))
    np.testing.assert_array_equal(Z[:, 0], 0.0)
    assert Z[:, 1].std() == pytest.approx(1.0)


# ---------------------------------------------------------------- CSV


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_rul_csv_labels_at_window_end(tmp_path):
    rows = ["unit,a,b"] + [f"1,{i},{2 * i}" for i in range(6)] + [f"2,{i},{i}" for i in range(3)]
    path = _write(tmp_path, "\n".join(rows) + "\n")
    c = load_csv_corpus(CorpusSpec.cmapss(path, window_len=3))["train"]
    # unit 1: windows end at rows 2 and 5 -> RUL 3 and 0; unit 2: one window -> RUL 0
    np.testing.assert_array_equal(c.y, [3, 0, 0])
    assert c.X.shape == (3, 2, 3) and c.sensors == ["a", "b"]


def test_classification_csv_majority_label(tmp_path):
    rows = ["x,act"] + [f"{i},{lab}" for i, lab in enumerate("wwrrrwww")]
    path = _write(tmp_path, "\n".join(rows) + "\n")
    c = load_csv_corpus(CorpusSpec.har(path, window_len=4, label="act"))["train"]
    assert c.classes == ["r", "w"]
    assert c.y.tolist() == [0, 0, 1]  # windows at 0, 2, 4 with 50% overlap


def test_csv_missing_values_interpolated(tmp_path):
    path = _write(tmp_path, "a,b\n1,0\n,0\n3,0\nNaN,0\n5,0\n")
    c = load_csv_corpus(CorpusSpec(path, window_len=5))["train"]
    raw = c.stats.mean[0] + c.stats.std[0] * c.X[0, 0]
    np.testing.assert_allclose(raw, [1, 2, 3, 4, 5])


def test_csv_non_numeric_reports_location(tmp_path):
    path = _write(tmp_path, "a,b\n1,2\n3,oops\n")
    with pytest.raises(DataError, match=r"'oops'.*'b'.*row 1"):
        load_csv_corpus(CorpusSpec(path, window_len=1))


def test_csv_missing_column_and_file(tmp_path):
    path = _write(tmp_path, "a\n1\n2\n")
    with pytest.raises(DataError, match="missing column"):
        load_csv_corpus(CorpusSpec(path, window_len=1, sensors=["a", "z"]))
    with pytest.raises(DataError, match="not found"):
        load_csv_corpus(CorpusSpec(str(tmp_path / "nope.csv")))


def test_csv_too_short(tmp_path):
    path = _write(tmp_path, "a\n1\n2\n")
    with pytest.raises(DataError, match="long enough"):
        load_csv_corpus(CorpusSpec(path, window_len=5))


def test_har_defaults():
    s = CorpusSpec.har("x.csv")
    assert (s.window_len, s.overlap, s.schema) == (128, 0.5, "activity_classification")


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError):
        read_manifest(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("schema = \n")
    with pytest.raises(DataError):
        read_manifest(bad)


def test_source_stats_applied_to_test_split(tmp_path):
    a = _write(tmp_path, "s\n0\n2\n0\n2\n", "a.csv")
    b = _write(tmp_path, "s\n10\n10\n", "b.csv")
    out = load_csv_corpus(CorpusSpec(a, window_len=2, test_path=b))
    np.testing.assert_allclose(out["test"].X, 9.0)  # (10 - 1) / 1


# ---------------------------------------------------------------- synthetic


def small(**kw):
    base = dict(n_sensors=4, window_len=16, n_source=300, n_target=300, seed=3)
    base.update(kw)
    return SyntheticShiftSpec(**base)


def test_synthetic_is_deterministic():
    a, b = generate_synthetic(small()), generate_synthetic(small())
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.X, y.X)
        np.testing.assert_array_equal(x.y, y.y)
    assert small().spec_hash() == small().spec_hash()
    assert small().spec_hash() != small(seed=4).spec_hash()


def test_null_shift_domains_share_distribution():
    s, t = generate_synthetic(small(n_source=3000, n_target=3000))
    np.testing.assert_allclose(s.X.std(axis=(0, 2)), t.X.std(axis=(0, 2)), rtol=0.05)
    np.testing.assert_allclose(s.X.mean(axis=(0, 2)), t.X.mean(axis=(0, 2)), atol=0.05)


def test_scale_two_doubles_sensor_spread():
    spec = small(n_source=2000, n_target=2000, scale=(2.0, 1.0, 1.0, 1.0))
    s, t = generate_synthetic(spec)
    ratio = t.X[:, 0].std() / s.X[:, 0].std()
    assert ratio == pytest.approx(2.0, rel=0.10)


def test_rewiring_swaps_sensor_correlations():
    spec = small(n_source=2000, n_target=2000, permutation=(1, 0, 2, 3), noise_std=0.0)
    s, t = generate_synthetic(spec)
    cs = np.corrcoef(s.X.transpose(1, 0, 2).reshape(4, -1))
    ct = np.corrcoef(t.X.transpose(1, 0, 2).reshape(4, -1))
    assert ct[0, 2] == pytest.approx(cs[1, 2], abs=0.05)
    assert ct[1, 2] == pytest.approx(cs[0, 2], abs=0.05)


def test_benchmark_task_shape():
    spec = SyntheticShiftSpec.benchmark(seed=0, n_source=50, n_target=40)
    s, t = generate_synthetic(spec)
    assert s.X.shape == (50, 6, 32) and t.X.shape == (40, 6, 32)
    assert set(np.unique(s.y)) <= {0, 1, 2, 3}
    assert max(spec.scale) == 2.0
    assert sum(p != i for i, p in enumerate(spec.permutation)) == 4  # two swapped pairs


def test_regression_mode_labels():
    s, _ = generate_synthetic(small(n_classes=0))
    assert s.task == "regression"
    assert s.y.min() >= 0 and s.y.max() <= 125


def test_spec_validation():
    with pytest.raises(ValueError):
        small(permutation=(0, 0, 1, 2))
    with pytest.raises(ValueError):
        small(scale=(1.0, -1.0, 1.0, 1.0))


def test_corpus_csv_round_trip(tmp_path):
    s, _ = generate_synthetic(small(n_source=5))
    path = tmp_path / "s.csv"
    write_corpus_csv(s, path)
    spec = CorpusSpec(str(path), schema="activity_classification", window_len=16, unit="window", label="label")
    back = load_csv_corpus(spec, stats=NormStats(np.zeros(4), np.ones(4)), classes=["0", "1", "2", "3"])["train"]
    np.testing.assert_array_equal(back.X, s.X)
    np.testing.assert_array_equal(back.y, s.y)
