import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavedir import datapipe as dp
from wavedir.errors import ArtifactError, InsufficientDataError, RecordError, SchemaError
from wavedir.numerics import SeededRng


def record(t, speed=0.5, yaw=0.3, valid=True, **kw):
    base = dict(timestamp=t, accel_x=0.1, accel_y=0.0, accel_z=-9.8, gyro_x=0.0, gyro_y=0.0, gyro_z=0.01,
                mag_x=0.5, mag_y=0.0, mag_z=0.8, north_vel=speed, east_vel=0.0, down_vel=0.0, alt=10.0,
                yaw=yaw, roll=0.01, pitch=-0.02, w_quat=1.0, x_quat=0.0, y_quat=0.0, z_quat=0.0,
                heave_period=2.0, heave_motion=0.01, heave_accel=0.1, valid=valid)
    base.update(kw)
    return dp.RawRecord(**base)


def moving_log(count, rate=10.0, t0=0.0, **kw):
    return [record(t0 + i / rate, yaw=math.sin(0.01 * i), **kw) for i in range(count)]


def transect(length, seed=0, wave=0.4):
    rng = SeededRng(seed)
    return dp.Transect("t.0", rng.normal((length, dp.N_FEATURES)), rng.uniform(-3, 3, length),
                       np.arange(length) / 10.0, np.arange(length), 10.0, wave)


def test_feature_order():
    assert len(dp.FEATURE_NAMES) == 26
    assert dp.FEATURE_NAMES[:3] == ("accel_x", "accel_y", "accel_z")
    assert dp.FEATURE_NAMES[13:19] == ("yaw_sine", "yaw_cosine", "roll_sine", "roll_cosine", "pitch_sine",
                                      "pitch_cosine")
    assert dp.FEATURE_NAMES[-3:] == ("heave_period", "heave_motion", "heave_accel")


def test_csv_round_trip_and_empty(tmp_path):
    recs = moving_log(3)
    dp.write_csv(tmp_path / "a.csv", recs)
    back = dp.load_csv(tmp_path / "a.csv")
    assert back.records == recs and back.rejected == []
    dp.write_csv(tmp_path / "e.csv", [])
    empty = dp.load_csv(tmp_path / "e.csv")
    assert len(empty) == 0 and empty.rejected == []


def test_csv_rejects_out_of_range_yaw(tmp_path):
    recs = moving_log(3)
    recs[1] = record(0.1, yaw=3.2)
    dp.write_csv(tmp_path / "a.csv", recs)
    log = dp.load_csv(tmp_path / "a.csv")
    assert len(log) == 2
    assert [line for line, _ in log.rejected] == [3]
    with pytest.raises(RecordError, match="line 3"):
        dp.load_csv(tmp_path / "a.csv", strict=True)


def test_csv_unparseable_value_reported_by_line(tmp_path):
    dp.write_csv(tmp_path / "a.csv", moving_log(2))
    lines = (tmp_path / "a.csv").read_text().splitlines()
    lines[2] = lines[2].replace(lines[2].split(",")[3], "abc", 1)
    (tmp_path / "a.csv").write_text("\n".join(lines) + "\n")
    log = dp.load_csv(tmp_path / "a.csv")
    assert len(log) == 1 and log.rejected[0][0] == 3


def test_csv_missing_column_is_schema_error(tmp_path):
    dp.write_csv(tmp_path / "a.csv", moving_log(2))
    lines = (tmp_path / "a.csv").read_text().splitlines()
    cols = lines[0].split(",")
    k = cols.index("alt")
    fixed = [",".join(v for j, v in enumerate(line.split(",")) if j != k) for line in lines]
    (tmp_path / "a.csv").write_text("\n".join(fixed) + "\n")
    with pytest.raises(SchemaError, match="alt"):
        dp.load_csv(tmp_path / "a.csv")


def test_segment_examples():
    assert dp.clean_and_segment(moving_log(300, speed=0.0), 0.1, 100) == []
    assert dp.clean_and_segment([], 0.1, 100) == []
    one = dp.clean_and_segment(moving_log(1000), 0.1, 100, sample_rate=10.0)
    assert len(one) == 1 and len(one[0]) == 1000
    gap = moving_log(500) + moving_log(500, t0=50.0 + 5 / 10.0)
    two = dp.clean_and_segment(gap, 0.1, 100, sample_rate=10.0)
    assert [len(t) for t in two] == [500, 500]


def test_segment_drops_invalid_and_bad_quaternions():
    recs = moving_log(400)
    recs[150] = record(15.0, valid=False)
    recs[300] = record(30.0, w_quat=1.05)
    out = dp.clean_and_segment(recs, 0.1, 100, sample_rate=10.0)
    assert [len(t) for t in out] == [150, 149]
    assert out[1].source_index[0] == 151
    assert [t.id for t in out] == ["log.0", "log.1"]


def test_segment_exclusion_interval_and_min_len():
    recs = moving_log(400)
    out = dp.clean_and_segment(recs, 0.1, 100, sample_rate=10.0, exclusions=[(10.0, 29.95)])
    assert [len(t) for t in out] == [100, 100]
    assert dp.clean_and_segment(recs, 0.1, 401, sample_rate=10.0) == []


def gap_scan(times, keep, max_gap, min_len):
    segs, cur = [], []
    for i, t in enumerate(times):
        if not keep[i]:
            if len(cur) >= min_len:
                segs.append(cur)
            cur = []
            continue
        if cur and t - times[cur[-1]] > max_gap + 1e-9:
            if len(cur) >= min_len:
                segs.append(cur)
            cur = []
        cur.append(i)
    if len(cur) >= min_len:
        segs.append(cur)
    return segs


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([1, 1, 1, 1, 2, 3, 5]), st.booleans(), st.booleans()),
                min_size=0, max_size=120), st.integers(1, 15))
def test_segment_matches_gap_scan(steps, min_len):
    times, recs, keep, t = [], [], [], 0.0
    for step, moving, valid in steps:
        t += step / 10.0
        times.append(t)
        live = moving or valid  # mostly kept rows
        recs.append(record(t, speed=0.5 if live else 0.0))
        keep.append(live)
    out = dp.clean_and_segment(recs, 0.1, min_len, sample_rate=10.0)
    expect = gap_scan(times, keep, 0.2, min_len)
    assert [t.source_index.tolist() for t in out] == expect


def test_encode_angles_examples():
    assert dp.encode_angles(0.0, 0.0, 0.0)[:2] == (0.0, 1.0)
    s, c = dp.encode_angles(0.0, 0.0, math.pi / 2)[4:]
    assert s == 1.0 and abs(c) < 1e-16
    a = np.array(dp.encode_angles(0.0, math.pi - 1e-6, 0.0))
    b = np.array(dp.encode_angles(0.0, -math.pi + 1e-6, 0.0))
    assert np.all(np.abs(a - b) < 3e-6)


@given(st.floats(-10, 10), st.floats(0, 1e-4))
def test_encoding_continuity(theta, eps):
    a = np.array(dp.encode_angles(theta, theta, theta))
    b = np.array(dp.encode_angles(theta + eps, theta + eps, theta + eps))
    assert np.all(np.abs(a - b) <= 2 * eps + 1e-15)


def test_make_label_examples():
    s, c = dp.make_label(1.1, 1.1)
    assert (s, c) == (0.0, 1.0)
    s, c = dp.make_label(0.0, 3 * math.pi / 2)
    assert s == pytest.approx(1.0) and c == pytest.approx(0.0, abs=1e-15)
    s, c = dp.make_label(math.pi, -math.pi)
    assert s == pytest.approx(0.0, abs=1e-15) and c == 1.0


def test_window_examples(caplog):
    assert len(dp.make_windows(transect(10), 10)) == 1
    assert len(dp.make_windows(transect(12), 10)) == 3
    with caplog.at_level("WARNING"):
        empty = dp.make_windows(transect(9), 10)
    assert len(empty) == 0 and "shorter" in caplog.text


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(2, 12), st.integers(1, 7))
def test_window_count_and_contents(length, n, stride):
    t = transect(length)
    ws = dp.make_windows(t, n, stride)
    starts = [s for s in range(0, length) if s + n <= length][::stride]
    assert len(ws) == len(starts) == dp.window_count(length, n, stride)
    for k, s in enumerate(starts):
        assert np.array_equal(ws.windows[k], t.rows[s: s + n - 1])
        d = dp.wrap_angle(t.yaw[s + n - 1] - t.wave_direction)
        assert np.allclose(ws.targets[k], [math.sin(d), math.cos(d)], atol=1e-15)
    if len(ws):
        assert np.allclose(np.hypot(ws.targets[:, 0], ws.targets[:, 1]), 1.0, atol=1e-9)


def test_standardizer_examples():
    rows = np.zeros((4, dp.N_FEATURES))
    rows[:, 0] = 5.0
    rows[:, 1] = [1, 3, 1, 3]
    s = dp.fit_standardizer(rows)
    assert s.mu[0] == 5.0 and s.sigma[0] == 0.0 and s.sigma_clamped[0] == 1e-8
    assert s.mu[1] == 2.0 and s.sigma[1] == 1.0
    assert np.all(s.apply(s.mu) == 0.0)
    assert s.apply(s.mu + s.sigma)[1] == 1.0
    with pytest.raises(InsufficientDataError):
        dp.fit_standardizer(rows[:1])


def test_standardized_train_columns():
    rows = SeededRng(4).normal((500, dp.N_FEATURES), 3.0, 2.5)
    z = dp.fit_standardizer(rows).apply(rows)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-12)
    assert np.all(np.abs(z.std(axis=0) - 1) < 1e-9)


def multi_windows(count_per=(50, 50)):
    sets = []
    for j, c in enumerate(count_per):
        t = transect(c + 9, seed=j)
        t.id = f"t.{j}"
        sets.append(dp.make_windows(t, 10))
    return dp.WindowSet.concat(sets, 10)


def test_split_examples():
    ws = multi_windows()
    tr, te = dp.split(ws, 0.8, SeededRng(0))
    assert (len(tr), len(te)) == (80, 20)
    # chronological: the tail of each transect goes to test
    for tid in ("t.0", "t.1"):
        assert te.start[te.transect == tid].min() > tr.start[tr.transect == tid].max()
    a = dp.split(ws, 0.8, SeededRng(3), "shuffled")
    b = dp.split(ws, 0.8, SeededRng(3), "shuffled")
    assert np.array_equal(a[0].start, b[0].start) and len(a[0]) == 80
    with pytest.raises(InsufficientDataError):
        dp.split(ws.take([0]), 0.8)
    with pytest.raises(ValueError):
        dp.split(ws, 1.0)


@given(st.integers(2, 80), st.floats(0.05, 0.95), st.sampled_from(["chronological", "shuffled"]),
       st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_split_is_partition(count, frac, mode, seed):
    ws = multi_windows((count,))
    tr, te = dp.split(ws, frac, SeededRng(seed), mode)
    keys = lambda w: set(zip(w.transect.tolist(), w.start.tolist()))  # noqa: E731
    assert keys(tr).isdisjoint(keys(te))
    assert keys(tr) | keys(te) == keys(ws)


def test_build_dataset_fits_once_on_train_rows():
    ts = [transect(120, seed=1), transect(80, seed=2)]
    ts[1].id = "t.1"
    ds = dp.build_dataset(ts, 10, 1, 0.8, SeededRng(0))
    assert ds.standardizer.fit_count == 1
    raw_train, raw_test = dp.split(dp.WindowSet.concat([dp.make_windows(t, 10) for t in ts], 10), 0.8)
    rows = dp.training_rows(ts, raw_train)
    assert np.allclose(ds.standardizer.mu, rows.mean(axis=0), atol=1e-15)
    np.testing.assert_array_equal(ds.test.windows, ds.standardizer.apply(raw_test.windows))


def test_build_dataset_with_fixed_standardizer():
    ts = [transect(60)]
    s = dp.fit_standardizer(SeededRng(9).normal((10, dp.N_FEATURES)))
    ds = dp.build_dataset(ts, 10, standardizer=s)
    assert len(ds.train) == 0 and len(ds.test) == 51
    assert ds.standardizer is s


def test_save_and_load_dataset(tmp_path):
    ts = [transect(100)]
    ds = dp.build_dataset(ts, 5, 2, 0.8, SeededRng(0))
    ds.meta = {"split_seed": 0, "stride": 2}
    bin_path, json_path = dp.save_dataset(tmp_path / "d", ds)
    assert bin_path.read_bytes()[:8] == b"WAVEDIR\x00"
    side = json.loads(json_path.read_text())
    assert side["feature_order"] == list(dp.FEATURE_NAMES) and side["split_seed"] == 0
    back = dp.load_dataset(json_path)
    for name in ("train", "test"):
        a, b = getattr(ds, name), getattr(back, name)
        assert np.array_equal(a.windows, b.windows) and np.array_equal(a.targets, b.targets)
        assert np.array_equal(a.start, b.start) and a.transect.tolist() == b.transect.tolist()
    assert np.array_equal(back.standardizer.mu, ds.standardizer.mu)
    assert back.meta["stride"] == 2


def test_load_dataset_errors(tmp_path):
    with pytest.raises(ArtifactError, match="preprocess"):
        dp.load_dataset(tmp_path / "missing.json")
    ds = dp.build_dataset([transect(40)], 5, 1, 0.8, SeededRng(0))
    bin_path, json_path = dp.save_dataset(tmp_path / "d", ds)
    bin_path.write_bytes(b"XXXXXXXX" + bin_path.read_bytes()[8:])
    with pytest.raises(ArtifactError, match="magic"):
        dp.load_dataset(json_path)


def test_metadata_and_overrides(tmp_path):
    dp.write_metadata(tmp_path / "m.csv", [dp.LogMeta("a", 270.0, 36.0)])
    assert dp.read_metadata(tmp_path / "m.csv") == [dp.LogMeta("a", 270.0, 36.0)]
    (tmp_path / "o.csv").write_text("log_id,t_start,t_end\n# manual cut\na,1.5,3\na,10,12\n")
    assert dp.read_boundary_overrides(tmp_path / "o.csv") == {"a": [(1.5, 3.0), (10.0, 12.0)]}
