import numpy as np
import pytest

from selfcal.dataset import (COLUMNS, Dataset, DatasetRecord, filter_dataset, load_csv, merge,
                             save_csv, split)
from selfcal.errors import ConfigError, IntegrityError, ParseError

Q = tuple(0.1 * i for i in range(13))


def make(n_poses=10, markers=2):
    recs = []
    for p in range(n_poses):
        q = tuple(v + 0.01 * p for v in Q)
        for f in range(markers):
            recs.append(DatasetRecord(p, 1, q, f, 1 + f % 2, (100.0 + f, 200.5 + p)))
    return Dataset(tuple(recs), "st", "demo")


def test_csv_round_trip_exact(tmp_path):
    recs = [DatasetRecord(0, 1, Q, 3, 1, (1234.5678901234567, 0.1 + 0.2)),
            DatasetRecord(0, 2, Q, 7, 2, (1.0, 2.0)),
            DatasetRecord(1, 1, tuple(v / 3 for v in Q), tracker_point=(0.1, -1 / 3, 2.0),
                          u95=2e-5, tracker_time=12.5, forces=(1.0, None, 3.0, 4.0))]
    ds = Dataset(tuple(recs), "lt")
    path = tmp_path / "d.csv"
    save_csv(ds, path)
    back = load_csv(path, "lt")
    assert back.records == ds.records


def test_headerless_default_order(tmp_path):
    path = tmp_path / "d.csv"
    save_csv(make(2, 1), path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(COLUMNS)
    (tmp_path / "noheader.csv").write_text("\n".join(lines[1:]) + "\n")
    assert load_csv(tmp_path / "noheader.csv", "st").records == make(2, 1).records


def test_parse_error_has_line_number(tmp_path):
    path = tmp_path / "d.csv"
    save_csv(make(3, 1), path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace(lines[2].split(",")[6], "abc", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as exc:
        load_csv(path, "st")
    assert exc.value.line == 3


def test_wrong_field_count(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(",".join(COLUMNS) + "\n1,2,3\n")
    with pytest.raises(ParseError):
        load_csv(path, "st")


def test_missing_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("pose_id,arm_idx\n1,1\n")
    with pytest.raises(ParseError):
        load_csv(path, "st")


def test_conflicting_joints_rejected():
    with pytest.raises(IntegrityError):
        Dataset((DatasetRecord(0, 1, Q), DatasetRecord(0, 1, tuple(v + 1 for v in Q))), "st")


def test_record_invariants():
    with pytest.raises(IntegrityError):
        DatasetRecord(0, 3, Q)
    with pytest.raises(IntegrityError):
        DatasetRecord(0, 1, Q[:5])
    with pytest.raises(IntegrityError):
        DatasetRecord(0, 1, Q, marker_face=2)
    with pytest.raises(IntegrityError):
        DatasetRecord(0, 1, Q[:-1] + (float("nan"),))


def test_unknown_provenance():
    with pytest.raises(ConfigError):
        Dataset((), "moon")


def test_pose_views():
    ds = make(4, 3)
    assert ds.pose_ids == (0, 1, 2, 3) and ds.n_poses == 4 and ds.n_markers == 12
    assert ds.pose_joints.shape == (4, 13)
    assert len(ds.groups()[2]) == 3


def test_split_ratio_and_determinism():
    ds = make(20, 2)
    a, b = split(ds, 0.7, seed=3)
    a2, b2 = split(ds, 0.7, seed=3)
    assert a.records == a2.records and b.records == b2.records
    assert a.n_poses == 14 and b.n_poses == 6
    assert not set(a.pose_ids) & set(b.pose_ids)
    assert split(ds, 0.7, seed=4)[0].pose_ids != a.pose_ids


def test_split_needs_two_poses():
    with pytest.raises(ConfigError):
        split(make(1, 1))


def test_filter_and_merge():
    ds = make(5, 2)
    cam1 = filter_dataset(ds, lambda r: r.camera_idx == 1)
    assert all(r.camera_idx == 1 for r in cam1.records)
    m = merge([ds, ds], "st")
    assert m.n_poses == 10 and len(m) == 20


def test_tracker_table():
    recs = [DatasetRecord(i, 1, Q, tracker_point=(i, 0.0, 0.0)) for i in range(3)]
    recs.append(DatasetRecord(3, 1, Q))
    ids, q, pts = Dataset(tuple(recs), "lt").tracker_table()
    assert ids == [0, 1, 2] and q.shape == (3, 13)
    np.testing.assert_array_equal(pts[:, 0], [0, 1, 2])
