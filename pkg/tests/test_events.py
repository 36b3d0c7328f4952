import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from oracles import flood_fill_partition, label_partition
from satcast.events import (
    CSV_COLUMNS,
    EventRow,
    detect_events,
    export_events_csv,
    extract_events,
    label_components_18,
    read_events_csv,
    select_top_events,
    threshold_volume,
)
from satcast.grid import GridError, Volume3D


def _pair(offset):
    m = np.zeros((3, 3, 3), bool)
    m[0, 0, 0] = True
    m[offset] = True
    return m


def test_threshold_is_strict():
    v = np.array([[[2.0, 2.0001, 1.0]]])
    np.testing.assert_array_equal(threshold_volume(v), [[[False, True, False]]])


@pytest.mark.parametrize("offset,expected", [((1, 1, 1), 2), ((1, 1, 0), 1), ((0, 1, 1), 1),
                                             ((1, 0, 1), 1), ((1, 0, 0), 1), ((0, 0, 2), 2)])
def test_pair_connectivity(offset, expected):
    assert label_components_18(_pair(offset)).max() == expected


def test_empty_and_full():
    assert label_components_18(np.zeros((2, 3, 3), bool)).max() == 0
    assert extract_events(np.zeros((2, 3, 3), int), np.zeros((2, 3, 3))) == []
    full = label_components_18(np.ones((2, 3, 3), bool))
    assert (full == 1).all()


def test_rejects_2d():
    with pytest.raises(GridError):
        label_components_18(np.zeros((3, 3), bool))


@pytest.mark.parametrize("seed", range(15))
def test_partition_matches_bfs(seed):
    mask = np.random.default_rng(seed).random((8, 16, 16)) < 0.2
    assert label_partition(label_components_18(mask)) == flood_fill_partition(mask, 18)


def test_labels_in_scan_order():
    mask = np.random.default_rng(99).random((6, 10, 10)) < 0.15
    labels = label_components_18(mask).ravel()
    first_seen = [int(v) for v in dict.fromkeys(labels[labels > 0])]
    assert first_seen == list(range(1, labels.max() + 1))


@settings(deadline=None, max_examples=25)
@given(arrays(np.bool_, (4, 6, 6)))
def test_connectivity_count_ordering(mask):
    n6 = len(flood_fill_partition(mask, 6))
    n26 = len(flood_fill_partition(mask, 26))
    n18 = int(label_components_18(mask).max())
    assert n26 <= n18 <= n6


def _brute_attributes(labels, v, k):
    t, r, c = np.nonzero(labels == k)
    t0, t1 = t.min(), t.max()
    mid = (t0 + t1) // 2
    sel = t == mid
    return dict(
        t_start=t0, t_end=t1, voxel_count=len(t), max_intensity=v[labels == k].max(),
        footprint_px=len(set(zip(r, c))),
        bbox=(r[sel].min(), c[sel].min(), r[sel].max(), c[sel].max()),
        centroid_row=r[sel].mean(), centroid_col=c[sel].mean(),
    )


@pytest.mark.parametrize("seed", range(5))
def test_attributes_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    v = rng.random((6, 12, 12)) * 6
    labels = label_components_18(threshold_volume(v, 3.0))
    events = extract_events(labels, v)
    assert len(events) == labels.max()
    for e in events:
        ref = _brute_attributes(labels, v, e.event_id)
        for key, val in ref.items():
            got = getattr(e, key)
            if isinstance(val, tuple):
                assert got == tuple(int(x) for x in val)
            else:
                assert got == pytest.approx(val)


def test_single_voxel_event():
    v = np.zeros((3, 4, 4))
    v[1, 2, 3] = 9.0
    (e,) = detect_events(Volume3D(v))
    assert (e.t_start, e.t_end, e.bbox, e.footprint_px, e.voxel_count) == (1, 1, (2, 3, 2, 3), 1, 1)
    assert e.duration_frames == 1 and e.max_intensity == 9.0


def test_select_top_ordering():
    v = np.zeros((1, 1, 9))
    v[0, 0, [0, 2, 4, 6, 8]] = [3.0, 7.0, 5.0, 7.0, 4.0]
    events = extract_events(label_components_18(threshold_volume(v)), v)
    top = select_top_events(events, 3)
    assert [e.max_intensity for e in top] == [7.0, 7.0, 5.0]
    assert top[0].event_id < top[1].event_id
    assert select_top_events(events, 10) == sorted(events, key=lambda e: (-e.max_intensity, e.event_id))
    assert select_top_events(events, 0) == []


def test_event_csv_round_trip(tmp_path):
    v = np.random.default_rng(3).random((5, 10, 10)) * 8
    events = detect_events(Volume3D(v), 5.0, top=5)
    path = tmp_path / "events.csv"
    export_events_csv(events, "seq7", path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.decode().splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = read_events_csv(path)
    assert rows == [EventRow.from_event(e, "seq7", i + 1) for i, e in enumerate(events)]
    assert [r.event_rank for r in rows] == list(range(1, len(events) + 1))
    assert rows[0].duration_min == events[0].duration_frames * 15
