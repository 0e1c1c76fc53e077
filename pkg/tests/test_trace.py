import json
import math

import pytest
from hypothesis import given, strategies as st

from drivefusion.errors import DuplicateDetection, MalformedRecord, NonMonotonicTimestamp, NoFrameInWindow, UnknownCategory
from drivefusion.trace import (
    Category,
    DynamicLevel,
    ObjectDetection,
    RouteMeta,
    SensorFrame,
    SensorTrace,
    Source,
    correspond,
    nearest_frame,
    parse_trace,
    serialize_trace,
    validate_trace,
)

META = {"kind": "meta", "name": "r1", "length": 1277.76, "max_speed": 13.9, "avg_speed": 7.3, "dynamic_level": "small"}


def lidar(oid, pos, cat="sign"):
    return {"id": oid, "category": cat, "pos": list(pos), "source": "lidar"}


def lines(*records):
    return "".join(json.dumps(r) + "\n" for r in records).encode()


def frame(t, camera=(), lidar_dets=()):
    return {"kind": "frame", "t": t, "camera": list(camera), "lidar": list(lidar_dets)}


def det(oid, pos, source=Source.LIDAR, cat=Category.SIGN):
    return ObjectDetection(oid, cat.value, cat, pos, source)


# ---- parse_trace -----------------------------------------------------------


def test_two_frame_trace_parses():
    data = lines(META, frame(0.0, lidar_dets=[lidar(1, (10, 0, 0))]), frame(0.1, lidar_dets=[lidar(1, (9, 0, 0))]))
    trace = parse_trace(data)
    assert len(trace.frames) == 2
    assert trace.frames[1].lidar_detections[0].position == (9.0, 0.0, 0.0)


def test_route_meta_record():
    trace = parse_trace(lines(META))
    assert trace.meta == RouteMeta("r1", 1277.76, 13.9, 7.3, DynamicLevel.SMALL)
    assert trace.meta.complexity == 0


def test_non_monotonic_frames_rejected():
    with pytest.raises(NonMonotonicTimestamp):
        parse_trace(lines(META, frame(1.0), frame(0.5)))


def test_unknown_category_rejected():
    with pytest.raises(UnknownCategory):
        parse_trace(lines(META, frame(0.0, lidar_dets=[lidar(1, (1, 0, 0), cat="dragon")])))


def test_duplicate_detection_rejected():
    with pytest.raises(DuplicateDetection):
        parse_trace(lines(META, frame(0.0, lidar_dets=[lidar(1, (1, 0, 0)), lidar(1, (2, 0, 0))])))


@pytest.mark.parametrize(
    "record",
    [
        {"kind": "imu", "t": 0.0, "angular_velocity": [0, 0], "linear_acceleration": [0, 0, 0]},
        {"kind": "imu", "t": "x", "angular_velocity": [0, 0, 0], "linear_acceleration": [0, 0, 0]},
        {"kind": "gps", "t": 0.0, "latitude": 95.0, "longitude": 0.0, "altitude": 0.0, "speed": 1.0},
        {"kind": "frame", "t": 0.0, "bogus": 1},
        {"kind": "teleport", "t": 0.0},
        {"kind": "imu", "t": 0.0, "angular_velocity": [0, 0, 3], "linear_acceleration": [0, 0, 0], "yaw_rate": 1.0},
    ],
)
def test_malformed_records_rejected(record):
    with pytest.raises(MalformedRecord):
        parse_trace(lines(META, record))


def test_first_record_must_be_meta():
    with pytest.raises(MalformedRecord) as exc:
        parse_trace(lines(frame(0.0), META))
    assert exc.value.line == 1


def test_invalid_json_reports_line():
    with pytest.raises(MalformedRecord) as exc:
        parse_trace(lines(META) + b"{not json\n")
    assert exc.value.line == 2


def test_yaw_rate_defaults_to_angular_z():
    rec = {"kind": "imu", "t": 0.0, "angular_velocity": [0, 0, 3.5], "linear_acceleration": [0, 0, 9.81]}
    assert parse_trace(lines(META, rec)).imu[0].yaw_rate == 3.5


# ---- nearest_frame ---------------------------------------------------------


def _trace(times):
    return SensorTrace(RouteMeta("x", 1.0, 1.0, 1.0, DynamicLevel.SMALL), frames=tuple(SensorFrame(t) for t in times))


def test_nearest_frame_examples():
    tr = _trace([0.0, 0.1, 0.2])
    assert nearest_frame(tr, 0.12, 0.1).t == 0.1
    assert nearest_frame(tr, 0.15, 0.1).t == 0.1
    with pytest.raises(NoFrameInWindow):
        nearest_frame(tr, 5.0, 0.1)


def test_nearest_frame_exact_tie_prefers_earlier():
    tr = _trace([0.0, 0.25, 0.75])
    assert nearest_frame(tr, 0.5, 1.0).t == 0.25


def _linear_scan(times, t, window):
    best = None
    for i, ti in enumerate(times):
        d = abs(ti - t)
        if d <= window and (best is None or d < best[0]):
            best = (d, i)
    return None if best is None else best[1]


# millisecond grid: distances compare exactly, so ties are genuine ties
@given(
    st.lists(st.integers(0, 100_000), min_size=1, max_size=30, unique=True),
    st.integers(-10_000, 110_000),
    st.integers(1, 50_000),
)
def test_nearest_frame_matches_linear_scan(ms, t_ms, window_ms):
    times = sorted(m / 1000 for m in ms)
    t, window = t_ms / 1000, window_ms / 1000
    tr = _trace(times)
    expected = _linear_scan(times, t, window)
    if expected is None:
        with pytest.raises(NoFrameInWindow):
            nearest_frame(tr, t, window)
    else:
        assert nearest_frame(tr, t, window).t == times[expected]


# ---- validate_trace --------------------------------------------------------


def test_validate_well_formed_trace():
    tr = parse_trace(lines(META, frame(0.0, lidar_dets=[lidar(1, (1, 0, 0))])))
    assert validate_trace(tr) == []


def test_validate_avg_above_max():
    tr = SensorTrace(RouteMeta("x", 10.0, 5.0, 7.0, DynamicLevel.SMALL))
    (v,) = validate_trace(tr)
    assert v.rule.startswith("RouteMeta")


def test_validate_duplicate_detection():
    f = SensorFrame(0.0, lidar_detections=(det(1, (1, 0, 0)), det(1, (2, 0, 0))))
    tr = SensorTrace(RouteMeta("x", 10.0, 5.0, 1.0, DynamicLevel.SMALL), frames=(f,))
    (v,) = validate_trace(tr)
    assert v.rule == "DuplicateDetection"


def test_same_id_across_sources_is_allowed():
    f = SensorFrame(0.0, (det(1, (1, 0, 0), Source.CAMERA_FRONT),), (det(1, (1, 0, 0)),))
    tr = SensorTrace(RouteMeta("x", 10.0, 5.0, 1.0, DynamicLevel.SMALL), frames=(f,))
    assert validate_trace(tr) == []


# ---- round trip ------------------------------------------------------------

coord = st.floats(-200, 200, allow_nan=False, allow_infinity=False)
detections = st.lists(
    st.tuples(st.integers(0, 50), st.sampled_from(list(Category)), st.tuples(coord, coord, coord)),
    max_size=5,
    unique_by=lambda x: x[0],
)


@given(st.lists(detections, min_size=1, max_size=6), st.lists(detections, min_size=6, max_size=6))
def test_serialize_parse_round_trip(lidar_sets, camera_sets):
    frames = tuple(
        SensorFrame(
            i * 0.1,
            tuple(ObjectDetection(o, c.value, c, p, Source.CAMERA_FRONT) for o, c, p in camera_sets[i]),
            tuple(ObjectDetection(o, c.value, c, p, Source.LIDAR) for o, c, p in dets),
        )
        for i, dets in enumerate(lidar_sets)
    )
    tr = SensorTrace(RouteMeta("rt", 100.0, 10.0, 5.0, DynamicLevel.MEDIUM, True, False), frames=frames)
    again = parse_trace(serialize_trace(tr).encode())
    assert again == tr
    assert serialize_trace(again) == serialize_trace(tr)


# ---- correspondence --------------------------------------------------------


def test_correspond_pairs_by_id_and_gates():
    a = [det(1, (0, 0, 0)), det(2, (10, 0, 0))]
    b = [det(1, (1, 0, 0)), det(2, (20, 0, 0))]
    c = correspond(a, b, gate=5.0, gate_ids=True)
    assert [(x.object_id, y.object_id) for x, y in c.pairs] == [(1, 1)]
    assert [d.object_id for d in c.only_first] == [2]
    assert [d.object_id for d in c.only_second] == [2]


def test_correspond_leftovers_matched_by_distance():
    a = [det(1, (0, 0, 0))]
    b = [det(7, (0.5, 0, 0))]
    assert not correspond(a, b).pairs
    assert len(correspond(a, b, match_leftovers=True).pairs) == 1


def test_math_helpers_consistent():
    from drivefusion.trace import add, distance, norm, sub

    assert distance((3, 4, 0), (0, 0, 0)) == 5.0
    assert norm((0, 6, 8)) == 10.0
    assert add(sub((1, 2, 3), (1, 1, 1)), (1, 1, 1)) == (1, 2, 3)
    assert math.isclose(norm((80, 80, 0)), 113.137, abs_tol=1e-3)
