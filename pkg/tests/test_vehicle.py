import itertools
import math

import pytest
from hypothesis import given, strategies as st

from drivefusion.errors import TimestampMismatch
from drivefusion.trace import Category, ObjectDetection, SensorFrame, Source
from drivefusion.vehicle import (
    DiagnosisFlag,
    DiagnosisRules,
    MotionStatus,
    cross_sensor_consistency,
    describe_lidar,
    describe_vision,
    diagnose,
    gate_range,
)


def cam(oid, pos, cat=Category.FOUR_WHEEL_VEHICLE):
    return ObjectDetection(oid, cat.value, cat, tuple(map(float, pos)), Source.CAMERA_FRONT)


def lid(oid, pos, cat=Category.FOUR_WHEEL_VEHICLE):
    return ObjectDetection(oid, cat.value, cat, tuple(map(float, pos)), Source.LIDAR)


def frames(before, after, t=0.0, dt=0.1, kind="camera"):
    key = "camera_detections" if kind == "camera" else "lidar_detections"
    return SensorFrame(t, **{key: tuple(before)}), SensorFrame(t + dt, **{key: tuple(after)})


# ---- describe_vision -------------------------------------------------------


def test_vision_stationary():
    d = describe_vision(*frames([cam(1, (10, 0, 0))], [cam(1, (10, 0, 0))]))
    assert d.motions[0].displacement == (0.0, 0.0, 0.0)
    assert d.mean_displacement == (0.0, 0.0, 0.0)


def test_vision_mean_of_two():
    d = describe_vision(
        *frames([cam(1, (10, 0, 0)), cam(2, (20, -2, 0))], [cam(1, (9, 0.5, 0)), cam(2, (19, -2, 0))])
    )
    assert d.mean_displacement == pytest.approx((-1.0, 0.25, 0.0))
    assert d.problems() == []


def test_vision_disappeared_excluded_from_mean():
    d = describe_vision(*frames([cam(1, (10, 0, 0)), cam(2, (5, 0, 0))], [cam(1, (8, 0, 0))]))
    status = {m.object_id: m.status for m in d.motions}
    assert status == {1: MotionStatus.TRACKED, 2: MotionStatus.DISAPPEARED}
    assert d.mean_displacement == (-2.0, 0.0, 0.0)


def test_vision_requires_ordered_frames():
    a, b = frames([], [])
    with pytest.raises(ValueError):
        describe_vision(b, a)


# ---- describe_lidar --------------------------------------------------------


def test_lidar_direct_displacement():
    d = describe_lidar(*frames([lid(1, (50, 0, 0))], [lid(1, (48, 0, 0))], kind="lidar"))
    assert d.motions[0].displacement == (-2.0, 0.0, 0.0)


def test_lidar_same_label_objects_match_nearest():
    # both objects share an id group; nearest-neighbour wins over the swap
    before = [lid(1, (10, 5, 0)), lid(1, (10, -5, 0))]
    after = [lid(1, (9, 5, 0)), lid(1, (9, -5, 0))]
    d = describe_lidar(*frames(before, after, kind="lidar"))
    tracked = [m for m in d.motions if m.status is MotionStatus.TRACKED]
    assert [m.displacement for m in tracked] == [(-1.0, 0.0, 0.0), (-1.0, 0.0, 0.0)]
    # brute force over both assignments confirms the minimum total cost
    costs = {
        perm: sum(math.dist(before[i].position, after[j].position) for i, j in enumerate(perm))
        for perm in itertools.permutations(range(2))
    }
    assert min(costs, key=costs.get) == (0, 1)
    assert costs[(0, 1)] == pytest.approx(2.0)


def test_lidar_jump_beyond_gate_splits():
    d = describe_lidar(*frames([lid(1, (10, 0, 0))], [lid(1, (18, 0, 0))], kind="lidar"))
    assert sorted(m.status.value for m in d.motions) == ["appeared", "disappeared"]
    assert d.mean_displacement == (0.0, 0.0, 0.0)
    assert d.problems() == []


# ---- gate_range ------------------------------------------------------------


def test_gate_range_examples():
    assert gate_range([lid(1, (100, 0, 0))], 100.0) == {1}
    assert gate_range([lid(1, (80, 80, 0))], 100.0) == frozenset()
    assert gate_range([], 100.0) == frozenset()


coord = st.floats(-150, 150, allow_nan=False)
point = st.tuples(coord, coord, coord)


@given(st.lists(point, max_size=10), st.floats(1, 120), st.floats(1, 120))
def test_gate_range_monotone_in_limit(points, r1, r2):
    dets = [lid(i, p) for i, p in enumerate(points)]
    lo, hi = sorted((r1, r2))
    assert gate_range(dets, lo) <= gate_range(dets, hi)


# ---- cross_sensor_consistency ----------------------------------------------


@pytest.mark.parametrize(
    "l, c, expected", [((10, 0, 0), (10, 0, 0), 0.0), ((10, 0, 0), (10, 3, 0), 3.0), ((3, 4, 0), (0, 0, 0), 5.0)]
)
def test_consistency_examples(l, c, expected):
    assert cross_sensor_consistency({1}, {1: l}, {1: c}) == {1: pytest.approx(expected, abs=1e-12)}


def test_consistency_skips_unpaired_ids():
    missing = []
    out = cross_sensor_consistency({1, 2}, {1: (0, 0, 0), 2: (1, 0, 0)}, {1: (0, 0, 0)}, missing)
    assert out == {1: 0.0} and missing == [2]


@given(point, point, point)
def test_consistency_symmetric_and_translation_invariant(a, b, shift):
    d_ab = cross_sensor_consistency({1}, {1: a}, {1: b})[1]
    d_ba = cross_sensor_consistency({1}, {1: b}, {1: a})[1]
    moved = cross_sensor_consistency(
        {1}, {1: tuple(x + s for x, s in zip(a, shift))}, {1: tuple(x + s for x, s in zip(b, shift))}
    )[1]
    assert d_ab == d_ba
    assert d_ab >= 0
    assert moved == pytest.approx(d_ab, abs=1e-9)


# ---- diagnose --------------------------------------------------------------


def _scene(positions, offsets=None, t=0.0):
    offsets = offsets or {}
    camera = [cam(i, tuple(p + o for p, o in zip(pos, offsets.get(i, (0, 0, 0))))) for i, pos in positions.items()]
    lidar = [lid(i, pos) for i, pos in positions.items()]
    f0 = SensorFrame(t, tuple(camera), tuple(lidar))
    f1 = SensorFrame(t + 0.1, tuple(camera), tuple(lidar))
    vision = describe_vision(f0, f1)
    ld = describe_lidar(f0, f1)
    gated = gate_range(f0.lidar_detections)
    deltas = cross_sensor_consistency(gated, {d.object_id: d.position for d in lidar}, {d.object_id: d.position for d in camera})
    return vision, ld, deltas


def test_diagnose_all_consistent():
    vision, ld, deltas = _scene({1: (10, 0, 0), 2: (20, 3, 0), 3: (30, -3, 0)})
    assert diagnose(vision, ld, deltas).flags == {DiagnosisFlag.OK}


def test_diagnose_majority_misalignment():
    pos = {i: (10.0 * i, 0.0, 0.0) for i in range(1, 6)}
    vision, ld, deltas = _scene(pos, {i: (0, 5.0, 0) for i in range(1, 5)})
    diag = diagnose(vision, ld, deltas)
    assert DiagnosisFlag.SENSOR_MISALIGNMENT in diag.flags
    assert sorted(diag.per_object_delta.values()) == pytest.approx([0.0, 5.0, 5.0, 5.0, 5.0])
    assert diag.problems() == []


def test_diagnose_lidar_dropout():
    cams = tuple(cam(i, (10.0 * i, 1, 0)) for i in range(1, 5))
    f0, f1 = SensorFrame(0.0, cams), SensorFrame(0.1, cams)
    diag = diagnose(describe_vision(f0, f1), describe_lidar(f0, f1), {}, expected_min_objects=1)
    assert diag.gated_ids == frozenset()
    assert DiagnosisFlag.LIDAR_FAULT in diag.flags


def test_diagnose_camera_fault_when_camera_objects_lack_lidar():
    cams = tuple(cam(i, (10.0 * i, 1, 0)) for i in range(1, 4))
    lids = (lid(9, (50, 0, 0)),)
    f0, f1 = SensorFrame(0.0, cams, lids), SensorFrame(0.1, cams, lids)
    diag = diagnose(describe_vision(f0, f1), describe_lidar(f0, f1), {})
    assert DiagnosisFlag.CAMERA_FAULT in diag.flags


def test_diagnose_timestamp_mismatch():
    vision, _, _ = _scene({1: (10, 0, 0)})
    _, ld, _ = _scene({1: (10, 0, 0)}, t=1.0)
    with pytest.raises(TimestampMismatch):
        diagnose(vision, ld, {})


def test_diagnose_delta_exactly_tau_is_not_discrepant():
    vision, ld, deltas = _scene({1: (10, 0, 0)}, {1: (0, 2.0, 0)})
    assert diagnose(vision, ld, deltas).flags == {DiagnosisFlag.OK}


offset = st.floats(0, 10, allow_nan=False)


@given(st.lists(offset, min_size=1, max_size=8), st.floats(0.5, 5))
def test_flags_follow_majority_rule(offsets, tau):
    pos = {i + 1: (10.0 * (i + 1), 0.0, 0.0) for i in range(len(offsets))}
    vision, ld, deltas = _scene(pos, {i + 1: (0, o, 0) for i, o in enumerate(offsets)})
    diag = diagnose(vision, ld, deltas, rules=DiagnosisRules(tau_obj=tau))
    over = sum(d > tau for d in diag.per_object_delta.values())
    assert (DiagnosisFlag.SENSOR_MISALIGNMENT in diag.flags) == (over / len(offsets) >= 0.5)
    assert diag.problems() == []
    assert (DiagnosisFlag.OK in diag.flags) == (diag.flags == {DiagnosisFlag.OK})
