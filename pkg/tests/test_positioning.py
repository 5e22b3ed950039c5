import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roadsig import positioning as pos
from roadsig.core import Drive, RawWindow, build_route, window_labels
from roadsig.segmentors import SequenceSegmentor

from .conftest import stationary_drive


@pytest.mark.parametrize("s_tilde,prev,expected", [(5, 4, 5), (4, 4, 4), (9, 4, 4), (3, 4, 4), (1, 1, 1)])
def test_transition_logic(s_tilde, prev, expected):
    assert pos.transition_logic(s_tilde, prev) == expected


class TestMidpoint:
    def test_first(self, straight_route):
        assert pos.midpoint(straight_route, 1).as_array().tolist() == [12.5, 0.0]

    def test_last(self, straight_route):
        assert pos.midpoint(straight_route, 4).x == pytest.approx(100 - 100 / 8)

    def test_l_route(self, l_route):
        np.testing.assert_allclose(pos.midpoint(l_route, 4).as_array(), [60.0, 10.0])

    @pytest.mark.parametrize("s", [0, 5])
    def test_out_of_range(self, straight_route, s):
        with pytest.raises(ValueError):
            pos.midpoint(straight_route, s)


def moving_drive(seconds, speed=1.0, rate_hz=100.0):
    base = stationary_drive(seconds, rate_hz)
    gt_t = np.arange(int(seconds) + 1, dtype=float)
    return Drive(base.t, base.imu, rate_hz, gt_t, np.stack([speed * gt_t, 0 * gt_t], axis=1))


class TestStep:
    def test_constant_stub(self, straight_route):
        state = pos.PositioningState()
        raw = RawWindow(100.0, stationary_drive(2, 100).imu)
        for _ in range(5):
            r = pos.step(state, raw, lambda w: 1, straight_route)
            assert (r.position.x, r.seg_corrected) == (12.5, 1)
            state = r.state
        assert state.t == 10.0

    @pytest.mark.parametrize("labels,expected", [([1, 7, 2, 2], [1, 1, 2, 2]), ([1, 2, 3, 4], [1, 2, 3, 4])])
    def test_stub_sequences(self, labels, expected):
        route = build_route(np.array([[0.0, 0.0], [100.0, 0.0]]), 8)
        seg, state, out = SequenceSegmentor(labels), pos.PositioningState(), []
        raw = RawWindow(100.0, stationary_drive(2, 100).imu)
        for _ in labels:
            r = pos.step(state, raw, seg, route)
            out.append(r.seg_corrected)
            assert r.position.as_array().tolist() == route.midpoints[r.seg_corrected - 1].tolist()
            state = r.state
        assert out == expected

    def test_preprocess_failure_holds(self, straight_route):
        state = pos.PositioningState(prev_segment=3)
        raw = RawWindow(100.0, np.zeros((200, 6)))  # no gravity: rejected
        r = pos.step(state, raw, lambda w: 4, straight_route)
        assert (r.seg_corrected, r.flag, r.state.prev_segment) == (3, pos.FLAG_PREPROCESS_FAILED, 3)

    def test_segmentor_out_of_range(self, straight_route):
        raw = RawWindow(100.0, stationary_drive(2, 100).imu)
        with pytest.raises(ValueError):
            pos.step(pos.PositioningState(), raw, lambda w: 9, straight_route)


class TestRunDrive:
    def test_point_count(self, straight_route):
        traj = pos.run_drive(stationary_drive(10), lambda w: 1, straight_route)
        assert len(traj) == 5
        np.testing.assert_array_equal(traj.t, [0, 2, 4, 6, 8])

    def test_short_drive_empty(self, straight_route):
        assert len(pos.run_drive(stationary_drive(1.5), lambda w: 1, straight_route)) == 0

    def test_perfect_segmentor_quarter_segment(self, straight_route):
        drive = moving_drive(100)
        truth = window_labels(drive, straight_route)
        traj = pos.run_drive(drive, SequenceSegmentor(truth), straight_route)
        np.testing.assert_array_equal(traj.seg_corrected, truth)
        err = np.abs(traj.xy[:, 0] - drive.position_at(traj.t_mid)[:, 0]).mean()
        assert err == pytest.approx(100 / 16, rel=0.05)

    def test_always_two_ahead(self, straight_route):
        drive = moving_drive(100)
        truth = window_labels(drive, straight_route)
        wrong = np.minimum(truth + 2, 4)
        traj = pos.run_drive(drive, SequenceSegmentor(wrong), straight_route)
        assert np.all(np.diff(traj.seg_corrected) >= 0)
        # every proposal is 2+ ahead of the held segment, so nothing is ever accepted
        np.testing.assert_array_equal(traj.seg_corrected, 1)

    def test_flagged_window(self, straight_route):
        d = stationary_drive(6, 100)
        imu = d.imu.copy()
        imu[200:400] = 0.0
        traj = pos.run_drive(Drive(d.t, imu, 100.0), SequenceSegmentor([2, 3]), straight_route)
        np.testing.assert_array_equal(traj.flag, [0, 1, 0])
        np.testing.assert_array_equal(traj.seg_corrected, [2, 2, 3])

    def test_csv(self, straight_route, tmp_path):
        traj = pos.run_drive(stationary_drive(4), lambda w: 1, straight_route)
        pos.write_trajectory_csv(traj, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,x,y,seg_raw,seg_corrected,flag"
        assert lines[1] == "0.0,12.5,0.0,1,1,0"


@given(st.integers(1, 12), st.lists(st.integers(1, 12), max_size=60), st.data())
def test_logic_invariants(n, raw, data):
    route = build_route(np.array([[0.0, 0.0], [10.0 * n, 0.0]]), n)
    raw = np.minimum(raw, n)
    flags = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(raw), max_size=len(raw))), dtype=int)
    _, corrected = pos.apply_logic(raw, flags, route)
    prev = 1
    for s, c, f in zip(raw, corrected, flags):
        expected = prev if f else (s if s - prev in (0, 1) else prev)  # brute force
        assert c == expected and c in (prev, prev + 1) and 1 <= c <= n
        prev = c


@given(st.lists(st.integers(0, 1), min_size=1, max_size=40))
def test_perfect_labels_pass_through(steps):
    route = build_route(np.array([[0.0, 0.0], [60.0, 0.0]]), 6)
    truth = np.minimum(1 + np.cumsum(steps) - steps[0], 6)  # starts at 1, advances by 0 or 1
    raw, corrected = pos.apply_logic(truth, np.zeros(len(truth), int), route)
    np.testing.assert_array_equal(corrected, truth)
