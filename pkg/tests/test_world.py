import math

import numpy as np
import numpy.testing as npt
import pytest

from instinct_rl import world
from instinct_rl.world import (
    ACTION_LIMIT,
    AGENT_RADIUS,
    BIN_WIDTH,
    BOX_LIDAR,
    BUTTONS_LIDAR,
    COMPASS,
    CORRECT_BUTTON_LIDAR,
    ELEMENT_RANGE,
    GOAL_LIDAR,
    HAZARD_LIDAR,
    HAZARD_RANGE,
    MAP_HALF_EXTENT,
    OBS_DIM,
    AgentPose,
    WorldLayout,
    WorldState,
    assemble_observation,
    compass_features,
    hazard_indicator,
    lidar_scan,
    resolve_box_push,
    step_kinematics,
    wrap_angle,
)


def empty_layout(agent=AgentPose(0.0, 0.0, 0.0)):
    return WorldLayout(
        hazard_centers=np.zeros((0, 2)),
        hazard_radii=np.zeros(0),
        button_centers=np.zeros((0, 2)),
        button_radii=np.zeros(0),
        correct_button=-1,
        goal_center=None,
        goal_radius=world.GOAL_RADIUS,
        box_center=None,
        box_radius=world.BOX_RADIUS,
        agent_start=agent,
    )


class TestKinematics:
    def test_forward_along_heading(self):
        pose = step_kinematics(AgentPose(0, 0, 0), (0.1, 0.0))
        assert pose.x == pytest.approx(0.1)
        assert pose.y == pytest.approx(0.0)
        assert pose.heading == 0.0

    def test_pure_turn(self):
        pose = step_kinematics(AgentPose(0, 0, 0), (0.0, 0.1))
        assert pose.heading == pytest.approx(0.1)
        assert (pose.x, pose.y) == (0.0, 0.0)

    def test_clamped_at_bound(self):
        pose = step_kinematics(AgentPose(MAP_HALF_EXTENT, 0, 0), (0.1, 0.0))
        assert pose.x == MAP_HALF_EXTENT

    def test_action_clamped(self):
        pose = step_kinematics(AgentPose(0, 0, 0), (5.0, -3.0))
        assert math.hypot(pose.x, pose.y) <= ACTION_LIMIT + 1e-12
        assert abs(wrap_angle(pose.heading - 0.0 + 0.1)) < 1e-12

    def test_turn_applies_before_move(self):
        pose = step_kinematics(AgentPose(0, 0, 0), (0.1, 0.1))
        assert pose.x == pytest.approx(0.1 * math.cos(0.1))
        assert pose.y == pytest.approx(0.1 * math.sin(0.1))

    def test_step_bound_fuzz(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            pose = AgentPose(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
            action = rng.uniform(-0.3, 0.3, 2)
            new = step_kinematics(pose, action)
            assert math.hypot(new.x - pose.x, new.y - pose.y) <= 0.1 + 1e-12
            assert abs(wrap_angle(new.heading - pose.heading)) <= 0.1 + 1e-12
            assert -math.pi <= new.heading < math.pi

    def test_pure_function(self):
        pose = AgentPose(0.3, -0.2, 1.0)
        a = step_kinematics(pose, (0.05, -0.02))
        b = step_kinematics(pose, (0.05, -0.02))
        assert (a.x, a.y, a.heading) == (b.x, b.y, b.heading)
        assert (pose.x, pose.y, pose.heading) == (0.3, -0.2, 1.0)


class TestLidar:
    def test_no_objects_all_zero(self):
        npt.assert_array_equal(lidar_scan(AgentPose(0, 0, 0), np.zeros((0, 2)), np.zeros(0), 1.0), 0.0)

    def test_adjacent_dead_ahead_reads_one(self):
        # surface contact: gap 0 -> bin 0 saturates at 1.0
        centers = np.array([[AGENT_RADIUS + 0.2, 0.0]])
        out = lidar_scan(AgentPose(0, 0, 0), centers, np.array([0.2]), 1.0)
        assert out[0] == 1.0
        npt.assert_array_equal(out[1:], 0.0)

    def test_point_hazard_half_range(self):
        out = lidar_scan(AgentPose(0, 0, 0), np.array([[0.5, 0.0]]), np.array([0.0]), 1.0)
        # agent radius shortens the gap: 1 - (0.5 - 0.1) / 1.0
        assert out[0] == pytest.approx(1.0 - (0.5 - AGENT_RADIUS))
        npt.assert_array_equal(out[1:], 0.0)

    def test_beyond_range_contributes_zero(self):
        out = lidar_scan(AgentPose(0, 0, 0), np.array([[1.5, 0.0]]), np.array([0.0]), 1.0)
        npt.assert_array_equal(out, 0.0)

    def test_bin_is_bearing_relative_to_heading(self):
        # object straight north, agent facing north -> bin 0
        out = lidar_scan(AgentPose(0, 0, math.pi / 2), np.array([[0.0, 0.5]]), np.array([0.0]), 1.0)
        assert out[0] > 0
        # same object, agent facing east -> bin 4 (90 degrees ccw)
        out = lidar_scan(AgentPose(0, 0, 0.0), np.array([[0.0, 0.5]]), np.array([0.0]), 1.0)
        assert out[4] > 0

    def test_max_aggregation_per_bin(self):
        centers = np.array([[0.4, 0.0], [0.8, 0.0]])
        out = lidar_scan(AgentPose(0, 0, 0), centers, np.zeros(2), 1.0)
        assert out[0] == pytest.approx(1.0 - 0.3)

    def test_values_within_unit_interval_fuzz(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            pose = AgentPose(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
            n = rng.integers(1, 8)
            centers = rng.uniform(-2, 2, (n, 2))
            radii = rng.uniform(0, 0.4, n)
            out = lidar_scan(pose, centers, radii, rng.uniform(0.5, 6.0))
            assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_rotational_equivariance_one_bin(self):
        # rotating all objects about the agent by one bin width shifts every
        # lidar reading by one bin (bearings kept strictly inside buckets)
        rng = np.random.default_rng(2)
        pose = AgentPose(0.0, 0.0, 0.3)
        for _ in range(50):
            n = rng.integers(1, 6)
            # bearings strictly inside buckets relative to heading
            bins = rng.integers(0, 16, n)
            offsets = rng.uniform(-0.45, 0.45, n) * BIN_WIDTH
            angles = pose.heading + bins * BIN_WIDTH + offsets
            dists = rng.uniform(0.3, 0.9, n)
            centers = np.stack([np.cos(angles) * dists, np.sin(angles) * dists], axis=1)
            rot = BIN_WIDTH
            rot_mat = np.array([[math.cos(rot), -math.sin(rot)], [math.sin(rot), math.cos(rot)]])
            rotated = centers @ rot_mat.T
            base = lidar_scan(pose, centers, np.zeros(n), 1.0)
            moved = lidar_scan(pose, rotated, np.zeros(n), 1.0)
            npt.assert_allclose(moved, np.roll(base, 1), atol=1e-12)

    def test_rejects_nonpositive_range(self):
        with pytest.raises(ValueError):
            lidar_scan(AgentPose(0, 0, 0), np.zeros((1, 2)), np.zeros(1), 0.0)


class TestCompass:
    def test_origin_convention(self):
        npt.assert_allclose(compass_features(AgentPose(0, 0, 0)), [1, 0, 1, 0, 0])

    def test_offset_with_heading(self):
        # at (1, 0) facing north: origin bears pi/2 in the agent frame
        out = compass_features(AgentPose(1.0, 0.0, math.pi / 2))
        npt.assert_allclose(out, [0, 1, 0, 1, 0.5], atol=1e-12)

    def test_heading_pair_unit_norm_fuzz(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            pose = AgentPose(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
            c = compass_features(pose)
            assert math.hypot(c[0], c[1]) == pytest.approx(1.0)
            assert math.hypot(c[2], c[3]) == pytest.approx(1.0)
            assert 0.0 <= c[4] <= 1.0


class TestHazardIndicator:
    def test_inside(self):
        assert hazard_indicator(0.0, 0.15, np.array([[0.0, 0.0]]), np.array([0.2])) == 1

    def test_boundary_is_safe(self):
        assert hazard_indicator(0.2, 0.0, np.array([[0.0, 0.0]]), np.array([0.2])) == 0

    def test_no_hazards(self):
        assert hazard_indicator(0.0, 0.0, np.zeros((0, 2)), np.zeros(0)) == 0

    def test_matches_bruteforce_fuzz(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            n = rng.integers(0, 10)
            centers = rng.uniform(-2, 2, (n, 2))
            radii = rng.uniform(0.05, 0.5, n)
            x, y = rng.uniform(-2, 2, 2)
            brute = 0
            for (cx, cy), r in zip(centers, radii):
                if math.hypot(cx - x, cy - y) < r:
                    brute = 1
            assert hazard_indicator(x, y, centers, radii) == brute


class TestBoxPush:
    def test_no_overlap_unchanged(self):
        assert resolve_box_push((0, 0), (1.0, 0), 0.1, 0.2) == (1.0, 0.0)

    def test_tangency(self):
        nx, ny = resolve_box_push((0, 0), (0.15, 0.0), 0.1, 0.2)
        assert (nx, ny) == pytest.approx((0.3, 0.0))

    def test_coincident_uses_heading(self):
        nx, ny = resolve_box_push((0, 0), (0.0, 0.0), 0.1, 0.2, heading=0.0)
        assert (nx, ny) == pytest.approx((0.3, 0.0))

    def test_box_clamped(self):
        nx, ny = resolve_box_push((MAP_HALF_EXTENT - 0.05, 0), (MAP_HALF_EXTENT, 0), 0.1, 0.2)
        assert nx == MAP_HALF_EXTENT


class TestObservation:
    def test_empty_layout_only_compass(self):
        state = WorldState(empty_layout())
        obs = assemble_observation(state)
        assert obs.shape == (OBS_DIM,)
        npt.assert_array_equal(obs[:80], 0.0)
        npt.assert_allclose(obs[COMPASS], [1, 0, 1, 0, 0])

    def test_hazard_short_range_vs_goal_long_range(self):
        layout = empty_layout()
        layout.hazard_centers = np.array([[1.5, 0.0]])
        layout.hazard_radii = np.array([0.0])
        layout.goal_center = np.array([1.5, 0.0])
        state = WorldState(layout)
        obs = assemble_observation(state)
        npt.assert_array_equal(obs[HAZARD_LIDAR], 0.0)  # beyond the short range
        assert obs[GOAL_LIDAR][0] > 0.0  # still visible on the long range

    def test_matches_per_category_scans(self):
        # fused object-table pass agrees with the public lidar_scan oracle
        rng = np.random.default_rng(5)
        for _ in range(100):
            layout = empty_layout(AgentPose(*rng.uniform(-1.5, 1.5, 2), rng.uniform(-math.pi, math.pi)))
            n_h = rng.integers(0, 6)
            layout.hazard_centers = rng.uniform(-2, 2, (n_h, 2))
            layout.hazard_radii = np.full(n_h, world.HAZARD_RADIUS)
            if rng.random() < 0.8:
                layout.goal_center = rng.uniform(-2, 2, 2)
            if rng.random() < 0.8:
                layout.box_center = rng.uniform(-2, 2, 2)
            n_b = rng.integers(0, 5)
            layout.button_centers = rng.uniform(-2, 2, (n_b, 2))
            layout.button_radii = np.full(n_b, world.BUTTON_RADIUS)
            layout.correct_button = int(rng.integers(n_b)) if n_b else -1
            state = WorldState(layout)
            obs = assemble_observation(state)
            pose = state.agent
            npt.assert_array_equal(
                obs[HAZARD_LIDAR],
                lidar_scan(pose, layout.hazard_centers, layout.hazard_radii, HAZARD_RANGE),
            )
            goal = (
                np.zeros(16)
                if layout.goal_center is None
                else lidar_scan(pose, layout.goal_center.reshape(1, 2), np.array([layout.goal_radius]), ELEMENT_RANGE)
            )
            npt.assert_array_equal(obs[GOAL_LIDAR], goal)
            box = (
                np.zeros(16)
                if layout.box_center is None
                else lidar_scan(pose, layout.box_center.reshape(1, 2), np.array([layout.box_radius]), ELEMENT_RANGE)
            )
            npt.assert_array_equal(obs[BOX_LIDAR], box)
            npt.assert_array_equal(
                obs[BUTTONS_LIDAR],
                lidar_scan(pose, layout.button_centers, layout.button_radii, ELEMENT_RANGE),
            )
            correct = np.zeros(16)
            if n_b:
                correct = lidar_scan(
                    pose,
                    layout.button_centers[layout.correct_button].reshape(1, 2),
                    np.array([world.BUTTON_RADIUS]),
                    ELEMENT_RANGE,
                )
            npt.assert_array_equal(obs[CORRECT_BUTTON_LIDAR], correct)
            assert np.all(obs[:80] >= 0.0) and np.all(obs[:80] <= 1.0)

    def test_layout_mutations_update_table(self):
        layout = empty_layout()
        layout.goal_center = np.array([1.0, 0.0])
        layout.box_center = np.array([-1.0, 0.0])
        layout.button_centers = np.array([[0.5, 0.5], [-0.5, -0.5]])
        layout.button_radii = np.full(2, world.BUTTON_RADIUS)
        layout.correct_button = 0
        state = WorldState(layout)
        before = assemble_observation(state).copy()
        state.set_goal((0.0, 1.0))
        state.set_box(0.0, -1.0)
        state.set_correct_button(1)
        after = assemble_observation(state)
        assert not np.array_equal(before[GOAL_LIDAR], after[GOAL_LIDAR])
        assert not np.array_equal(before[BOX_LIDAR], after[BOX_LIDAR])
        assert not np.array_equal(before[CORRECT_BUTTON_LIDAR], after[CORRECT_BUTTON_LIDAR])
        npt.assert_array_equal(
            after[CORRECT_BUTTON_LIDAR],
            lidar_scan(state.agent, layout.button_centers[1].reshape(1, 2),
                       np.array([world.BUTTON_RADIUS]), ELEMENT_RANGE),
        )
