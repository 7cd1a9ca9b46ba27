"""Deterministic 2D point-agent world: kinematics, collisions, pseudo-lidar.

The agent is a dot with a heading on a bounded square map. Per step it may
turn up to 0.1 rad and move up to 0.1 map units along its (new) heading.
It senses the world through five 16-bin lidar crowns (hazards, goal, box,
all buttons, the correct button) plus five compass features, giving a fixed
85-entry observation regardless of which objects a task actually uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAP_HALF_EXTENT = 2.0
AGENT_RADIUS = 0.1
HAZARD_RADIUS = 0.2
GOAL_RADIUS = 0.3
BUTTON_RADIUS = 0.1
BOX_RADIUS = 0.2

ACTION_LIMIT = 0.1
SPEED_GAIN = 1.0
TURN_GAIN = 1.0

N_LIDAR_BINS = 16
BIN_WIDTH = 2.0 * math.pi / N_LIDAR_BINS
HAZARD_RANGE = 1.0
ELEMENT_RANGE = 6.0  # exceeds the map diagonal: task elements never vanish

# Fixed observation layout: five lidar crowns then the compass block.
HAZARD_LIDAR = slice(0, 16)
GOAL_LIDAR = slice(16, 32)
BOX_LIDAR = slice(32, 48)
BUTTONS_LIDAR = slice(48, 64)
CORRECT_BUTTON_LIDAR = slice(64, 80)
COMPASS = slice(80, 85)
OBS_DIM = 85

CAT_HAZARD, CAT_GOAL, CAT_BOX, CAT_BUTTONS, CAT_CORRECT = range(5)
CAT_RANGES = (HAZARD_RANGE, ELEMENT_RANGE, ELEMENT_RANGE, ELEMENT_RANGE, ELEMENT_RANGE)


def wrap_angle(angle: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def clamp(value: float, low: float, high: float) -> float:
    return low if value < low else high if value > high else value


@dataclass
class AgentPose:
    x: float
    y: float
    heading: float  # radians, wrapped to [-pi, pi)


@dataclass
class WorldLayout:
    """Static scene description; positions in map units, centers in bounds."""

    hazard_centers: np.ndarray  # (H, 2)
    hazard_radii: np.ndarray  # (H,)
    button_centers: np.ndarray  # (B, 2)
    button_radii: np.ndarray  # (B,)
    correct_button: int  # index into buttons, -1 when there are none
    goal_center: np.ndarray | None  # (2,)
    goal_radius: float
    box_center: np.ndarray | None  # (2,)
    box_radius: float
    agent_start: AgentPose
    half_extent: float = MAP_HALF_EXTENT


def validate_layout(layout: WorldLayout) -> None:
    """Assert structural invariants; used by tests and layout generation."""
    h = layout.half_extent
    for centers in (layout.hazard_centers, layout.button_centers):
        if centers.size and np.max(np.abs(centers)) > h:
            raise ValueError("object center outside map bounds")
    for c in (layout.goal_center, layout.box_center):
        if c is not None and np.max(np.abs(c)) > h:
            raise ValueError("object center outside map bounds")
    n_buttons = len(layout.button_centers)
    if n_buttons > 0 and not (0 <= layout.correct_button < n_buttons):
        raise ValueError("buttons present but no valid correct index")
    if n_buttons == 0 and layout.correct_button != -1:
        raise ValueError("correct_button set without buttons")


def step_kinematics(pose: AgentPose, action, half_extent: float = MAP_HALF_EXTENT) -> AgentPose:
    """Turn then move: heading updates first, motion follows the new heading.

    Both action components are clamped to [-ACTION_LIMIT, ACTION_LIMIT]; the
    position is clamped to the map square.
    """
    forward = clamp(float(action[0]), -ACTION_LIMIT, ACTION_LIMIT)
    turn = clamp(float(action[1]), -ACTION_LIMIT, ACTION_LIMIT)
    heading = wrap_angle(pose.heading + turn * TURN_GAIN)
    step = forward * SPEED_GAIN
    x = clamp(pose.x + step * math.cos(heading), -half_extent, half_extent)
    y = clamp(pose.y + step * math.sin(heading), -half_extent, half_extent)
    return AgentPose(x, y, heading)


def lidar_scan(
    pose: AgentPose,
    centers: np.ndarray,
    radii: np.ndarray,
    scan_range: float,
) -> np.ndarray:
    """One 16-bin proximity crown for a single object category.

    Each object falls into the nearest bin by bearing in the agent frame
    (bin 0 dead ahead, increasing counterclockwise) and contributes
    ``max(0, 1 - gap / scan_range)`` where gap is the surface-to-surface
    distance; bins keep the maximum over their objects.
    """
    if scan_range <= 0.0:
        raise ValueError("scan_range must be positive")
    out = np.zeros(N_LIDAR_BINS)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if centers.shape[0] == 0:
        return out
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (centers.shape[0],))
    dx = centers[:, 0] - pose.x
    dy = centers[:, 1] - pose.y
    dist = np.hypot(dx, dy)
    gap = np.maximum(dist - AGENT_RADIUS - radii, 0.0)
    value = 1.0 - gap / scan_range
    hot = value > 0.0
    if not np.any(hot):
        return out
    bearing = np.arctan2(dy[hot], dx[hot]) - pose.heading
    bins = np.rint(bearing / BIN_WIDTH).astype(np.int64) % N_LIDAR_BINS
    np.maximum.at(out, bins, value[hot])
    return out


def compass_features(pose: AgentPose, half_extent: float = MAP_HALF_EXTENT) -> np.ndarray:
    """(cos h, sin h, cos b, sin b, normalized center distance).

    b is the bearing of the map origin in the agent frame; an agent exactly
    at the origin reports (1, 0) for that pair by convention.
    """
    r = math.hypot(pose.x, pose.y)
    if r == 0.0:
        cb, sb = 1.0, 0.0
    else:
        bearing = wrap_angle(math.atan2(-pose.y, -pose.x) - pose.heading)
        cb, sb = math.cos(bearing), math.sin(bearing)
    return np.array(
        [
            math.cos(pose.heading),
            math.sin(pose.heading),
            cb,
            sb,
            min(1.0, r / half_extent),
        ]
    )


def hazard_indicator(x: float, y: float, centers: np.ndarray, radii: np.ndarray) -> int:
    """1 iff the agent center lies strictly inside any hazard circle."""
    if len(centers) == 0:
        return 0
    dx = centers[:, 0] - x
    dy = centers[:, 1] - y
    return int(np.any(dx * dx + dy * dy < radii * radii))


def resolve_box_push(
    agent_xy,
    box_xy,
    agent_radius: float = AGENT_RADIUS,
    box_radius: float = BOX_RADIUS,
    heading: float = 0.0,
    half_extent: float = MAP_HALF_EXTENT,
):
    """Separate overlapping agent/box circles by sliding the box to tangency.

    The box moves along the agent-to-box direction (the agent's heading when
    the centers coincide) and is clamped to the map. Returns (x, y).
    """
    ax, ay = float(agent_xy[0]), float(agent_xy[1])
    bx, by = float(box_xy[0]), float(box_xy[1])
    dx = bx - ax
    dy = by - ay
    dist = math.hypot(dx, dy)
    contact = agent_radius + box_radius
    if dist >= contact:
        return bx, by
    if dist == 0.0:
        ux, uy = math.cos(heading), math.sin(heading)
    else:
        ux, uy = dx / dist, dy / dist
    nx = clamp(ax + ux * contact, -half_extent, half_extent)
    ny = clamp(ay + uy * contact, -half_extent, half_extent)
    return nx, ny


class WorldState:
    """Mutable per-episode state: layout, pose, box copy, step counter.

    Keeps a flat object table (position / radius / range / lidar category)
    so the whole observation is assembled in one vectorized pass; layout
    mutations (goal respawn, box motion, correct-button change) update the
    affected rows in place.
    """

    __slots__ = (
        "layout",
        "agent",
        "box_xy",
        "step_index",
        "prev_dists",
        "_obj_xy",
        "_obj_radius",
        "_obj_range",
        "_obj_cat16",
        "_goal_row",
        "_box_row",
        "_correct_row",
    )

    def __init__(self, layout: WorldLayout):
        self.layout = layout
        self.agent = AgentPose(layout.agent_start.x, layout.agent_start.y, layout.agent_start.heading)
        self.box_xy = None if layout.box_center is None else np.array(layout.box_center, dtype=float)
        self.step_index = 0
        self.prev_dists: dict[str, float] = {}
        self._build_object_table()

    def _build_object_table(self) -> None:
        lay = self.layout
        xy: list[np.ndarray] = []
        radius: list[np.ndarray] = []
        cat: list[np.ndarray] = []
        n_h = len(lay.hazard_centers)
        if n_h:
            xy.append(np.asarray(lay.hazard_centers, dtype=float))
            radius.append(np.asarray(lay.hazard_radii, dtype=float))
            cat.append(np.full(n_h, CAT_HAZARD))
        self._goal_row = -1
        if lay.goal_center is not None:
            self._goal_row = sum(len(a) for a in xy)
            xy.append(np.asarray(lay.goal_center, dtype=float).reshape(1, 2))
            radius.append(np.array([lay.goal_radius]))
            cat.append(np.array([CAT_GOAL]))
        self._box_row = -1
        if self.box_xy is not None:
            self._box_row = sum(len(a) for a in xy)
            xy.append(self.box_xy.reshape(1, 2).copy())
            radius.append(np.array([lay.box_radius]))
            cat.append(np.array([CAT_BOX]))
        self._correct_row = -1
        n_b = len(lay.button_centers)
        if n_b:
            start = sum(len(a) for a in xy)
            xy.append(np.asarray(lay.button_centers, dtype=float))
            radius.append(np.asarray(lay.button_radii, dtype=float))
            cat.append(np.full(n_b, CAT_BUTTONS))
            self._correct_row = start + n_b
            xy.append(np.asarray(lay.button_centers[lay.correct_button], dtype=float).reshape(1, 2))
            radius.append(np.array([lay.button_radii[lay.correct_button]]))
            cat.append(np.array([CAT_CORRECT]))
        if xy:
            self._obj_xy = np.concatenate(xy, axis=0)
            self._obj_radius = np.concatenate(radius)
            cats = np.concatenate(cat)
        else:
            self._obj_xy = np.zeros((0, 2))
            self._obj_radius = np.zeros(0)
            cats = np.zeros(0, dtype=np.int64)
        self._obj_range = np.where(cats == CAT_HAZARD, HAZARD_RANGE, ELEMENT_RANGE)
        self._obj_cat16 = cats.astype(np.int64) * N_LIDAR_BINS

    def set_goal(self, center) -> None:
        self.layout.goal_center = np.asarray(center, dtype=float)
        self._obj_xy[self._goal_row] = self.layout.goal_center

    def set_box(self, x: float, y: float) -> None:
        self.box_xy[0] = x
        self.box_xy[1] = y
        self._obj_xy[self._box_row] = self.box_xy

    def set_correct_button(self, index: int) -> None:
        self.layout.correct_button = int(index)
        self._obj_xy[self._correct_row] = self.layout.button_centers[index]


def assemble_observation(state: WorldState) -> np.ndarray:
    """Fixed 85-entry observation for the current state.

    Hazards are scanned with the short range, every task element with the
    long range; categories absent from the layout stay all-zero.
    """
    obs = np.zeros(OBS_DIM)
    pose = state.agent
    xy = state._obj_xy
    if xy.shape[0]:
        dx = xy[:, 0] - pose.x
        dy = xy[:, 1] - pose.y
        dist = np.hypot(dx, dy)
        gap = dist - AGENT_RADIUS - state._obj_radius
        np.maximum(gap, 0.0, out=gap)
        value = 1.0 - gap / state._obj_range
        hot = value > 0.0
        if np.any(hot):
            bearing = np.arctan2(dy[hot], dx[hot]) - pose.heading
            bins = np.rint(bearing / BIN_WIDTH).astype(np.int64) % N_LIDAR_BINS
            np.maximum.at(obs, state._obj_cat16[hot] + bins, value[hot])
    obs[COMPASS] = compass_features(pose, state.layout.half_extent)
    return obs
