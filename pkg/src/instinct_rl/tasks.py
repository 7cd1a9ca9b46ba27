"""Task definitions on top of the world: layouts, rewards, events.

Three tasks share one observation layout so policies and instincts transfer
between them:

* goal    -- reach a cylinder that respawns on contact; hazards sit on a
             static 5x5 grid with the central cell removed (24 total).
* buttons -- press the correct one of 4 random buttons among 8 random
             hazards; a press promotes a different button to "correct".
* push    -- shove a box into the goal cylinder; 20 hazards form a 5x4
             grid on the left half, box and goal live on the right, and the
             agent starts left of the grid.

Episodes run a fixed horizon and never terminate early; success events
respawn their targets instead.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import world
from .errors import ConfigurationError, LayoutError
from .world import (
    AGENT_RADIUS,
    BOX_RADIUS,
    BUTTON_RADIUS,
    GOAL_RADIUS,
    HAZARD_RADIUS,
    MAP_HALF_EXTENT,
    AgentPose,
    WorldLayout,
    WorldState,
)

EPISODE_HORIZON = 1000

N_BUTTONS = 4
N_BUTTONS_TASK_HAZARDS = 8
MIN_SEPARATION = 0.45
MAX_PLACEMENT_ATTEMPTS = 10_000
BUTTON_PRESS_RADIUS = BUTTON_RADIUS + AGENT_RADIUS  # contact-based press

# Goal task: 5x5 hazard grid over [-1.6, 1.6]^2 minus the central cell.
GOAL_GRID_COORDS = (-1.6, -0.8, 0.0, 0.8, 1.6)
# Push task: 4 columns x 5 rows on the left half of the map.
PUSH_GRID_X = (-1.8, -1.8 + 1.6 / 3, -1.8 + 3.2 / 3, -0.2)
PUSH_GRID_Y = (-1.6, -0.8, 0.0, 0.8, 1.6)
PUSH_ZONE_X_MIN = 0.2  # box/goal spawn zone: right-hand side
PUSH_SPAWN_X = -1.9  # agent starts strictly left of the grid

# Default per-task hazard punishment H_t for the shaped transfer reward.
DEFAULT_TRANSFER_PUNISHMENT = {"goal": 1.0, "buttons": 1.0, "push": 10.0}


class TaskKind(str, enum.Enum):
    GOAL = "goal"
    BUTTONS = "buttons"
    PUSH = "push"


class Event(str, enum.Enum):
    GOAL_REACHED = "goal_reached"
    BUTTON_PRESSED = "button_pressed"
    BOX_IN_GOAL = "box_in_goal"


@dataclass
class TaskConfig:
    """Everything needed to instantiate episodes of one task."""

    kind: TaskKind
    hazard_punishment: float | None = None  # H_t; None -> per-task default
    hazards_enabled: bool = True
    horizon: int = EPISODE_HORIZON
    seed: int = 0
    fixed_layout: WorldLayout | None = None  # test override, skips generation
    buttons_hazard_count: int = N_BUTTONS_TASK_HAZARDS

    def __post_init__(self):
        self.kind = TaskKind(self.kind)
        if self.hazard_punishment is None:
            self.hazard_punishment = DEFAULT_TRANSFER_PUNISHMENT[self.kind.value]
        if self.hazard_punishment < 0:
            raise ConfigurationError("hazard punishment must be >= 0")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")


@dataclass
class StepOutcome:
    reward: float  # raw task reward r_t for this step
    hazard: int  # 1 iff the agent ended the step inside a hazard
    event: Event | None
    observation: np.ndarray


def shaped_transfer_reward(task_reward: float, hazard: int, punishment: float) -> float:
    """Task reward minus the per-step hazard punishment: r_t - h * H_t."""
    return task_reward - hazard * punishment


def _place_point(rng, margin, half, min_sep, placed, attempts=MAX_PLACEMENT_ATTEMPTS,
                 x_min=None):
    lo_x = -half + margin if x_min is None else x_min
    for _ in range(attempts):
        x = rng.uniform(lo_x, half - margin)
        y = rng.uniform(-half + margin, half - margin)
        ok = True
        for px, py in placed:
            if math.hypot(x - px, y - py) < min_sep:
                ok = False
                break
        if ok:
            return x, y
    raise LayoutError("placement rejection sampling exceeded attempt budget")


def _grid_hazards(xs, ys, skip_center: bool = False) -> np.ndarray:
    pts = [
        (x, y)
        for x in xs
        for y in ys
        if not (skip_center and x == 0.0 and y == 0.0)
    ]
    return np.array(pts, dtype=float)


def make_layout(
    kind: TaskKind,
    rng: np.random.Generator,
    hazards_enabled: bool = True,
    buttons_hazard_count: int = N_BUTTONS_TASK_HAZARDS,
) -> WorldLayout:
    """Generate one episode layout for the given task.

    All randomly placed objects (and the agent spawn) keep a minimum pairwise
    separation; hazard grids are static. Over-constrained placement raises
    LayoutError after 10^4 rejection attempts.
    """
    kind = TaskKind(kind)
    half = MAP_HALF_EXTENT
    heading = float(rng.uniform(-math.pi, math.pi))

    if kind is TaskKind.GOAL:
        hazards = (
            _grid_hazards(GOAL_GRID_COORDS, GOAL_GRID_COORDS, skip_center=True)
            if hazards_enabled
            else np.zeros((0, 2))
        )
        start = AgentPose(0.0, 0.0, heading)
        placed = [(0.0, 0.0)]
        goal = _place_point(rng, GOAL_RADIUS, half, MIN_SEPARATION, placed)
        placed.append(goal)
        box = _place_point(rng, BOX_RADIUS, half, MIN_SEPARATION, placed)
        placed.append(box)
        buttons = []
        for _ in range(N_BUTTONS):
            b = _place_point(rng, BUTTON_RADIUS, half, MIN_SEPARATION, placed)
            placed.append(b)
            buttons.append(b)
        return WorldLayout(
            hazard_centers=hazards,
            hazard_radii=np.full(len(hazards), HAZARD_RADIUS),
            button_centers=np.array(buttons),
            button_radii=np.full(N_BUTTONS, BUTTON_RADIUS),
            correct_button=int(rng.integers(N_BUTTONS)),
            goal_center=np.array(goal),
            goal_radius=GOAL_RADIUS,
            box_center=np.array(box),
            box_radius=BOX_RADIUS,
            agent_start=start,
        )

    if kind is TaskKind.BUTTONS:
        start = AgentPose(0.0, 0.0, heading)
        placed = [(0.0, 0.0)]
        buttons = []
        for _ in range(N_BUTTONS):
            b = _place_point(rng, BUTTON_RADIUS, half, MIN_SEPARATION, placed)
            placed.append(b)
            buttons.append(b)
        n_hazards = buttons_hazard_count if hazards_enabled else 0
        hazards = []
        for _ in range(n_hazards):
            pt = _place_point(rng, HAZARD_RADIUS, half, MIN_SEPARATION, placed)
            placed.append(pt)
            hazards.append(pt)
        return WorldLayout(
            hazard_centers=np.array(hazards, dtype=float).reshape(-1, 2),
            hazard_radii=np.full(len(hazards), HAZARD_RADIUS),
            button_centers=np.array(buttons),
            button_radii=np.full(N_BUTTONS, BUTTON_RADIUS),
            correct_button=int(rng.integers(N_BUTTONS)),
            goal_center=None,
            goal_radius=GOAL_RADIUS,
            box_center=None,
            box_radius=BOX_RADIUS,
            agent_start=start,
        )

    # push
    hazards = _grid_hazards(PUSH_GRID_X, PUSH_GRID_Y) if hazards_enabled else np.zeros((0, 2))
    start = _push_spawn(rng, hazards, heading)
    goal, box = _push_targets(rng)
    return WorldLayout(
        hazard_centers=hazards,
        hazard_radii=np.full(len(hazards), HAZARD_RADIUS),
        button_centers=np.zeros((0, 2)),
        button_radii=np.zeros(0),
        correct_button=-1,
        goal_center=np.array(goal),
        goal_radius=GOAL_RADIUS,
        box_center=np.array(box),
        box_radius=BOX_RADIUS,
        agent_start=start,
    )


def _push_spawn(rng, hazards: np.ndarray, heading: float) -> AgentPose:
    clearance = HAZARD_RADIUS + AGENT_RADIUS
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        y = float(rng.uniform(-1.6, 1.6))
        if len(hazards) == 0:
            return AgentPose(PUSH_SPAWN_X, y, heading)
        d = np.hypot(hazards[:, 0] - PUSH_SPAWN_X, hazards[:, 1] - y)
        if np.min(d) >= clearance:
            return AgentPose(PUSH_SPAWN_X, y, heading)
    raise LayoutError("could not find a clear push-task spawn")


def _push_targets(rng):
    """Goal and box positions in the right-hand zone, mutually separated."""
    half = MAP_HALF_EXTENT
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        gx = rng.uniform(PUSH_ZONE_X_MIN + GOAL_RADIUS, half - GOAL_RADIUS)
        gy = rng.uniform(-half + GOAL_RADIUS, half - GOAL_RADIUS)
        bx = rng.uniform(PUSH_ZONE_X_MIN + BOX_RADIUS, half - BOX_RADIUS)
        by = rng.uniform(-half + BOX_RADIUS, half - BOX_RADIUS)
        if math.hypot(gx - bx, gy - by) >= MIN_SEPARATION:
            return (gx, gy), (bx, by)
    raise LayoutError("could not separate push-task box and goal")


def _dist(ax, ay, b) -> float:
    return math.hypot(float(b[0]) - ax, float(b[1]) - ay)


def _current_dists(kind: TaskKind, state: WorldState) -> dict[str, float]:
    ax, ay = state.agent.x, state.agent.y
    lay = state.layout
    if kind is TaskKind.GOAL:
        return {"agent_goal": _dist(ax, ay, lay.goal_center)}
    if kind is TaskKind.BUTTONS:
        return {"agent_correct": _dist(ax, ay, lay.button_centers[lay.correct_button])}
    return {
        "agent_box": _dist(ax, ay, state.box_xy),
        "box_goal": _dist(float(state.box_xy[0]), float(state.box_xy[1]), lay.goal_center),
    }


def task_reward(kind: TaskKind, prev_state: WorldState, new_state: WorldState) -> float:
    """Shaped step reward: how much the relevant distances shrank this step.

    goal/buttons: previous minus current agent-target distance. push: the
    agent-box and box-goal improvements summed. Distances are measured
    against the previous state's layout so target respawns don't leak in.
    """
    kind = TaskKind(kind)
    prev = _current_dists(kind, prev_state)
    lay = prev_state.layout
    ax, ay = new_state.agent.x, new_state.agent.y
    if kind is TaskKind.GOAL:
        return prev["agent_goal"] - _dist(ax, ay, lay.goal_center)
    if kind is TaskKind.BUTTONS:
        return prev["agent_correct"] - _dist(ax, ay, lay.button_centers[lay.correct_button])
    new_ab = _dist(ax, ay, new_state.box_xy)
    new_bg = _dist(float(new_state.box_xy[0]), float(new_state.box_xy[1]), lay.goal_center)
    return (prev["agent_box"] - new_ab) + (prev["box_goal"] - new_bg)


def check_events(kind: TaskKind, state: WorldState, rng: np.random.Generator) -> Event | None:
    """Detect success events and mutate the layout accordingly.

    goal: reaching the goal respawns it elsewhere (clear of the agent);
    buttons: pressing the correct button promotes a different one;
    push: box inside the goal respawns both box and goal on the right side.
    """
    kind = TaskKind(kind)
    lay = state.layout
    ax, ay = state.agent.x, state.agent.y
    if kind is TaskKind.GOAL:
        if _dist(ax, ay, lay.goal_center) < lay.goal_radius:
            placed = [(ax, ay), tuple(state.box_xy)] + [tuple(b) for b in lay.button_centers]
            state.set_goal(_place_point(rng, GOAL_RADIUS, lay.half_extent, MIN_SEPARATION, placed))
            return Event.GOAL_REACHED
        return None
    if kind is TaskKind.BUTTONS:
        if _dist(ax, ay, lay.button_centers[lay.correct_button]) < BUTTON_PRESS_RADIUS:
            others = [i for i in range(len(lay.button_centers)) if i != lay.correct_button]
            state.set_correct_button(others[int(rng.integers(len(others)))])
            return Event.BUTTON_PRESSED
        return None
    if _dist(float(state.box_xy[0]), float(state.box_xy[1]), lay.goal_center) < lay.goal_radius:
        goal, box = _push_targets(rng)
        state.set_goal(goal)
        state.set_box(*box)
        return Event.BOX_IN_GOAL
    return None


class TaskEnv:
    """One episode of one task; owns the world state and its rng.

    The rng drives layout generation, event respawns, and nothing else, so
    a deterministic agent replays identically for a given seed.
    """

    def __init__(self, cfg: TaskConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.kind = cfg.kind
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.state: WorldState | None = None
        self.reset()

    def reset(self) -> np.ndarray:
        if self.cfg.fixed_layout is not None:
            layout = self.cfg.fixed_layout
        else:
            layout = make_layout(
                self.kind,
                self.rng,
                hazards_enabled=self.cfg.hazards_enabled,
                buttons_hazard_count=self.cfg.buttons_hazard_count,
            )
        validate_layout_for_task(self.kind, layout)
        self.state = WorldState(layout)
        self.state.prev_dists = _current_dists(self.kind, self.state)
        return world.assemble_observation(self.state)

    @property
    def done(self) -> bool:
        return self.state.step_index >= self.cfg.horizon

    def step(self, action) -> StepOutcome:
        state = self.state
        lay = state.layout
        state.agent = world.step_kinematics(state.agent, action, lay.half_extent)
        ax, ay = state.agent.x, state.agent.y
        if self.kind is TaskKind.PUSH:
            bx, by = world.resolve_box_push(
                (ax, ay), state.box_xy, AGENT_RADIUS, lay.box_radius,
                heading=state.agent.heading, half_extent=lay.half_extent,
            )
            state.set_box(bx, by)
        new_dists = _current_dists(self.kind, state)
        reward = sum(state.prev_dists[k] - new_dists[k] for k in new_dists)
        hazard = world.hazard_indicator(ax, ay, lay.hazard_centers, lay.hazard_radii)
        event = check_events(self.kind, state, self.rng)
        state.prev_dists = _current_dists(self.kind, state) if event else new_dists
        state.step_index += 1
        return StepOutcome(reward, hazard, event, world.assemble_observation(state))


def validate_layout_for_task(kind: TaskKind, layout: WorldLayout) -> None:
    world.validate_layout(layout)
    if kind is TaskKind.PUSH and len(layout.hazard_centers):
        if layout.agent_start.x >= float(np.min(layout.hazard_centers[:, 0])):
            raise LayoutError("push agent must spawn strictly left of the hazard grid")
