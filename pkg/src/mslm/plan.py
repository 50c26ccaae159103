"""Occupancy-grid path planning, action emission, and spatial goal primitives.

Grid/heading conventions: heading 0 is north and 90 is east; north points
along decreasing row index (``-px``) and east along increasing column index
(``+py``).  A unit move at heading ``h`` displaces cell coordinates by
``(-cos h, sin h)``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .query import ObstacleGrid

SQRT2 = math.sqrt(2.0)

DEFAULT_OFFSET_M = 1.0
GOAL_SNAP_RADIUS_M = 1.0


@dataclass
class AgentState:
    position: tuple          # (px, py) cell
    heading: float = 0.0     # degrees, 0 = north, 90 = east

    def __post_init__(self):
        self.heading = normalize_heading(self.heading)


@dataclass(frozen=True)
class ActionSpec:
    forward_step: float  # meters
    turn_step: float     # degrees

    def __post_init__(self):
        if self.forward_step <= 0 or self.turn_step <= 0:
            raise ValueError("action steps must be positive")


# Published control profiles: fine-grained ground robot, coarse multimodal
# robot, and the legacy coarse profile.
VLMAPS_PROFILE = ActionSpec(forward_step=0.05, turn_step=1.0)
AVLMAPS_PROFILE = ActionSpec(forward_step=0.1, turn_step=5.0)
COARSE_PROFILE = ActionSpec(forward_step=0.25, turn_step=5.0)


def normalize_heading(h: float) -> float:
    """Wrap a heading to (-180, 180]."""
    h = math.fmod(h, 360.0)
    if h <= -180.0:
        h += 360.0
    elif h > 180.0:
        h -= 360.0
    return h


def heading_dir(h: float) -> np.ndarray:
    """Unit displacement in (px, py) cell coordinates for a heading."""
    rad = math.radians(h)
    return np.array([-math.cos(rad), math.sin(rad)])


def bearing(from_cell, to_cell) -> float:
    """Heading that points from one cell toward another."""
    dpx = to_cell[0] - from_cell[0]
    dpy = to_cell[1] - from_cell[1]
    return normalize_heading(math.degrees(math.atan2(dpy, -dpx)))


def _neighbors(cell, grid: np.ndarray):
    h, w = grid.shape
    px, py = cell
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            nx, ny = px + dx, py + dy
            if 0 <= nx < h and 0 <= ny < w and grid[nx, ny] == 0:
                yield (nx, ny), SQRT2 if dx and dy else 1.0


def _octile(a, b) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


def snap_to_free(grid: np.ndarray, cell, max_radius_cells: int):
    """Nearest free cell within a radius; ties break lexicographically."""
    if grid[cell[0], cell[1]] == 0:
        return cell
    best = None
    for dx in range(-max_radius_cells, max_radius_cells + 1):
        for dy in range(-max_radius_cells, max_radius_cells + 1):
            nx, ny = cell[0] + dx, cell[1] + dy
            if not (0 <= nx < grid.shape[0] and 0 <= ny < grid.shape[1]):
                continue
            if grid[nx, ny] != 0:
                continue
            d = math.hypot(dx, dy)
            if d <= max_radius_cells:
                key = (d, nx, ny)
                if best is None or key < best:
                    best = key
    return None if best is None else (best[1], best[2])


def plan_path(obstacles: ObstacleGrid, start, goal):
    """Cost-optimal 8-connected A* path, or None when unreachable.

    An occupied goal is snapped to the nearest free cell within 1 m.
    """
    grid = obstacles.values
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    if grid[start[0], start[1]] != 0:
        raise ValueError(f"start cell {start} is occupied")
    radius = max(1, int(round(GOAL_SNAP_RADIUS_M / obstacles.spec.scale)))
    goal = snap_to_free(grid, goal, radius)
    if goal is None:
        return None
    if start == goal:
        return [start]

    dist = {start: 0.0}
    parent = {}
    pq = [(_octile(start, goal), 0.0, start)]
    closed = set()
    while pq:
        _f, g, cell = heapq.heappop(pq)
        if cell in closed:
            continue
        if cell == goal:
            path = [cell]
            while cell in parent:
                cell = parent[cell]
                path.append(cell)
            return path[::-1]
        closed.add(cell)
        for nxt, cost in _neighbors(cell, grid):
            ng = g + cost
            if ng < dist.get(nxt, math.inf) - 1e-12:
                dist[nxt] = ng
                parent[nxt] = cell
                heapq.heappush(pq, (ng + _octile(nxt, goal), ng, nxt))
    return None


def path_cost(path) -> float:
    total = 0.0
    for a, b in zip(path, path[1:]):
        total += SQRT2 if a[0] != b[0] and a[1] != b[1] else 1.0
    return total


def path_to_actions(path, state: AgentState, spec: ActionSpec, scale: float,
                    target_heading: float = None) -> list:
    """Discretize a cell path into turn-left/turn-right/forward/stop actions.

    The agent state is updated in place to the simulated end pose.  Waypoints
    are resampled at roughly one forward step so heading quantization error
    stays local.
    """
    if not path:
        raise ValueError("path must be nonempty")
    actions = []
    pos = np.array(path[0], dtype=np.float64)
    heading = state.heading
    step_cells = spec.forward_step / scale
    stride = max(1, int(round(step_cells)))
    waypoints = list(path[1::stride])
    if not waypoints or tuple(waypoints[-1]) != tuple(path[-1]):
        waypoints.append(path[-1])

    def turn_to(target: float):
        nonlocal heading
        delta = normalize_heading(target - heading)
        k = int(round(delta / spec.turn_step))
        name = "turn_right" if k > 0 else "turn_left"
        actions.extend([name] * abs(k))
        heading = normalize_heading(heading + k * spec.turn_step)

    for wp in waypoints:
        delta = np.asarray(wp, dtype=np.float64) - pos
        dist_cells = float(np.linalg.norm(delta))
        if dist_cells < step_cells / 2.0:
            continue
        turn_to(math.degrees(math.atan2(delta[1], -delta[0])))
        n = int(round(dist_cells / step_cells))
        actions.extend(["forward"] * n)
        pos = pos + n * step_cells * heading_dir(heading)
    if target_heading is not None:
        turn_to(target_heading)
    actions.append("stop")
    state.position = (pos[0], pos[1])
    state.heading = heading
    return actions


@dataclass
class ResolvedGoal:
    """Outcome of a navigation primitive: where to go and/or where to face."""

    goal: tuple = None            # (px, py) cell, possibly fractional
    heading: float = None         # absolute degrees
    found: bool = True


def object_instances(mask2d: np.ndarray):
    """Connected components (8-connectivity) of a top-down object mask.

    Returns a list of (centroid (px, py), cell array) sorted by centroid.
    """
    labeled, n = ndimage.label(mask2d, structure=np.ones((3, 3), dtype=int))
    out = []
    for i in range(1, n + 1):
        cells = np.argwhere(labeled == i)
        out.append((tuple(cells.mean(axis=0)), cells))
    out.sort(key=lambda it: it[0])
    return out


def nearest_front_instance(instances, state: AgentState):
    """Instance whose centroid is closest within +-90 degrees of heading.

    Falls back to the closest instance overall so primitives stay total.
    """
    def dist(c):
        return math.hypot(c[0] - state.position[0], c[1] - state.position[1])

    front = []
    for centroid, cells in instances:
        rel = abs(normalize_heading(bearing(state.position, centroid)
                                    - state.heading))
        if rel <= 90.0:
            front.append((centroid, cells))
    pool = front if front else instances
    return min(pool, key=lambda it: (dist(it[0]), it[0]))


_CARDINAL_DIRS = {
    "north": np.array([-1.0, 0.0]),
    "south": np.array([1.0, 0.0]),
    "east": np.array([0.0, 1.0]),
    "west": np.array([0.0, -1.0]),
}


def spatial_offset(object_cells: np.ndarray, relation: str, state: AgentState,
                   scale: float, offset_m: float = DEFAULT_OFFSET_M) -> tuple:
    """Goal cell at a scripted offset from an object-cell centroid.

    left/right are computed in the agent's approach frame; cardinal relations
    live in the world frame.
    """
    centroid = np.asarray(object_cells, dtype=np.float64).reshape(-1, 2).mean(axis=0)
    offset_cells = offset_m / scale
    if relation in _CARDINAL_DIRS:
        goal = centroid + offset_cells * _CARDINAL_DIRS[relation]
    elif relation in ("left", "right"):
        approach = bearing(state.position, centroid)
        side = approach - 90.0 if relation == "left" else approach + 90.0
        goal = centroid + offset_cells * heading_dir(normalize_heading(side))
    else:
        raise ValueError(f"unknown spatial relation {relation!r}")
    return (goal[0], goal[1])


class PrimitiveResolver:
    """Maps named navigation primitives to goal cells / headings.

    ``locate`` is a callable returning the top-down mask for an object name
    (or None when the name cannot be resolved).
    """

    def __init__(self, locate, scale: float, offset_m: float = DEFAULT_OFFSET_M):
        self.locate = locate
        self.scale = scale
        self.offset_m = offset_m

    def _instances(self, name):
        mask = self.locate(name)
        if mask is None or not mask.any():
            return None
        return object_instances(mask)

    def centroid(self, name):
        inst = self._instances(name)
        if inst is None:
            return None
        all_cells = np.concatenate([cells for _c, cells in inst])
        c = all_cells.mean(axis=0)
        return (c[0], c[1])

    def resolve(self, name: str, args, state: AgentState) -> ResolvedGoal:
        if name == "move_to":
            return ResolvedGoal(goal=(float(args[0][0]), float(args[0][1])))
        if name == "move_forward":
            goal = np.asarray(state.position, dtype=np.float64) \
                + float(args[0]) / self.scale * heading_dir(state.heading)
            return ResolvedGoal(goal=(goal[0], goal[1]))
        if name == "turn":
            return ResolvedGoal(heading=normalize_heading(
                state.heading + float(args[0])))
        if name == "turn_absolute":
            return ResolvedGoal(heading=normalize_heading(float(args[0])))
        if name == "move_in_between":
            a = self.centroid(args[0])
            b = self.centroid(args[1])
            if a is None or b is None:
                return ResolvedGoal(found=False)
            return ResolvedGoal(goal=((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0))

        if name in ("move_to_object", "move_to_left", "move_to_right",
                    "face", "with_pos_on_left", "with_pos_on_right",
                    "with_object_on_left", "with_object_on_right",
                    "move_north", "move_south", "move_east", "move_west",
                    "get_pos"):
            inst = self._instances(args[0])
            if inst is None:
                return ResolvedGoal(found=False)
            centroid, cells = nearest_front_instance(inst, state)
            if name in ("move_to_object", "get_pos"):
                return ResolvedGoal(goal=centroid)
            if name in ("move_to_left", "move_to_right"):
                rel = "left" if name.endswith("left") else "right"
                return ResolvedGoal(goal=spatial_offset(
                    cells, rel, state, self.scale, self.offset_m))
            if name.startswith("move_"):
                rel = name.split("_", 1)[1]
                return ResolvedGoal(goal=spatial_offset(
                    cells, rel, state, self.scale, self.offset_m))
            b = bearing(state.position, centroid)
            if name == "face":
                return ResolvedGoal(heading=b)
            if name.endswith("on_left"):
                return ResolvedGoal(heading=normalize_heading(b + 90.0))
            return ResolvedGoal(heading=normalize_heading(b - 90.0))
        raise ValueError(f"unknown primitive {name!r}")


def write_action_trace(actions, path):
    """One action per line, for replay."""
    with open(path, "w") as f:
        for a in actions:
            f.write(a + "\n")
