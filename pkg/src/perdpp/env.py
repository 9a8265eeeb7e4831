"""16x16 grid maze with 8-direction moves and the five-case reward."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from importlib import resources

import numpy as np

# index -> (dx, dy); y grows downward (row index), so N is dy = -1
ACTIONS = (
    ("E", 1, 0),
    ("W", -1, 0),
    ("N", 0, -1),
    ("S", 0, 1),
    ("NE", 1, -1),
    ("NW", -1, -1),
    ("SE", 1, 1),
    ("SW", -1, 1),
)
N_ACTIONS = len(ACTIONS)
MOVES = np.array([(dx, dy) for _, dx, dy in ACTIONS], dtype=int)
_MOVE_INDEX = {(dx, dy): i for i, (_, dx, dy) in enumerate(ACTIONS)}

REWARDS = {
    "collision": -500.0,
    "stationary": -200.0,
    "farther": -100.0,
    "closer": 100.0,
    "goal": 500.0,
}

# dx, dy are scaled by this for network inputs and kernel features
STATE_SCALE = 16.0
STATE_DIM = 2 + N_ACTIONS

SHIPPED_MAPS = ("map1-dense-random", "map2-sparse-random", "map3-funnel", "trivial-3x3")


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    obstacles: frozenset
    start: tuple
    goal: tuple
    name: str = ""

    def in_bounds(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def blocked(self, cell) -> bool:
        return not self.in_bounds(cell) or tuple(cell) in self.obstacles

    def to_text(self) -> str:
        rows = []
        for y in range(self.height):
            row = []
            for x in range(self.width):
                c = (x, y)
                row.append("S" if c == self.start else "G" if c == self.goal
                           else "#" if c in self.obstacles else ".")
            rows.append("".join(row))
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class EnvState:
    dx: int
    dy: int
    ob: tuple

    def encode(self) -> np.ndarray:
        out = np.empty(STATE_DIM)
        out[0] = self.dx / STATE_SCALE
        out[1] = self.dy / STATE_SCALE
        out[2:] = self.ob
        return out


@dataclass(frozen=True)
class StepOutcome:
    state: EnvState
    position: tuple
    reward: float
    terminal: bool
    event: str


def _reachable(width, height, obstacles, start):
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for dx, dy in MOVES:
            c = (x + dx, y + dy)
            if 0 <= c[0] < width and 0 <= c[1] < height and c not in obstacles and c not in seen:
                seen.add(c)
                queue.append(c)
    return seen


def load_map(text: str, name: str = "") -> GridMap:
    """Parse an ASCII map: '.' free, '#' obstacle, 'S' start, 'G' goal.

    Blank lines and lines starting with ';' are ignored.
    """
    rows = [ln.rstrip("\r") for ln in text.splitlines()]
    rows = [ln for ln in rows if ln.strip() and not ln.lstrip().startswith(";")]
    rows = [ln.strip() for ln in rows]
    if not rows:
        raise MapError("empty map")
    width = len(rows[0])
    obstacles, starts, goals = set(), [], []
    for y, row in enumerate(rows):
        if len(row) != width:
            raise MapError(f"ragged rows: row {y} has length {len(row)}, expected {width}")
        for x, ch in enumerate(row):
            if ch == "#":
                obstacles.add((x, y))
            elif ch == "S":
                starts.append((x, y))
            elif ch == "G":
                goals.append((x, y))
            elif ch != ".":
                raise MapError(f"unknown character {ch!r} at ({x}, {y})")
    if len(starts) != 1:
        raise MapError(f"expected exactly one start 'S', found {len(starts)}")
    if len(goals) != 1:
        raise MapError(f"expected exactly one goal 'G', found {len(goals)}")
    start, goal = starts[0], goals[0]
    if goal not in _reachable(width, len(rows), obstacles, start):
        raise MapError("goal unreachable")
    return GridMap(width, len(rows), frozenset(obstacles), start, goal, name)


def load_shipped_map(name: str) -> GridMap:
    if name not in SHIPPED_MAPS:
        raise MapError(f"unknown map {name!r}; shipped maps: {', '.join(SHIPPED_MAPS)}")
    text = resources.files("perdpp").joinpath("maps").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return load_map(text, name)


def read_map(path_or_name: str) -> GridMap:
    """Load a shipped map by name or a map file by path."""
    if path_or_name in SHIPPED_MAPS:
        return load_shipped_map(path_or_name)
    with open(path_or_name, encoding="utf-8") as fh:
        return load_map(fh.read(), str(path_or_name))


def random_map(seed: int, density: float, width: int = 16, height: int = 16,
               start=(0, 0), goal=(15, 15)) -> GridMap:
    """Uniformly random obstacles, redrawn until the goal is reachable."""
    rng = np.random.default_rng(seed)
    while True:
        mask = rng.random((height, width)) < density
        obstacles = {(x, y) for y in range(height) for x in range(width) if mask[y, x]}
        obstacles -= {start, goal}
        if goal in _reachable(width, height, obstacles, start):
            return GridMap(width, height, frozenset(obstacles), start, goal)


def observe(grid: GridMap, pos) -> EnvState:
    x, y = pos
    gx, gy = grid.goal
    ob = tuple(int(grid.blocked((x + dx, y + dy))) for dx, dy in MOVES)
    return EnvState(gx - x, gy - y, ob)


def reset(grid: GridMap) -> EnvState:
    return observe(grid, grid.start)


def _sqdist(a, b) -> int:
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2


def classify(grid: GridMap, pos, new_pos) -> str:
    if grid.blocked(new_pos):
        return "collision"
    if tuple(new_pos) == tuple(pos):
        return "stationary"
    if tuple(new_pos) == grid.goal:
        return "goal"
    # squared integer distances: exact comparison
    if _sqdist(new_pos, grid.goal) < _sqdist(pos, grid.goal):
        return "closer"
    return "farther"


def step(grid: GridMap, pos, action: int) -> StepOutcome:
    """Apply one move.  Collisions (walls included) end the episode in place."""
    if not (isinstance(action, (int, np.integer)) and 0 <= action < N_ACTIONS):
        raise ValueError(f"invalid action {action!r}; expected an integer in [0, {N_ACTIONS})")
    pos = tuple(pos)
    dx, dy = MOVES[action]
    target = (pos[0] + int(dx), pos[1] + int(dy))
    event = classify(grid, pos, target)
    new_pos = pos if event == "collision" else target
    terminal = event in ("collision", "goal")
    return StepOutcome(observe(grid, new_pos), new_pos, REWARDS[event], terminal, event)


class MazeEnv:
    """Stateful wrapper around :func:`step` for rollouts."""

    def __init__(self, grid: GridMap):
        self.grid = grid
        self.position = grid.start
        self.done = False

    def reset(self) -> EnvState:
        self.position = self.grid.start
        self.done = False
        return observe(self.grid, self.position)

    def step(self, action: int) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        out = step(self.grid, self.position, action)
        self.position = out.position
        self.done = out.terminal
        return out


def path_metrics(path) -> tuple[int, int]:
    """Return (number of moves, number of heading changes) for a cell path."""
    cells = [tuple(c) for c in path]
    dirs = []
    for a, b in zip(cells, cells[1:]):
        d = (b[0] - a[0], b[1] - a[1])
        if d not in _MOVE_INDEX:
            raise ValueError(f"cells {a} and {b} are not adjacent")
        dirs.append(d)
    turns = sum(1 for p, q in zip(dirs, dirs[1:]) if p != q)
    return len(dirs), turns
