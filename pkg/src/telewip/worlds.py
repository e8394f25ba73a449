"""Experiment maps: procedural generation, obstacle kinematics, sensing
geometry, and collision detection.

All five maps are corridors traversed in +x. Obstacles are discs sized like
a standing person (radius 0.2007 m, nominal height 1.70 m); the robot is a
disc of radius 0.25 m. Dynamic obstacles translate at constant velocity and
bounce specularly off the corridor bounds. Every generated map is a pure
function of (name, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .dynamics import WipState, wrap_angle
from .forcefield import ObstacleObservation

OBSTACLE_RADIUS = 0.2007   # disc stand-in for a 1.70 m tall person
OBSTACLE_HEIGHT = 1.70     # metadata only; physics is planar
ROBOT_RADIUS = 0.25
MIDPOINT_RADIUS = 0.5      # pass within this of each midpoint, in order

MAP_SCHEMA_VERSION = 1


class MapGenerationError(RuntimeError):
    """Raised when no solvable layout is found within the retry budget."""


@dataclass(frozen=True)
class Obstacle:
    id: int
    center: tuple[float, float]
    radius: float = OBSTACLE_RADIUS
    velocity: tuple[float, float] = (0.0, 0.0)
    kind: str = "static"

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        speed = math.hypot(*self.velocity)
        if self.kind == "static" and speed != 0.0:
            raise ValueError("static obstacle must have zero velocity")
        if self.kind == "dynamic" and speed == 0.0:
            raise ValueError("dynamic obstacle must have nonzero speed")
        if self.kind not in ("static", "dynamic"):
            raise ValueError(f"unknown obstacle kind {self.kind!r}")


@dataclass(frozen=True)
class MapSpec:
    """Immutable map description; obstacle motion lives in MapState."""

    name: str
    bounds: tuple[float, float, float, float]   # x_min, x_max, y_min, y_max
    start: tuple[float, float, float]           # x, y, yaw
    goal_x: float
    obstacles: tuple[Obstacle, ...]
    walls: tuple[tuple[tuple[float, float], tuple[float, float]], ...] = ()
    midpoints: tuple[tuple[float, float], ...] = ()
    brightness: float = 1.0
    seed: int = 0

    def __post_init__(self):
        x_min, x_max, y_min, y_max = self.bounds
        if not (x_min < x_max and y_min < y_max):
            raise ValueError("degenerate bounds")
        sx, sy, _ = self.start
        if not (x_min <= sx <= x_max and y_min <= sy <= y_max):
            raise ValueError("start outside bounds")
        if not x_min <= self.goal_x <= x_max:
            raise ValueError("goal outside bounds")
        if not 0.0 < self.brightness <= 1.0:
            raise ValueError("brightness must be in (0, 1]")
        for ob in self.obstacles:
            d = math.hypot(ob.center[0] - sx, ob.center[1] - sy)
            if d < ob.radius + ROBOT_RADIUS:
                raise ValueError(f"obstacle {ob.id} overlaps the start pose")

    def obstacle_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = len(self.obstacles)
        centers = np.zeros((n, 2))
        velocities = np.zeros((n, 2))
        radii = np.zeros(n)
        for i, ob in enumerate(self.obstacles):
            centers[i] = ob.center
            velocities[i] = ob.velocity
            radii[i] = ob.radius
        return centers, velocities, radii

    def to_json_dict(self) -> dict:
        return {
            "schema": MAP_SCHEMA_VERSION,
            "name": self.name,
            "bounds": list(self.bounds),
            "start": list(self.start),
            "goal_x": self.goal_x,
            "walls": [[list(a), list(b)] for a, b in self.walls],
            "midpoints": [list(m) for m in self.midpoints],
            "brightness": self.brightness,
            "seed": self.seed,
            "obstacles": [
                {"id": ob.id, "center": list(ob.center), "radius": ob.radius,
                 "velocity": list(ob.velocity), "kind": ob.kind}
                for ob in self.obstacles
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MapSpec":
        if doc.get("schema") != MAP_SCHEMA_VERSION:
            raise ValueError(f"unsupported map schema {doc.get('schema')!r}")
        return cls(
            name=doc["name"],
            bounds=tuple(doc["bounds"]),
            start=tuple(doc["start"]),
            goal_x=doc["goal_x"],
            walls=tuple((tuple(a), tuple(b)) for a, b in doc["walls"]),
            midpoints=tuple(tuple(m) for m in doc["midpoints"]),
            brightness=doc["brightness"],
            seed=doc["seed"],
            obstacles=tuple(
                Obstacle(id=o["id"], center=tuple(o["center"]), radius=o["radius"],
                         velocity=tuple(o["velocity"]), kind=o["kind"])
                for o in doc["obstacles"]
            ),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MapSpec":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass
class MapState:
    """Mutable obstacle configuration advanced by the simulation loop."""

    spec: MapSpec
    centers: np.ndarray
    velocities: np.ndarray
    radii: np.ndarray

    @classmethod
    def from_spec(cls, spec: MapSpec) -> "MapState":
        centers, velocities, radii = spec.obstacle_arrays()
        return cls(spec=spec, centers=centers, velocities=velocities, radii=radii)

    def copy(self) -> "MapState":
        return MapState(self.spec, self.centers.copy(),
                        self.velocities.copy(), self.radii.copy())


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    target: str          # "obstacle:<id>" or "wall:<index>"
    penetration: float

    def __post_init__(self):
        if self.penetration <= 0.0:
            raise ValueError("penetration must be positive")

    @property
    def is_wall(self) -> bool:
        return self.target.startswith("wall:")


@njit(cache=True)
def advance_obstacles(centers, velocities, radii, x_min, x_max, y_min, y_max, dt):
    """Constant-velocity translation with specular wall bounce, in place."""
    n = centers.shape[0]
    for i in range(n):
        r = radii[i]
        for ax in range(2):
            lo = (x_min if ax == 0 else y_min) + r
            hi = (x_max if ax == 0 else y_max) - r
            c = centers[i, ax] + velocities[i, ax] * dt
            if c < lo:
                c = 2.0 * lo - c
                velocities[i, ax] = -velocities[i, ax]
            elif c > hi:
                c = 2.0 * hi - c
                velocities[i, ax] = -velocities[i, ax]
            centers[i, ax] = c


def step_obstacles(state: MapState, dt: float) -> MapState:
    """Advance obstacle kinematics by dt; returns a new MapState."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    out = state.copy()
    x_min, x_max, y_min, y_max = state.spec.bounds
    advance_obstacles(out.centers, out.velocities, out.radii,
                      x_min, x_max, y_min, y_max, dt)
    return out


def _wall_geometry(spec: MapSpec) -> list[tuple[float, int]]:
    """(wall y-coordinate, outward sign) for the corridor's long walls."""
    walls = []
    for (x1, y1), (x2, y2) in spec.walls:
        if y1 == y2:
            walls.append((y1, 1 if y1 > spec.start[1] else -1))
    return walls


def observe(robot: WipState, state: MapState, activation: float,
            robot_radius: float = ROBOT_RADIUS) -> list[ObstacleObservation]:
    """Ranged observations of every obstacle and wall within activation.

    Distances are surface-to-surface (floored at 0); approach rate is the
    relative velocity projected on the line of centers; bearings are in the
    robot body frame.
    """
    if activation <= 0.0:
        raise ValueError("activation must be positive")
    vx = robot.velocity * math.cos(robot.yaw)
    vy = robot.velocity * math.sin(robot.yaw)
    out: list[ObstacleObservation] = []
    for i in range(state.centers.shape[0]):
        dx = state.centers[i, 0] - robot.x
        dy = state.centers[i, 1] - robot.y
        # sqrt of the explicit sum, not hypot: bitwise identical between
        # CPython and compiled code, which hypot is not
        d = math.sqrt(dx * dx + dy * dy)
        p = max(0.0, d - state.radii[i] - robot_radius)
        if p > activation:
            continue
        if d > 1e-12:
            ux, uy = dx / d, dy / d
        else:
            ux, uy = 1.0, 0.0
        p_dot = (state.velocities[i, 0] - vx) * ux + (state.velocities[i, 1] - vy) * uy
        bearing = wrap_angle(math.atan2(dy, dx) - robot.yaw)
        out.append(ObstacleObservation(p, p_dot, bearing, kind="obstacle"))
    for wall_y, sign in _wall_geometry(state.spec):
        gap = sign * (wall_y - robot.y)           # distance robot center to wall line
        p = max(0.0, gap - robot_radius)
        if p > activation:
            continue
        p_dot = -sign * vy
        bearing = wrap_angle(math.atan2(sign * 1.0, 0.0) - robot.yaw)
        out.append(ObstacleObservation(p, p_dot, bearing, kind="wall"))
    return out


class ContactTracker:
    """Debounces collision reporting: one event per contact episode.

    A target re-arms only after separating by the hysteresis margin, so a
    scrape along one obstacle counts once.
    """

    def __init__(self, hysteresis: float = 0.05):
        self.hysteresis = hysteresis
        self._active: set[str] = set()

    def update(self, target: str, penetration: float, separation: float) -> bool:
        """Returns True when a new contact event should be reported."""
        if penetration > 0.0:
            if target in self._active:
                return False
            self._active.add(target)
            return True
        if target in self._active and separation > self.hysteresis:
            self._active.discard(target)
        return False


@njit(cache=True)
def resolve_contacts_s(x: float, y: float, yaw: float, v: float,
                       centers, radii, robot_r: float,
                       y_min: float, y_max: float, hysteresis: float,
                       contact, onsets, pens):
    """Resolve robot-obstacle and robot-wall overlap for one tick.

    Pushes the robot out along the contact normal and kills the inward
    velocity component in proportion to how head-on the contact is; a
    glancing scrape keeps most of its speed. contact is the per-target
    debounce flag array (obstacles then bottom wall then top wall); a flag
    re-arms only after separating past the hysteresis. New contact onsets
    are written to onsets (obstacle index, or n_obs + wall index) and pens.

    Returns (x, y, v, n_onsets). The engine loop and any external
    composition both call this, so the contact model has one home.
    """
    n_obs = centers.shape[0]
    n = 0
    cap = onsets.shape[0]
    for i in range(n_obs):
        dx = x - centers[i, 0]
        dy = y - centers[i, 1]
        r_sum = radii[i] + robot_r
        if abs(dx) > r_sum + hysteresis or abs(dy) > r_sum + hysteresis:
            if contact[i] == 1:
                contact[i] = 0
            continue
        d = math.sqrt(dx * dx + dy * dy)
        pen = r_sum - d
        if pen > 0.0:
            if d > 1e-12:
                nx_, ny_ = dx / d, dy / d
            else:
                nx_, ny_ = 1.0, 0.0
            x += nx_ * pen
            y += ny_ * pen
            hn = math.cos(yaw) * nx_ + math.sin(yaw) * ny_
            if v * hn < 0.0:
                v *= 1.0 - abs(hn)
            if contact[i] == 0:
                contact[i] = 1
                if n < cap:
                    onsets[n] = i
                    pens[n] = pen
                n += 1
        elif contact[i] == 1 and -pen > hysteresis:
            contact[i] = 0
    for w in range(2):
        if w == 0:
            pen = y_min - (y - robot_r)
            ny_ = 1.0
        else:
            pen = (y + robot_r) - y_max
            ny_ = -1.0
        ci = n_obs + w
        if pen > 0.0:
            y += ny_ * pen
            hn = math.sin(yaw) * ny_
            if v * hn < 0.0:
                v *= 1.0 - abs(hn)
            if contact[ci] == 0:
                contact[ci] = 1
                if n < cap:
                    onsets[n] = n_obs + w
                    pens[n] = pen
                n += 1
        elif contact[ci] == 1 and -pen > hysteresis:
            contact[ci] = 0
    return x, y, v, n


def check_collision(robot: WipState, state: MapState, robot_radius: float = ROBOT_RADIUS,
                    tracker: ContactTracker | None = None,
                    t: float = 0.0) -> list[CollisionEvent]:
    """Disc-disc and disc-wall overlap events at the current instant.

    Without a tracker every current overlap is reported; with one, only
    contact onsets are (debounced until separation past the hysteresis).
    """
    if robot_radius <= 0.0:
        raise ValueError("robot_radius must be positive")
    events: list[CollisionEvent] = []
    for i in range(state.centers.shape[0]):
        d = math.hypot(state.centers[i, 0] - robot.x, state.centers[i, 1] - robot.y)
        r_sum = state.radii[i] + robot_radius
        pen = r_sum - d
        target = f"obstacle:{state.spec.obstacles[i].id}"
        if tracker is None:
            if pen > 0.0:
                events.append(CollisionEvent(t, target, pen))
        elif tracker.update(target, pen, -pen):
            events.append(CollisionEvent(t, target, pen))
    for w, (wall_y, sign) in enumerate(_wall_geometry(state.spec)):
        gap = sign * (wall_y - robot.y)
        pen = robot_radius - gap
        target = f"wall:{w}"
        if tracker is None:
            if pen > 0.0:
                events.append(CollisionEvent(t, target, pen))
        elif tracker.update(target, pen, -pen):
            events.append(CollisionEvent(t, target, pen))
    return events


# ---------------------------------------------------------------------------
# map builders

def _corridor_walls(bounds):
    x_min, x_max, y_min, y_max = bounds
    return (((x_min, y_min), (x_max, y_min)), ((x_min, y_max), (x_max, y_max)))


def make_s1_static() -> MapSpec:
    """Stage-one static corridor: a fixed slalom whose first four obstacles
    force an S-shaped route; the straight line to the goal is blocked."""
    bounds = (0.0, 30.0, -3.0, 3.0)
    layout = [(5.0, 0.0), (9.0, 1.1), (13.0, -1.1), (17.0, 0.0),
              (20.0, 0.8), (23.0, -0.8)]
    obstacles = tuple(Obstacle(id=i, center=c) for i, c in enumerate(layout))
    return MapSpec(name="s1static", bounds=bounds, start=(1.0, 0.0, 0.0),
                   goal_x=29.0, obstacles=obstacles,
                   walls=_corridor_walls(bounds))


def make_s1_dynamic() -> MapSpec:
    """Stage-one dynamic corridor: fixed starting posts sweeping vertically
    at fixed speeds in [0.6, 0.9] m/s."""
    bounds = (0.0, 30.0, -3.0, 3.0)
    posts = [(6.0, 1.0), (10.0, -1.0), (14.0, 0.5), (18.0, -0.5),
             (22.0, 0.0), (26.0, 0.8)]
    speeds = [0.6, 0.75, 0.9, 0.65, 0.85, 0.7]
    obstacles = tuple(
        Obstacle(id=i, center=c, velocity=(0.0, s if i % 2 == 0 else -s),
                 kind="dynamic")
        for i, (c, s) in enumerate(zip(posts, speeds))
    )
    return MapSpec(name="s1dynamic", bounds=bounds, start=(1.0, 0.0, 0.0),
                   goal_x=29.0, obstacles=obstacles,
                   walls=_corridor_walls(bounds))


def _s2_static_layout(rng) -> list[tuple[float, float]]:
    rows = np.arange(-3.5, 3.51, 1.0)
    centers = []
    x = 4.0
    while x <= 16.5:
        removed = int(rng.integers(0, len(rows)))
        for k, y in enumerate(rows):
            if k != removed:
                centers.append((float(x), float(y)))
        x += float(rng.uniform(2.2, 3.2))
    return centers


def make_s2_static(brightness: float, seed: int) -> MapSpec:
    """Stage-two static field: obstacle columns with one randomized gap per
    column and seeded column spacing. Layout is regenerated with a derived
    seed until the grid-feasibility oracle accepts it."""
    if brightness not in (1.0, 0.1):
        raise ValueError("brightness must be 1.0 (bright) or 0.1 (dark)")
    bounds = (0.0, 20.0, -4.0, 4.0)
    name = "s2bright" if brightness == 1.0 else "s2dark"
    for attempt in range(10):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        centers = _s2_static_layout(rng)
        obstacles = tuple(Obstacle(id=i, center=c) for i, c in enumerate(centers))
        spec = MapSpec(name=name, bounds=bounds, start=(1.0, 0.0, 0.0),
                       goal_x=19.0, obstacles=obstacles,
                       walls=_corridor_walls(bounds),
                       brightness=brightness, seed=seed)
        if grid_solvable(spec):
            return spec
    raise MapGenerationError(f"no solvable s2 static layout for seed {seed}")


def make_s2_dynamic(seed: int) -> MapSpec:
    """Stage-two dynamic field: 60 drifting obstacles plus two required
    midpoints hugging the top or bottom wall."""
    bounds = (0.0, 20.0, -5.0, 5.0)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    obstacles = []
    for i in range(60):
        while True:
            cx = float(rng.uniform(3.0, 18.0))
            cy = float(rng.uniform(-4.5, 4.5))
            if math.hypot(cx - 1.0, cy) > 1.5:
                break
        angle = float(rng.uniform(0.0, 2.0 * math.pi))
        speed = float(rng.uniform(0.3, 0.9))
        obstacles.append(Obstacle(
            id=i, center=(cx, cy),
            velocity=(speed * math.cos(angle), speed * math.sin(angle)),
            kind="dynamic"))
    wall_margin = 1.0
    midpoints = []
    for lo, hi in ((6.0, 9.0), (12.0, 15.0)):
        mx = float(rng.uniform(lo, hi))
        side = 1.0 if rng.integers(0, 2) == 1 else -1.0
        midpoints.append((mx, side * (5.0 - wall_margin)))
    return MapSpec(name="s2dyn", bounds=bounds, start=(1.0, 0.0, 0.0),
                   goal_x=19.0, obstacles=tuple(obstacles),
                   walls=_corridor_walls(bounds),
                   midpoints=tuple(midpoints), seed=seed)


MAP_BUILDERS = {
    "s1static": lambda seed=0: make_s1_static(),
    "s1dynamic": lambda seed=0: make_s1_dynamic(),
    "s2bright": lambda seed=0: make_s2_static(1.0, seed),
    "s2dark": lambda seed=0: make_s2_static(0.1, seed),
    "s2dyn": lambda seed=0: make_s2_dynamic(seed),
}


def build_map(name: str, seed: int = 0) -> MapSpec:
    try:
        builder = MAP_BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown map {name!r}; choose from {sorted(MAP_BUILDERS)}")
    return builder(seed)


# ---------------------------------------------------------------------------
# feasibility oracle

def grid_solvable(spec: MapSpec, robot_radius: float = ROBOT_RADIUS,
                  cell: float = 0.1) -> bool:
    """Coarse grid feasibility: can a disc of robot_radius reach goal_x?

    Builds an occupancy grid over the corridor interior, labels connected
    free components, and asks whether the start shares a component with any
    goal-line cell. Conservative about walls, neutral about cell quantization.
    """
    x_min, x_max, y_min, y_max = spec.bounds
    xs = np.arange(x_min + cell, x_max, cell)
    ys = np.arange(y_min + robot_radius, y_max - robot_radius + 1e-9, cell)
    if len(ys) == 0:
        return False
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    free = np.ones(gx.shape, dtype=bool)
    for ob in spec.obstacles:
        d2 = (gx - ob.center[0]) ** 2 + (gy - ob.center[1]) ** 2
        free &= d2 >= (ob.radius + robot_radius) ** 2
    labels, _ = ndimage.label(free)
    sx, sy, _ = spec.start
    si = int(np.clip(round((sx - xs[0]) / cell), 0, len(xs) - 1))
    sj = int(np.clip(round((sy - ys[0]) / cell), 0, len(ys) - 1))
    start_label = labels[si, sj]
    if start_label == 0:
        return False
    gi = int(np.clip(round((spec.goal_x - xs[0]) / cell), 0, len(xs) - 1))
    return bool(np.any(labels[gi, :] == start_label))


def segment_hits_obstacle(p1, p2, spec: MapSpec) -> bool:
    """Does the straight segment p1->p2 pass through any obstacle disc?"""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    seg = p2 - p1
    L2 = float(seg @ seg)
    for ob in spec.obstacles:
        c = np.asarray(ob.center)
        t = 0.0 if L2 == 0.0 else float(np.clip((c - p1) @ seg / L2, 0.0, 1.0))
        closest = p1 + t * seg
        if float(np.hypot(*(c - closest))) < ob.radius:
            return True
    return False
