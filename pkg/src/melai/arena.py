"""Deterministic 2D kinematic arena.

The robot is a rigid disc in the plane.  Wheels constrain the velocity of
their contact point along their rolling direction and the body twist is
the least-squares fit of those constraints; joints add a weaker paddling
thrust along their mount normal.  Walls are line segments, collisions
slide the robot along them, and it never ends a step closer than its
footprint radius to any wall.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .controller import ElmanController, elman_step
from .morphogen import BodyPlan, OrganKind

ARENA_SIDE = 2.0
DIAGONAL = math.sqrt(8.0)
_MIN_PLANAR = 0.2  # minimum horizontal share of a normal to drive, thrust or aim


@dataclass
class ArenaParams:
    dt: float = 0.1
    sim_time: float = 60.0
    v_max: float = 0.1
    f_max: float = 1.0
    joint_efficiency: float = 0.3
    fov_deg: float = 60.0
    max_range: float = 2.0
    move_threshold: float = 0.01

    @property
    def n_steps(self) -> int:
        return int(round(self.sim_time / self.dt))


@dataclass(frozen=True)
class StepZone:
    """Square ring around ``center`` between Chebyshev radii inner and outer."""

    center: tuple[float, float]
    inner: float
    outer: float
    wheel_multiplier: float = 0.5
    joint_multiplier: float = 0.8


@dataclass
class Environment:
    name: str
    walls: np.ndarray  # (k, 4) segments x0 y0 x1 y1, border included
    beacon: np.ndarray
    start: tuple[float, float, float]
    step_zones: list[StepZone] = field(default_factory=list)
    size: float = ARENA_SIDE

    @property
    def diagonal(self) -> float:
        return math.hypot(self.size, self.size)

    def zone_array(self) -> np.ndarray:
        rows = [(*z.center, z.inner, z.outer, z.wheel_multiplier, z.joint_multiplier) for z in self.step_zones]
        return np.array(rows, dtype=float).reshape(-1, 6)


def border_walls(size: float = ARENA_SIDE) -> list[list[float]]:
    return [[0, 0, size, 0], [size, 0, size, size], [size, size, 0, size], [0, size, 0, 0]]


def environment_from_dict(d: dict) -> Environment:
    size = float(d.get("size", ARENA_SIDE))
    walls = border_walls(size) + [list(w) for w in d.get("walls", [])]
    zones = [StepZone(tuple(z["center"]), z["inner"], z["outer"],
                      z.get("wheel_multiplier", 0.5), z.get("joint_multiplier", 0.8))
             for z in d.get("step_zones", [])]
    env = Environment(d["name"], np.array(walls, dtype=float), np.array(d["beacon"], dtype=float),
                      tuple(map(float, d["start"])), zones, size)
    for label, (x, y) in (("beacon", env.beacon), ("start", env.start[:2])):
        if not (0 <= x <= size and 0 <= y <= size):
            raise ValueError(f"{env.name}: {label} ({x}, {y}) outside the arena")
    return env


def load_environments(path=None) -> dict[str, Environment]:
    if path is None:
        text = resources.files("melai").joinpath("data/environments.json").read_text()
    else:
        text = Path(path).read_text()
    return {d["name"]: environment_from_dict(d) for d in json.loads(text)["environments"]}


def load_environment(name: str, path=None) -> Environment:
    envs = load_environments(path)
    if name not in envs:
        raise KeyError(f"unknown environment {name!r}; known: {sorted(envs)}")
    return envs[name]


def task_performance(p_f, p_b, diagonal: float = DIAGONAL) -> float:
    return 1.0 - float(np.linalg.norm(np.asarray(p_f, float) - np.asarray(p_b, float))) / diagonal


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _seg_dist(px, py, x0, y0, x1, y1):
    ex, ey = x1 - x0, y1 - y0
    L2 = ex * ex + ey * ey
    t = 0.0
    if L2 > 0.0:
        t = ((px - x0) * ex + (py - y0) * ey) / L2
        t = min(1.0, max(0.0, t))
    qx, qy = x0 + t * ex, y0 + t * ey
    return math.hypot(px - qx, py - qy), qx, qy


@njit(cache=True)
def clearance(px, py, walls):
    best = np.inf
    for k in range(walls.shape[0]):
        d, _, _ = _seg_dist(px, py, walls[k, 0], walls[k, 1], walls[k, 2], walls[k, 3])
        best = min(best, d)
    return best


@njit(cache=True)
def _push_out(px, py, radius, walls):
    for _ in range(8):
        moved = False
        for k in range(walls.shape[0]):
            d, qx, qy = _seg_dist(px, py, walls[k, 0], walls[k, 1], walls[k, 2], walls[k, 3])
            if d < radius and d > 1e-12:
                s = (radius - d + 1e-9) / d
                px += (px - qx) * s
                py += (py - qy) * s
                moved = True
        if not moved:
            break
    return px, py


@njit(cache=True)
def _move(x, y, tx, ty, radius, walls):
    """Slide from (x, y) towards (tx, ty), never ending inside a wall."""
    dx, dy = tx - x, ty - y
    dist = math.hypot(dx, dy)
    n = max(1, int(math.ceil(dist / (0.25 * radius))))
    for _ in range(n):
        px, py = _push_out(x + dx / n, y + dy / n, radius, walls)
        if clearance(px, py, walls) < radius - 1e-9:
            return x, y
        # sliding must not carry the disc across a wall it touched
        if math.hypot(px - x, py - y) > 0.5 * radius:
            return x, y
        x, y = px, py
    return x, y


@njit(cache=True)
def _integrate(x, y, th, vx, vy, w, dt):
    """Exact pose update for a constant body twist."""
    if abs(w) < 1e-12:
        lx, ly = vx * dt, vy * dt
    else:
        s, c = math.sin(w * dt), math.cos(w * dt)
        lx = (vx * s + vy * (c - 1.0)) / w
        ly = (vx * (1.0 - c) + vy * s) / w
    ct, st = math.cos(th), math.sin(th)
    return x + ct * lx - st * ly, y + st * lx + ct * ly, th + w * dt


@njit(cache=True)
def _zone_mult(x, y, zones):
    for k in range(zones.shape[0]):
        r = max(abs(x - zones[k, 0]), abs(y - zones[k, 1]))
        if zones[k, 2] <= r < zones[k, 3]:
            return zones[k, 4], zones[k, 5]
    return 1.0, 1.0


@njit(cache=True)
def _step(x, y, th, speeds, thrusts, wheel_map, joint_map, radius, walls, zones, dt):
    wm, jm = _zone_mult(x, y, zones)
    vx = vy = w = 0.0
    for i in range(speeds.shape[0]):
        vx += wm * wheel_map[0, i] * speeds[i]
        vy += wm * wheel_map[1, i] * speeds[i]
        w += wm * wheel_map[2, i] * speeds[i]
    for i in range(thrusts.shape[0]):
        vx += jm * joint_map[0, i] * thrusts[i]
        vy += jm * joint_map[1, i] * thrusts[i]
        w += jm * joint_map[2, i] * thrusts[i]
    nx, ny, nth = _integrate(x, y, th, vx, vy, w, dt)
    if nx != x or ny != y:
        nx, ny = _move(x, y, nx, ny, radius, walls)
    return nx, ny, nth


@njit(cache=True)
def _ray(px, py, dx, dy, walls, max_range):
    best = max_range
    for k in range(walls.shape[0]):
        ax, ay = walls[k, 0], walls[k, 1]
        ex, ey = walls[k, 2] - ax, walls[k, 3] - ay
        den = dx * ey - dy * ex
        if abs(den) < 1e-12:
            continue
        t = ((ax - px) * ey - (ay - py) * ex) / den
        u = ((ax - px) * dy - (ay - py) * dx) / den
        if t >= 0.0 and 0.0 <= u <= 1.0 and t < best:
            best = t
    return best


@njit(cache=True)
def _occluded(px, py, bx, by, walls):
    dx, dy = bx - px, by - py
    for k in range(walls.shape[0]):
        ax, ay = walls[k, 0], walls[k, 1]
        ex, ey = walls[k, 2] - ax, walls[k, 3] - ay
        den = dx * ey - dy * ex
        if abs(den) < 1e-12:
            continue
        t = ((ax - px) * ey - (ay - py) * ex) / den
        u = ((ax - px) * dy - (ay - py) * dx) / den
        if 0.0 < t < 1.0 and 0.0 <= u <= 1.0:
            return True
    return False


@njit(cache=True)
def _sense(x, y, th, sensor_pos, sensor_dir, walls, beacon, cos_half_fov, max_range, out):
    ct, st = math.cos(th), math.sin(th)
    for i in range(sensor_pos.shape[0]):
        px = x + ct * sensor_pos[i, 0] - st * sensor_pos[i, 1]
        py = y + st * sensor_pos[i, 0] + ct * sensor_pos[i, 1]
        dx = ct * sensor_dir[i, 0] - st * sensor_dir[i, 1]
        dy = st * sensor_dir[i, 0] + ct * sensor_dir[i, 1]
        if dx == 0.0 and dy == 0.0:
            out[2 * i] = 0.0
            out[2 * i + 1] = 1.0
            continue
        bx, by = beacon[0] - px, beacon[1] - py
        bd = math.hypot(bx, by)
        seen = bd < 1e-12 or (bx * dx + by * dy) / bd >= cos_half_fov
        if seen and _occluded(px, py, beacon[0], beacon[1], walls):
            seen = False
        out[2 * i] = 1.0 if seen else 0.0
        out[2 * i + 1] = _ray(px, py, dx, dy, walls, max_range) / max_range


@njit(cache=True)
def _rollout(theta, n_in, hidden, n_wheels, n_joints, wheel_map, joint_map, sensor_pos, sensor_dir,
             radius, walls, zones, beacon, x, y, th, v_max, thrust_max, cos_half_fov, max_range,
             dt, n_steps, traj):
    context = np.zeros(hidden)
    inputs = np.zeros(n_in)
    out = np.zeros(n_wheels + n_joints)
    speeds = np.zeros(n_wheels)
    thrusts = np.zeros(n_joints)
    record = traj.shape[0] > 0
    if record:
        traj[0, 0], traj[0, 1], traj[0, 2] = x, y, th
    for t in range(n_steps):
        _sense(x, y, th, sensor_pos, sensor_dir, walls, beacon, cos_half_fov, max_range, inputs)
        elman_step(theta, n_in, hidden, n_wheels + n_joints, inputs, context, out)
        for i in range(n_wheels):
            speeds[i] = (2.0 * out[i] - 1.0) * v_max
        for i in range(n_joints):
            thrusts[i] = out[n_wheels + i] * thrust_max
        x, y, th = _step(x, y, th, speeds, thrusts, wheel_map, joint_map, radius, walls, zones, dt)
        if record:
            traj[t + 1, 0], traj[t + 1, 1], traj[t + 1, 2] = x, y, th
    return x, y, th


# ---------------------------------------------------------------------------
# body model


@dataclass
class BodyModel:
    """Planar kinematic summary of a body-plan (metres, body frame)."""

    wheel_map: np.ndarray  # (3, n_wheels): wheel speeds -> body twist
    joint_map: np.ndarray  # (3, n_joints): joint thrusts -> body twist
    sensor_pos: np.ndarray  # (n_sensors, 2)
    sensor_dir: np.ndarray  # (n_sensors, 2), zero rows for sensors facing up/down
    radius: float

    @property
    def n_wheels(self) -> int:
        return self.wheel_map.shape[1]

    @property
    def n_joints(self) -> int:
        return self.joint_map.shape[1]

    @property
    def n_sensors(self) -> int:
        return self.sensor_pos.shape[0]

    @classmethod
    def from_wheels(cls, positions, rolling_dirs, radius: float, sensor_pos=None, sensor_dir=None,
                    joint_positions=(), joint_normals=()) -> "BodyModel":
        """Least-squares twist map for wheels at ``positions`` rolling along ``rolling_dirs``."""
        wheel_map, joint_map = _twist_maps(positions, rolling_dirs, joint_positions, joint_normals)
        return cls(wheel_map, joint_map,
                   np.zeros((0, 2)) if sensor_pos is None else np.asarray(sensor_pos, float),
                   np.zeros((0, 2)) if sensor_dir is None else np.asarray(sensor_dir, float),
                   float(radius))


def _contact_rows(positions, dirs) -> np.ndarray:
    rows = [[t[0], t[1], r[0] * t[1] - r[1] * t[0]] for r, t in zip(positions, dirs)]
    return np.array(rows, dtype=float).reshape(-1, 3)


def _twist_maps(wheel_pos, wheel_dirs, joint_pos, joint_dirs):
    """Rigid-body least-squares fit over all actuator contact velocities.

    Each actuator asks for a velocity ``v_i`` along ``t_i`` at ``r_i``; the twist
    minimising the residual is ``pinv(A) @ v``.  Columns are split per kind.
    """
    A = np.vstack([_contact_rows(wheel_pos, wheel_dirs), _contact_rows(joint_pos, joint_dirs)])
    n_w = len(wheel_dirs)
    P = np.linalg.pinv(A) if len(A) else np.zeros((3, 0))
    return P[:, :n_w].copy(), P[:, n_w:].copy()


def _rolling_dir(axle):
    t = np.array([-axle[1], axle[0]])
    if t[0] < -1e-9 or (abs(t[0]) <= 1e-9 and t[1] < 0):
        t = -t
    return t


def body_model(plan: BodyPlan) -> BodyModel:
    cm = 0.01
    vox = plan.voxel_centers()
    origin = vox[:, :2].mean(axis=0)
    half = plan.voxel_size / 2
    corners = [vox[:, :2] + np.array(s) * half for s in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
    for seg in plan.segments[1:]:
        c = np.asarray(seg.center[:2])
        corners += [c + np.array(s) * seg.side / 2 for s in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
    pts = np.vstack([np.atleast_2d(c) for c in corners]
                    + [np.array([o.position[:2] for o in plan.organs]).reshape(-1, 2)])
    radius = float(np.max(np.linalg.norm(pts - origin, axis=1))) * cm

    def planar(o):
        r = (np.asarray(o.position[:2]) - origin) * cm
        n = np.asarray(o.normal[:2], dtype=float)
        return r, n

    positions, dirs = [], []
    for o in plan.organs_of(OrganKind.WHEEL):
        r, n = planar(o)
        positions.append(r)
        dirs.append(_rolling_dir(n / np.linalg.norm(n)) if np.linalg.norm(n) >= _MIN_PLANAR else np.zeros(2))
    jpos, jdirs = [], []
    for o in plan.organs_of(OrganKind.JOINT):
        r, n = planar(o)
        jpos.append(r)
        jdirs.append(n / np.linalg.norm(n) if np.linalg.norm(n) >= _MIN_PLANAR else np.zeros(2))
    wheel_map, joint_map = _twist_maps(positions, dirs, jpos, jdirs)

    spos, sdir = [], []
    for o in plan.organs_of(OrganKind.SENSOR):
        r, n = planar(o)
        spos.append(r)
        sdir.append(n / np.linalg.norm(n) if np.linalg.norm(n) >= _MIN_PLANAR else np.zeros(2))
    return BodyModel(wheel_map, joint_map, np.array(spos, float).reshape(-1, 2),
                     np.array(sdir, float).reshape(-1, 2), radius)


# ---------------------------------------------------------------------------
# state, step, sense


@dataclass
class RobotState:
    x: float
    y: float
    heading: float
    body: BodyModel
    elapsed: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


def start_state(body: BodyModel, env: Environment) -> RobotState:
    x, y, th = env.start
    x, y = _push_out(x, y, body.radius, env.walls)
    return RobotState(x, y, th, body)


def step(state: RobotState, actuation, env: Environment, dt: float,
         params: ArenaParams | None = None) -> RobotState:
    """Advance by ``dt`` seconds.

    ``actuation`` holds wheel speeds (m/s) followed by joint frequencies (Hz).
    """
    params = params or ArenaParams()
    if dt <= 0:
        raise ValueError("dt must be positive")
    body = state.body
    a = np.asarray(actuation, dtype=float)
    if a.shape != (body.n_wheels + body.n_joints,):
        raise ValueError(f"expected {body.n_wheels + body.n_joints} actuation values, got {a.shape}")
    thrust = a[body.n_wheels:] / params.f_max * params.joint_efficiency * params.v_max
    x, y, th = _step(state.x, state.y, state.heading, a[: body.n_wheels], thrust, body.wheel_map,
                     body.joint_map, body.radius, env.walls, env.zone_array(), dt)
    return RobotState(x, y, th, body, state.elapsed + dt)


def sense(state: RobotState, env: Environment, params: ArenaParams | None = None) -> np.ndarray:
    params = params or ArenaParams()
    out = np.zeros(2 * state.body.n_sensors)
    _sense(state.x, state.y, state.heading, state.body.sensor_pos, state.body.sensor_dir, env.walls,
           env.beacon, math.cos(math.radians(params.fov_deg) / 2), params.max_range, out)
    return out


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutResult:
    task_performance: float
    final_position: np.ndarray
    trajectory: np.ndarray  # (n, 3) poses; only the endpoints unless recorded
    moved: bool

    @property
    def final_heading(self) -> float:
        return float(self.trajectory[-1, 2])


class Rollout:
    """A body placed in an environment, ready to evaluate parameter vectors."""

    def __init__(self, body: BodyModel, env: Environment, hidden_size: int,
                 params: ArenaParams | None = None):
        self.body = body
        self.env = env
        self.hidden = hidden_size
        self.params = params or ArenaParams()
        self.start = start_state(body, env)
        self._zones = env.zone_array()

    @property
    def n_actuators(self) -> int:
        return self.body.n_wheels + self.body.n_joints

    def static_result(self) -> RolloutResult:
        p = self.start.position
        traj = np.array([[self.start.x, self.start.y, self.start.heading]] * 2)
        return RolloutResult(task_performance(p, self.env.beacon, self.env.diagonal), p, traj, False)

    def run(self, theta, record: bool = False, sim_time: float | None = None) -> RolloutResult:
        if self.n_actuators == 0:
            return self.static_result()
        p = self.params
        n_steps = p.n_steps if sim_time is None else int(round(sim_time / p.dt))
        traj = np.zeros((n_steps + 1 if record else 0, 3))
        s = self.start
        x, y, th = _rollout(np.asarray(theta, dtype=float), 2 * self.body.n_sensors, self.hidden,
                            self.body.n_wheels, self.body.n_joints, self.body.wheel_map,
                            self.body.joint_map, self.body.sensor_pos, self.body.sensor_dir,
                            self.body.radius, self.env.walls, self._zones, self.env.beacon,
                            s.x, s.y, s.heading, p.v_max, p.joint_efficiency * p.v_max,
                            math.cos(math.radians(p.fov_deg) / 2), p.max_range, p.dt, n_steps, traj)
        if not record:
            traj = np.array([[s.x, s.y, s.heading], [x, y, th]])
        final = np.array([x, y])
        moved = bool(np.linalg.norm(final - s.position) > p.move_threshold)
        return RolloutResult(task_performance(final, self.env.beacon, self.env.diagonal), final, traj, moved)


def evaluate(plan: BodyPlan, ctrl: ElmanController | None, env: Environment, sim_time: float = 60.0,
             params: ArenaParams | None = None, record: bool = True) -> RolloutResult:
    body = body_model(plan)
    hidden = ctrl.hidden_size if ctrl is not None else 1
    rollout = Rollout(body, env, hidden, params)
    if rollout.n_actuators == 0 or ctrl is None:
        return rollout.static_result()
    if ctrl.n_inputs != 2 * body.n_sensors or ctrl.n_outputs != rollout.n_actuators:
        raise ValueError("controller topology does not match the body-plan")
    ctrl.reset()
    return rollout.run(ctrl.get_params(), record=record, sim_time=sim_time)


# ---------------------------------------------------------------------------
# export


def trajectory_to_csv(result: RolloutResult, path, dt: float = 0.1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "heading"])
        for k, (x, y, th) in enumerate(result.trajectory):
            w.writerow([f"{k * dt:.3f}", repr(float(x)), repr(float(y)), repr(float(th))])


def render_svg(env: Environment, path, trajectories=()) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Circle, Rectangle

    plt.rcParams["svg.hashsalt"] = "melai"
    fig, ax = plt.subplots(figsize=(4, 4))
    for z in env.step_zones:
        for r in (z.outer, z.inner):
            ax.add_patch(Rectangle((z.center[0] - r, z.center[1] - r), 2 * r, 2 * r,
                                   fill=False, ls=":", ec="#999999"))
    for x0, y0, x1, y1 in env.walls:
        ax.plot([x0, x1], [y0, y1], color="black", lw=2)
    ax.add_patch(Circle(tuple(env.beacon), 0.14, color="#ffbf00", alpha=0.4))
    ax.plot(*env.beacon, "*", color="#ff7f00", ms=12)
    ax.plot(env.start[0], env.start[1], "s", color="#1f77b4")
    for traj in trajectories:
        traj = traj.trajectory if isinstance(traj, RolloutResult) else np.asarray(traj)
        ax.plot(traj[:, 0], traj[:, 1], lw=1)
    ax.set_xlim(-0.05, env.size + 0.05)
    ax.set_ylim(-0.05, env.size + 0.05)
    ax.set_aspect("equal")
    ax.set_title(env.name)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
