"""Damped point-mass environment on the unit square.

Two task families share the same dynamics and observation layout but reward
opposite control styles:

* ``precision-reach``: stop inside a tiny radius around a single target.
  Success hinges on accurate low-speed corrections over the last few steps.
* ``waypoint-chain``: visit a sequence of waypoints, each leg blocked by a
  thin wall capsule lying along the middle of the straight line between
  them.  Demonstrations detour around either side, so the action
  distribution is bimodal on every leg, and a policy that switches sides
  mid-leg has to cross the wall.  Touching a wall ends the episode as a
  failure.

Dynamics (per step, dt = 1):

    vel <- damping * (vel + action * dt)
    pos <- pos + vel * dt

Actions are clipped to [-1, 1] per axis before integration.  Observations are
``[pos, vel, target, remaining]`` where ``target`` is the current waypoint,
``remaining`` is the fraction of waypoints still unvisited, and Gaussian noise
is added to the position and velocity entries only.  The true state stays
noise-free; experts and dataset generation read it through ``state()``.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..rng import make_rng

OBS_DIM = 7

FAMILIES = ("precision-reach", "waypoint-chain")


@dataclass(frozen=True)
class EnvConstants:
    """Physics and sensing constants shared by every task."""

    dt: float = 1.0
    damping: float = 0.6
    obs_noise: float = 0.01
    precision_radius: float = 0.02
    waypoint_radius: float = 0.08
    chain_length: int = 4
    start_jitter: float = 0.03
    action_limit: float = 1.0
    # Each chain leg carries a wall capsule on its centreline spanning leg
    # progress [obstacle_s0, obstacle_s1].  Demonstrations detour around it
    # on a curve bowed sideways by detour_bulge; switching sides inside the
    # span means crossing the wall.  Layout sampling keeps every wall at
    # least obstacle_path_gap clear of both detour curves of every OTHER
    # leg and away from foreign waypoints, so only the wall's own leg ever
    # has to steer around it.
    obstacle_radius: float = 0.02
    obstacle_s0: float = 0.3
    obstacle_s1: float = 0.7
    detour_bulge: float = 0.13
    obstacle_path_gap: float = 0.04
    obstacle_waypoint_gap: float = 0.12


@dataclass(frozen=True)
class TaskSpec:
    """One task instance: fixed waypoint layout, radius, and step budget.

    Layouts are fixed per ``task_id`` so a learned task embedding can absorb
    the geometry that the observation does not spell out (everything past the
    current waypoint).
    """

    task_id: int
    family: str
    start: tuple[float, float]
    waypoints: tuple[tuple[float, float], ...]
    radius: float
    max_steps: int
    # Each obstacle is a capsule (x0, y0, x1, y1, r): the set of points
    # within r of the segment (x0, y0)-(x1, y1).  Equal endpoints give a
    # circle.
    obstacles: tuple[tuple[float, float, float, float, float], ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown task family {self.family!r}")
        if not self.waypoints:
            raise ConfigError("task needs at least one waypoint")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be positive")


class PointMassEnv:
    """Single-episode environment; construct one per rollout.

    ``rng`` drives start jitter and observation noise, so two environments
    built with generators in the same state replay identically.
    """

    def __init__(self, task: TaskSpec, rng: np.random.Generator,
                 constants: EnvConstants = EnvConstants()):
        self.task = task
        self.constants = constants
        self._rng = rng
        self.reset()

    def reset(self) -> np.ndarray:
        c = self.constants
        jitter = self._rng.uniform(-c.start_jitter, c.start_jitter, size=2)
        self.pos = np.asarray(self.task.start, dtype=np.float64) + jitter
        self.vel = np.zeros(2)
        self.next_idx = 0
        self.steps = 0
        self.success = False
        self.collided = False
        self.done = False
        return self.observe()

    def state(self):
        """True (noise-free) state for experts: (pos, vel, next_idx)."""
        return self.pos.copy(), self.vel.copy(), self.next_idx

    def observe(self) -> np.ndarray:
        c = self.constants
        obs = np.empty(OBS_DIM)
        noise = self._rng.normal(0.0, c.obs_noise, size=4)
        obs[0:2] = self.pos + noise[0:2]
        obs[2:4] = self.vel + noise[2:4]
        target_idx = min(self.next_idx, len(self.task.waypoints) - 1)
        obs[4:6] = self.task.waypoints[target_idx]
        obs[6] = 1.0 - self.next_idx / len(self.task.waypoints)
        return obs

    def step(self, action: np.ndarray):
        """Advance one step; returns (obs, done, info)."""
        if self.done:
            raise ConfigError("episode already finished; call reset()")
        c = self.constants
        a = np.clip(np.asarray(action, dtype=np.float64), -c.action_limit,
                    c.action_limit)
        prev = self.pos
        self.vel = c.damping * (self.vel + a * c.dt)
        self.pos = self.pos + self.vel * c.dt
        self.steps += 1
        if any(_segment_hits(prev, self.pos, ob)
               for ob in self.task.obstacles):
            self.collided = True
            self.done = True
            return self.observe(), self.done, {"success": False,
                                               "steps": self.steps,
                                               "collision": True}
        wps = self.task.waypoints
        while (self.next_idx < len(wps)
               and np.linalg.norm(self.pos - wps[self.next_idx])
               <= self.task.radius):
            self.next_idx += 1
        if self.next_idx == len(wps):
            self.success = True
            self.done = True
        elif self.steps >= self.task.max_steps:
            self.done = True
        return self.observe(), self.done, {"success": self.success,
                                           "steps": self.steps,
                                           "collision": False}


def _point_seg_dist(pt: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    d = b - a
    denom = float(d @ d)
    t = 0.0 if denom == 0.0 else float(np.clip((pt - a) @ d / denom,
                                               0.0, 1.0))
    return float(np.linalg.norm(a + t * d - pt))


def _cross(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    return float((b[0] - a[0]) * (c[1] - a[1])
                 - (b[1] - a[1]) * (c[0] - a[0]))


def _seg_seg_dist(p0: np.ndarray, p1: np.ndarray,
                  q0: np.ndarray, q1: np.ndarray) -> float:
    """Planar segment-to-segment distance.

    In the plane the minimum is at an endpoint unless the segments cross,
    so checking proper intersection plus four point-segment distances is
    exact.
    """
    d1 = _cross(q0, q1, p0)
    d2 = _cross(q0, q1, p1)
    d3 = _cross(p0, p1, q0)
    d4 = _cross(p0, p1, q1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return 0.0
    return min(_point_seg_dist(p0, q0, q1), _point_seg_dist(p1, q0, q1),
               _point_seg_dist(q0, p0, p1), _point_seg_dist(q1, p0, p1))


def _segment_hits(p0: np.ndarray, p1: np.ndarray,
                  obstacle: tuple[float, float, float, float, float]) -> bool:
    """True when the swept segment p0->p1 touches the obstacle capsule."""
    q0 = np.array(obstacle[0:2])
    q1 = np.array(obstacle[2:4])
    return _seg_seg_dist(p0, p1, q0, q1) <= obstacle[4]


def _sample_precision_task(task_id: int, rng: np.random.Generator,
                           constants: EnvConstants,
                           max_steps: int) -> TaskSpec:
    start = (0.5, 0.5)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    dist = rng.uniform(0.28, 0.42)
    target = (start[0] + dist * np.cos(angle), start[1] + dist * np.sin(angle))
    target = tuple(float(np.clip(t, 0.08, 0.92)) for t in target)
    return TaskSpec(task_id=task_id, family="precision-reach", start=start,
                    waypoints=(target,), radius=constants.precision_radius,
                    max_steps=max_steps)


def detour_point(a: np.ndarray, b: np.ndarray, s: float, mode: float,
                 bulge: float) -> np.ndarray:
    """Point at progress ``s`` on the bowed curve from ``a`` to ``b``.

    The curve is the straight line displaced by ``mode * bulge * sin(pi*s)``
    along the leg's left normal; ``mode`` +1/-1 picks the side.  Experts
    track it and layout sampling keeps foreign obstacles away from it.
    """
    leg = b - a
    length = float(np.linalg.norm(leg))
    if length < 1e-9:
        return np.asarray(b, dtype=float).copy()
    normal = np.array([-leg[1], leg[0]]) / length
    return a + s * leg + mode * bulge * np.sin(np.pi * s) * normal


def _chain_layout_ok(pts: list[np.ndarray], obstacles: list[np.ndarray],
                     constants: EnvConstants) -> bool:
    """Obstacles may only threaten their own leg.

    Legs are allowed to cross each other; what must never happen is a
    demonstration detouring around leg i's obstacle while grazing leg j's.
    """
    c = constants
    grid = np.linspace(0.0, 1.0, 21)
    for k, (w0, w1) in enumerate(obstacles):
        keepout = c.obstacle_radius + c.obstacle_path_gap
        for j in range(len(pts) - 1):
            if j == k:
                continue
            for mode in (1.0, -1.0):
                if any(_point_seg_dist(
                        detour_point(pts[j], pts[j + 1], s, mode,
                                     c.detour_bulge), w0, w1) < keepout
                       for s in grid):
                    return False
        for j, p in enumerate(pts):
            if j in (k, k + 1):
                continue
            if _point_seg_dist(p, w0, w1) < c.obstacle_waypoint_gap:
                return False
    return True


def _sample_chain_task(task_id: int, rng: np.random.Generator,
                       constants: EnvConstants, max_steps: int) -> TaskSpec:
    """Random walk of waypoints with bounded turn angles; the whole layout is
    rejection-sampled until every leg's obstacle is clear of the other legs."""
    start = np.array([0.5, 0.5])
    for _layout in range(2048):
        heading = rng.uniform(0.0, 2.0 * np.pi)
        pts = [start.copy()]
        for _ in range(constants.chain_length):
            for _attempt in range(64):
                turn = rng.uniform(0.4, 2.2) * rng.choice([-1.0, 1.0])
                leg = rng.uniform(0.34, 0.42)
                cand_heading = heading + turn
                cand = pts[-1] + leg * np.array([np.cos(cand_heading),
                                                 np.sin(cand_heading)])
                if np.all(cand > 0.08) and np.all(cand < 0.92):
                    heading = cand_heading
                    pts.append(cand)
                    break
            else:
                break
        if len(pts) != constants.chain_length + 1:
            continue
        obstacles = [(pts[k] + constants.obstacle_s0 * (pts[k + 1] - pts[k]),
                      pts[k] + constants.obstacle_s1 * (pts[k + 1] - pts[k]))
                     for k in range(len(pts) - 1)]
        if not _chain_layout_ok(pts, obstacles, constants):
            continue
        return TaskSpec(
            task_id=task_id, family="waypoint-chain",
            start=(float(start[0]), float(start[1])),
            waypoints=tuple((float(p[0]), float(p[1])) for p in pts[1:]),
            radius=constants.waypoint_radius, max_steps=max_steps,
            obstacles=tuple((float(w0[0]), float(w0[1]),
                             float(w1[0]), float(w1[1]),
                             constants.obstacle_radius)
                            for w0, w1 in obstacles))
    raise ConfigError("could not sample a chain layout; constants leave "
                      "too little room between obstacles")


def make_suite(n_precision: int = 8, n_chain: int = 8, seed: int = 0,
               constants: EnvConstants = EnvConstants(),
               precision_budget: int = 18,
               chain_budget: int = 34) -> list[TaskSpec]:
    """Build the fixed task suite; layouts depend only on ``seed``.

    Task ids are assigned densely from 0 so they can index an embedding
    table directly.
    """
    tasks = []
    for i in range(n_precision):
        rng = make_rng(seed, "task", "precision", str(i))
        tasks.append(_sample_precision_task(len(tasks), rng, constants,
                                            precision_budget))
    for i in range(n_chain):
        rng = make_rng(seed, "task", "chain", str(i))
        tasks.append(_sample_chain_task(len(tasks), rng, constants,
                                        chain_budget))
    return tasks
