"""Node mobility: static, random direction, random waypoint, Gauss-Markov.

All models advance every node at once with numpy and reflect off the square's
walls, so positions never leave ``[0, side]^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

MODELS = ("static", "random_direction", "random_waypoint", "gauss_markov")
SPEED_BAND = 0.3


@dataclass(frozen=True)
class MobilityConfig:
    model: str = "static"
    v_low: float = 0.0
    v_high: float = 0.0
    direction_interval: float = 10.0
    pause_time: float = 2.0
    gm_alpha: float = 0.75
    gm_update: float = 1.0
    mean_speed: float = 0.0
    gm_speed_std: float | None = None  # default: 20% of mean_speed
    gm_direction_std: float = 0.5
    tick: float = 0.1

    @classmethod
    def for_speed(cls, model: str, speed: float, **kw) -> "MobilityConfig":
        """Nominal ``speed`` with speeds drawn from a +/-30% band around it."""
        if model == "static" or speed == 0:
            return cls("static", **kw)
        return cls(model, (1 - SPEED_BAND) * speed, (1 + SPEED_BAND) * speed, mean_speed=speed, **kw)

    @property
    def nominal_speed(self) -> float:
        if self.model == "static":
            return 0.0
        if self.model == "gauss_markov":
            return self.mean_speed
        return 0.5 * (self.v_low + self.v_high)

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown mobility model {self.model!r}; expected one of {MODELS}")
        if not 0 <= self.v_low <= self.v_high:
            raise ValueError("need 0 <= v_low <= v_high")
        if self.pause_time < 0:
            raise ValueError("pause_time must be >= 0")
        if not 0 <= self.gm_alpha <= 1:
            raise ValueError("gm_alpha must lie in [0, 1]")
        if self.tick <= 0 or self.direction_interval <= 0 or self.gm_update <= 0:
            raise ValueError("intervals must be > 0")


def _reflect(pos: np.ndarray, vel: np.ndarray, side: float) -> tuple[np.ndarray, np.ndarray]:
    """Mirror positions back into the box, flipping the normal velocity component."""
    for _ in range(4):
        low = pos < 0
        high = pos > side
        if not (low.any() or high.any()):
            break
        pos = np.where(low, -pos, pos)
        pos = np.where(high, 2 * side - pos, pos)
        vel = np.where(low | high, -vel, vel)
    return np.clip(pos, 0.0, side), vel


class MobilityState:
    """Per-node model memory; ``step`` mutates the world it is given."""

    def __init__(self, config: MobilityConfig, n: int, side: float, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.n = n
        self.side = side
        self.rng = rng
        self.time = 0.0
        c = config
        if c.model == "random_direction":
            self.timer = rng.uniform(0.0, c.direction_interval, n)
            self.velocity = self._random_velocity(n)
        elif c.model == "random_waypoint":
            self.dest = rng.uniform(0.0, side, (n, 2))
            self.speed = rng.uniform(c.v_low, c.v_high, n)
            self.pause = np.zeros(n)
            self.velocity = np.zeros((n, 2))
        elif c.model == "gauss_markov":
            self.speed_std = 0.2 * c.mean_speed if c.gm_speed_std is None else c.gm_speed_std
            self.mean_dir = rng.uniform(0.0, 2 * math.pi, n)
            self.direction = self.mean_dir.copy()
            self.speed = np.maximum(0.0, c.mean_speed + self.speed_std * rng.standard_normal(n))
            self.timer = rng.uniform(0.0, c.gm_update, n)
            self.velocity = self._polar(self.speed, self.direction)
        else:
            self.velocity = np.zeros((n, 2))

    @staticmethod
    def _polar(speed, angle) -> np.ndarray:
        return np.column_stack((speed * np.cos(angle), speed * np.sin(angle)))

    def _random_velocity(self, k: int) -> np.ndarray:
        c = self.config
        return self._polar(self.rng.uniform(c.v_low, c.v_high, k), self.rng.uniform(0.0, 2 * math.pi, k))

    def step(self, world, dt: float) -> None:
        if dt <= 0:
            raise ValueError("dt must be > 0")
        self.time += dt
        model = self.config.model
        if model == "static":
            return
        getattr(self, "_step_" + model)(world, dt)
        world.velocities = self.velocity
        world.touch()

    def _step_random_direction(self, world, dt):
        c = self.config
        self.timer -= dt
        due = self.timer <= 0
        if due.any():
            self.velocity[due] = self._random_velocity(int(due.sum()))
            self.timer[due] += c.direction_interval
        world.positions, self.velocity = _reflect(world.positions + self.velocity * dt, self.velocity, self.side)

    def _step_random_waypoint(self, world, dt):
        c = self.config
        pos = world.positions
        pausing = self.pause > 0
        self.pause = np.maximum(0.0, self.pause - dt)
        moving = ~pausing
        delta = self.dest - pos
        dist = np.hypot(delta[:, 0], delta[:, 1])
        reach = self.speed * dt
        arrive = moving & (dist <= reach)
        travel = moving & ~arrive
        unit = np.divide(delta, dist[:, None], out=np.zeros_like(delta), where=dist[:, None] > 0)
        self.velocity = np.where(travel[:, None], unit * self.speed[:, None], 0.0)
        new = pos + self.velocity * dt
        new[arrive] = self.dest[arrive]
        k = int(arrive.sum())
        if k:
            self.pause[arrive] = c.pause_time
            self.dest[arrive] = self.rng.uniform(0.0, self.side, (k, 2))
            self.speed[arrive] = self.rng.uniform(c.v_low, c.v_high, k)
        world.positions = np.clip(new, 0.0, self.side)

    def _step_gauss_markov(self, world, dt):
        c = self.config
        a = c.gm_alpha
        self.timer -= dt
        due = self.timer <= 0
        k = int(due.sum())
        if k:
            noise = math.sqrt(1 - a * a)
            self.speed[due] = np.maximum(
                0.0, a * self.speed[due] + (1 - a) * c.mean_speed + noise * self.speed_std * self.rng.standard_normal(k)
            )
            self.direction[due] = (
                a * self.direction[due]
                + (1 - a) * self.mean_dir[due]
                + noise * c.gm_direction_std * self.rng.standard_normal(k)
            )
            self.timer[due] += c.gm_update
            self.velocity[due] = self._polar(self.speed[due], self.direction[due])
        old = self.velocity
        world.positions, self.velocity = _reflect(world.positions + old * dt, old, self.side)
        flipped_x = np.sign(self.velocity[:, 0]) != np.sign(old[:, 0])
        flipped_y = np.sign(self.velocity[:, 1]) != np.sign(old[:, 1])
        if flipped_x.any() or flipped_y.any():
            # keep the heading memory consistent with the mirrored velocity
            self.direction = np.where(flipped_x, math.pi - self.direction, self.direction)
            self.mean_dir = np.where(flipped_x, math.pi - self.mean_dir, self.mean_dir)
            self.direction = np.where(flipped_y, -self.direction, self.direction)
            self.mean_dir = np.where(flipped_y, -self.mean_dir, self.mean_dir)


def mobility_step(world, state: MobilityState, dt: float) -> None:
    state.step(world, dt)


def make_mobility(config: MobilityConfig, world, rng: np.random.Generator) -> MobilityState:
    state = MobilityState(config, world.n, world.side, rng)
    world.velocities = state.velocity.copy()
    return state


class InsufficientDataError(ValueError):
    pass


def link_change_rate(snapshots, comm_range: float, dt: float) -> float:
    """Mean link changes per node per second over a trace of position snapshots.

    Each changed link touches two neighbor sets; halving the summed per-node
    symmetric differences counts every change once.
    """
    if len(snapshots) < 2:
        raise InsufficientDataError("need at least two snapshots")
    n = len(snapshots[0])
    prev = None
    changes = 0
    for pos in snapshots:
        pairs = cKDTree(pos).query_pairs(comm_range, output_type="ndarray")
        cur = set(map(tuple, pairs.tolist()))
        if prev is not None:
            changes += len(cur ^ prev)  # per-link; equals (sum of per-node diffs) / 2
        prev = cur
    return changes / (n * dt * (len(snapshots) - 1))


def trace_positions(world, config: MobilityConfig, duration: float, sample_dt: float, rng) -> list[np.ndarray]:
    """Run mobility on a copy of ``world`` and sample positions every ``sample_dt``."""
    w = world.copy()
    state = make_mobility(config, w, rng)
    per_sample = max(1, round(sample_dt / config.tick))
    out = [w.positions.copy()]
    steps = int(round(duration / sample_dt))
    for _ in range(steps):
        for _ in range(per_sample):
            state.step(w, config.tick)
        out.append(w.positions.copy())
    return out


def with_speed(config: MobilityConfig, speed: float) -> MobilityConfig:
    return replace(config, v_low=(1 - SPEED_BAND) * speed, v_high=(1 + SPEED_BAND) * speed, mean_speed=speed)
