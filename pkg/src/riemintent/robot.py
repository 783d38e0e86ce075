"""Simulated assistive end-effector driven by ``xdot = A (x - x*)``."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_DT = 1.0 / 160.0


def _vec3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError("expected a 3-vector")
    return v


@dataclass(frozen=True)
class TargetMap:
    left_target: np.ndarray = field(default_factory=lambda: np.array([-0.3, 0.5, 0.1]))
    right_target: np.ndarray = field(default_factory=lambda: np.array([0.3, 0.5, 0.1]))
    home: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.3, 0.3]))

    def __post_init__(self):
        for name in ("left_target", "right_target", "home"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        if np.array_equal(self.left_target, self.right_target):
            raise ValueError("left and right targets must differ")


@dataclass(frozen=True)
class RobotState:
    x: np.ndarray
    x_star: np.ndarray
    A: np.ndarray = field(default_factory=lambda: -2.0 * np.eye(3))
    dt: float = DEFAULT_DT

    def __post_init__(self):
        object.__setattr__(self, "x", _vec3(self.x))
        object.__setattr__(self, "x_star", _vec3(self.x_star))
        a = np.asarray(self.A, dtype=float)
        if a.shape != (3, 3):
            raise ValueError("A must be 3x3")
        if np.max(np.linalg.eigvalsh((a + a.T) / 2.0)) >= 0:
            raise ValueError("A must be negative definite")
        if not 0.0 < self.dt <= 0.1:
            raise ValueError("dt must lie in (0, 0.1]")
        object.__setattr__(self, "A", a)

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.x - self.x_star))


def at_home(targets: TargetMap = TargetMap(), **kw) -> RobotState:
    return RobotState(targets.home, targets.home, **kw)


def set_target(state: RobotState, command: str, targets: TargetMap) -> RobotState:
    if command == "left":
        return replace(state, x_star=targets.left_target)
    if command == "right":
        return replace(state, x_star=targets.right_target)
    raise ValueError(f"unknown command {command!r}")


def step(state: RobotState) -> RobotState:
    """One explicit-Euler tick."""
    return replace(state, x=state.x + state.dt * (state.A @ (state.x - state.x_star)))


def simulate(state: RobotState, n_steps: int) -> list[RobotState]:
    out = [state]
    for _ in range(n_steps):
        state = step(state)
        out.append(state)
    return out


def telemetry(state: RobotState, t: float) -> str:
    return json.dumps({"t": t, "x": state.x.tolist(), "x_star": state.x_star.tolist(), "dist": state.distance})


def write_trajectory_csv(path, states, dt: float | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z", "tx", "ty", "tz", "dist"])
        for k, s in enumerate(states):
            w.writerow([k * (dt or s.dt), *s.x.tolist(), *s.x_star.tolist(), s.distance])
