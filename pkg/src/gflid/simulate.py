"""Fixed-step RK4 integration under a piecewise-constant reference schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import INPUT_NAMES, N_STATES
from .params import ModelParams


class SimulationDiverged(RuntimeError):
    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite state at step {step} (t = {time:.6g} s); "
                         "the gain set is unstable")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class ReferenceSchedule:
    initial: tuple[float, float] = (0.5, 0.0)
    events: tuple[tuple[float, str, float], ...] = ((0.3, "p_ref", 0.7), (0.6, "q_ref", 0.2))

    def __post_init__(self):
        object.__setattr__(self, "initial", tuple(float(v) for v in self.initial))
        evs = tuple((float(t), str(f), float(v)) for t, f, v in self.events)
        object.__setattr__(self, "events", evs)
        if len(self.initial) != 2 or not all(math.isfinite(v) for v in self.initial):
            raise ValueError("schedule.initial must be two finite numbers (p_ref, q_ref)")
        last = -math.inf
        for t, name, value in evs:
            if name not in INPUT_NAMES:
                raise ValueError(f"schedule event field must be p_ref or q_ref, got {name!r}")
            if t < 0 or t <= last:
                raise ValueError("schedule event times must be >= 0 and strictly increasing")
            if not math.isfinite(value):
                raise ValueError("schedule event value must be finite")
            last = t

    def to_dict(self) -> dict:
        return {"initial": list(self.initial),
                "events": [{"time": t, "field": f, "value": v} for t, f, v in self.events]}

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceSchedule":
        unknown = set(d) - {"initial", "events"}
        if unknown:
            raise ValueError(f"unknown schedule keys: {', '.join(sorted(unknown))}")
        events = []
        for ev in d.get("events", []):
            if isinstance(ev, dict):
                events.append((ev["time"], ev["field"], ev["value"]))
            else:
                events.append(tuple(ev))
        return cls(initial=tuple(d.get("initial", (0.5, 0.0))), events=tuple(events))


def inputs_at(schedule: ReferenceSchedule, t: float) -> np.ndarray:
    """References in force at time t (an event applies from its own time on)."""
    u = dict(zip(INPUT_NAMES, schedule.initial))
    for te, name, value in schedule.events:
        if te <= t:
            u[name] = value
        else:
            break
    return np.array([u[n] for n in INPUT_NAMES])


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    derivs: np.ndarray
    algebraic: model.AlgebraicOutputs
    dt: float
    event_steps: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.times)


def _input_table(schedule: ReferenceSchedule, dt: float, n: int):
    """Per-step inputs with events snapped to the nearest grid point."""
    u = np.empty((n + 1, 2))
    u[:] = schedule.initial
    steps = []
    for te, name, value in schedule.events:
        k = int(round(te / dt))
        if k > n:
            continue
        u[k:, INPUT_NAMES.index(name)] = value
        steps.append(k)
    return u, steps


def integrate(params: ModelParams, x0, schedule: ReferenceSchedule, dt: float,
              t_end: float, rhs=None) -> Trajectory:
    """Classic RK4 with the inputs held over each step.

    `rhs` may be given as f(x_list, u_list) -> sequence for test problems;
    by default the converter model is used.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if not t_end >= dt:
        raise ValueError("t_end must be >= dt")
    n = int(round(t_end / dt))
    x0 = np.asarray(x0, dtype=float)
    f = model.make_rhs_scalar(params) if rhs is None else rhs
    u_tab, ev_steps = _input_table(schedule, dt, n)

    dim = x0.size
    states = np.empty((n + 1, dim))
    states[0] = x0
    x = [float(v) for v in x0]
    rng = range(dim)
    h2, h6 = 0.5 * dt, dt / 6.0
    for k in range(n):
        u = u_tab[k].tolist()
        k1 = f(x, u)
        k2 = f([x[i] + h2 * k1[i] for i in rng], u)
        k3 = f([x[i] + h2 * k2[i] for i in rng], u)
        k4 = f([x[i] + dt * k3[i] for i in rng], u)
        x = [x[i] + h6 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]) for i in rng]
        if not all(math.isfinite(v) for v in x):
            raise SimulationDiverged(k + 1, (k + 1) * dt)
        states[k + 1] = x
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.all(np.isfinite(states), axis=1)))
        raise SimulationDiverged(bad, bad * dt)

    times = np.arange(n + 1) * dt
    if rhs is None:
        derivs = model.rhs(states, u_tab, params)
        alg = model.algebraic_outputs(states, u_tab, params)
    else:
        derivs = np.array([f(list(s), list(u)) for s, u in zip(states, u_tab)])
        alg = None
    if not np.all(np.isfinite(derivs)):
        bad = int(np.argmax(~np.all(np.isfinite(derivs), axis=1)))
        raise SimulationDiverged(bad, bad * dt)
    return Trajectory(times, states, u_tab, derivs, alg, dt, ev_steps)


def run_protocol(params: ModelParams, schedule: ReferenceSchedule | None = None,
                 dt: float = 2e-5, t_end: float = 1.0) -> Trajectory:
    """Start from the equilibrium at the initial references and integrate."""
    schedule = schedule or ReferenceSchedule()
    x0 = model.find_equilibrium(params, schedule.initial)
    return integrate(params, x0, schedule, dt, t_end)


__all__ = ["ReferenceSchedule", "Trajectory", "SimulationDiverged", "inputs_at",
           "integrate", "run_protocol", "N_STATES"]
