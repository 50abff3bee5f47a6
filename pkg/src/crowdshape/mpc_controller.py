"""Receding-horizon moment-tracking controller.

Every control period the controller sees only a :class:`ControllerObservation`
(raw position moments, mean follower velocity and the leaders' own states),
re-centres coordinates on the crowd's centre of mass, expands the leader
gains about that origin, solves the backward HJB recursion over ``q`` steps
and holds the resulting leader accelerations for one period.
"""
from dataclasses import dataclass, field
import logging
import time as _time

import numpy as np

from . import dynamics
from .exceptions import InvalidInputError, NumericalFailure
from .hjb_core import HjbLayout, HjbProblem, optimal_control
from .moments import MomentVector, central_from_raw, moment_count, moment_indices, raw_moments, shift_frame
from .shape_signals import signal_at
from .interaction_approx import taylor_coefficients_batch

logger = logging.getLogger(__name__)

__all__ = [
    "ControllerObservation",
    "ControlCommand",
    "Frame",
    "TrajectoryRecord",
    "observe",
    "build_problem",
    "controller_step",
    "weighted_errors",
    "run_closed_loop",
]


@dataclass(frozen=True)
class ControllerObservation:
    """Everything the controller is allowed to know about the crowd."""

    time: float
    moments: MomentVector
    dot_m1: np.ndarray
    leader_pos: np.ndarray
    leader_vel: np.ndarray

    @property
    def n_leaders(self):
        return self.leader_pos.shape[0]

    @property
    def size(self):
        """Number of scalars carried."""
        return self.moments.values.size + 2 + self.leader_pos.size + self.leader_vel.size

    def translated(self, offset):
        off = np.asarray(offset, dtype=float)
        shifted = shift_frame(self.moments, -off)
        moved = MomentVector(shifted.order, shifted.values, self.moments.frame_origin)
        return ControllerObservation(self.time, moved, self.dot_m1, self.leader_pos + off, self.leader_vel)


@dataclass(frozen=True)
class ControlCommand:
    controls: np.ndarray
    valid_from: float
    hold: float
    info: dict = field(default_factory=dict, compare=False)


def observe(s, m):
    """Measurement channel: moments and mean velocity of the followers, leader states verbatim."""
    return ControllerObservation(
        time=float(s.time),
        moments=raw_moments(s.follower_pos, m),
        dot_m1=s.follower_vel.mean(axis=0),
        leader_pos=s.leader_pos.copy(),
        leader_vel=s.leader_vel.copy(),
    )


def _clamp_radius(positions, radius):
    # radial projection onto the circle of given radius for points inside it
    pos = np.array(positions, dtype=float)
    d = np.linalg.norm(pos, axis=1)
    inside = d < radius
    if np.any(inside):
        unit = np.where(d[inside, None] > 0, pos[inside] / np.where(d[inside, None] > 0, d[inside, None], 1.0), [1.0, 0.0])
        pos[inside] = radius * (1 + 1e-9) * unit
    return pos


def build_problem(obs, schedule, model, weights, horizon, near_leader="clamp"):
    """Assemble the solver problem and flat state in the centre-of-mass frame.

    In that frame the order-1 moments are zero and the higher orders are the
    central moments. Order-1 targets are the path centre expressed in the
    same frame, so their error equals the raw centre-of-mass error; targets
    of order two and up are centred-square moments.

    A leader closer to the centre of mass than the expansion stencil reaches
    makes the gain expansion ill-conditioned. With ``near_leader="clamp"``
    such a leader is expanded as if it sat on the stencil radius in the same
    direction; ``"raise"`` propagates the error instead.
    """
    m = obs.moments.order
    if weights.running.size != moment_count(m):
        raise InvalidInputError(f"weights are for a different moment order than the observation (m = {m})")
    central = central_from_raw(obs.moments)
    origin = obs.moments.frame_origin + central.mean
    layout = HjbLayout(m, obs.n_leaders)
    zl = obs.leader_pos - central.mean
    x = np.concatenate([central.values, obs.dot_m1, zl.ravel(), obs.leader_vel.ravel()])
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("observation has non-finite entries")

    def signal(t):
        ref = signal_at(schedule, t, m)
        return ref.targets(origin), ref.center_rate

    degree = m - 1
    h = getattr(horizon, "taylor_step", 0.5)

    radius = (degree + 1) * h

    def coefficients(j, positions):
        if near_leader == "clamp":
            positions = _clamp_radius(positions, radius)
        a = taylor_coefficients_batch(model.g1_field, positions, degree, h)
        b = taylor_coefficients_batch(model.g2_field, positions, degree, h)
        return a, b

    problem = HjbProblem(layout, weights, horizon, obs.time, signal, coefficients, degree)
    return problem, x, origin


def controller_step(obs, schedule, model, weights, horizon, near_leader="clamp"):
    """One MPC iteration: returns a :class:`ControlCommand` held for ``horizon.dt``."""
    if not isinstance(obs, ControllerObservation):
        raise InvalidInputError("controller_step takes a ControllerObservation")
    t0 = _time.perf_counter()
    problem, x, origin = build_problem(obs, schedule, model, weights, horizon, near_leader)
    controls, grad, stats = optimal_control(x, problem, return_stats=True)
    info = {
        "frame_origin": origin.tolist(),
        "gradient": grad.tolist(),
        "stats": stats.as_dict(),
        "seconds": _time.perf_counter() - t0,
    }
    return ControlCommand(controls, obs.time, horizon.dt, info)


def weighted_errors(state, schedule, weights_running, m):
    """``c_ab (M_ab - M^d_ab)**2`` per stored index: raw centre vs path, central vs centred square."""
    ref = signal_at(schedule, state.time, m)
    central = central_from_raw(raw_moments(state.follower_pos, m))
    measured = central.values.copy()
    measured[0:2] = central.mean
    targets = ref.targets((0.0, 0.0))
    return np.asarray(weights_running) * (measured - targets) ** 2


@dataclass
class Frame:
    time: float
    state: object
    observation: ControllerObservation
    controls: np.ndarray
    reference: object
    errors: np.ndarray


@dataclass
class TrajectoryRecord:
    m: int
    frames: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    solver_stats: list = field(default_factory=list)

    @property
    def times(self):
        return np.array([f.time for f in self.frames])

    @property
    def error_matrix(self):
        return np.array([f.errors for f in self.frames])

    @property
    def indices(self):
        return moment_indices(self.m)


def run_closed_loop(
    initial,
    schedule,
    model,
    obstacles,
    weights,
    horizon,
    duration,
    dt_sim,
    hold_periods=1,
    progress=None,
    near_leader="clamp",
):
    """Alternate controller steps (every ``hold_periods * dt``) with dynamics sub-steps.

    One frame is recorded per control period, including the initial state,
    so a run of length ``duration`` has ``duration / dt + 1`` frames. On an
    integration or solver blowup the partial record is attached to the
    raised exception as ``record``.
    """
    dt = horizon.dt
    n_periods = _ratio(duration, dt, "duration", "dt")
    substeps = _ratio(dt, dt_sim, "dt", "dt_sim")
    if n_periods < 0:
        raise InvalidInputError("duration must be non-negative")
    m = weights.running.size
    order = 1
    while moment_count(order) < m:
        order += 1
    record = TrajectoryRecord(order)
    state = initial.copy()
    start = float(initial.time)
    command = None
    for k in range(n_periods + 1):
        obs = observe(state, order)
        ref = signal_at(schedule, state.time, order)
        errors = weighted_errors(state, schedule, weights.running, order)
        controls = None
        if k < n_periods:
            try:
                if command is None or k % hold_periods == 0:
                    command = controller_step(obs, schedule, model, weights, horizon, near_leader)
                    record.timings.append(command.info["seconds"])
                    record.solver_stats.append(command.info["stats"])
            except NumericalFailure as exc:
                record.frames.append(Frame(state.time, state.copy(), obs, None, ref, errors))
                exc.record = record
                raise
            controls = np.array(command.controls)
        record.frames.append(Frame(state.time, state.copy(), obs, controls, ref, errors))
        if k == n_periods:
            break
        try:
            for i in range(substeps):
                state = dynamics.step(state, controls, dt_sim, model, obstacles, weights.u_max)
                # pin the clock to the grid to avoid drift from repeated additions
                state.time = start + k * dt + (i + 1) * dt_sim
        except NumericalFailure as exc:
            exc.record = record
            raise
        state.time = start + (k + 1) * dt
        if progress is not None:
            progress(k + 1, n_periods)
    return record


def _ratio(a, b, name_a, name_b):
    r = a / b
    k = int(round(r))
    if abs(r - k) > 1e-6:
        raise InvalidInputError(f"{name_a} = {a} is not a multiple of {name_b} = {b}")
    return k
