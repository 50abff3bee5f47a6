"""Ground-truth leader/follower dynamics.

Followers feel every leader through ``g = g1(d) (z_l - z_i) + g2(d) (v_l - v_i)``,
every other follower through the pairwise repulsion ``f``, linear damping
``-p v`` and, optionally, circular obstacles. Leaders are double integrators
with damping driven by a bounded acceleration input. All agents have unit
mass.
"""
from dataclasses import dataclass, field, replace
import logging

import numpy as np

from .exceptions import ContractViolationError, IntegrationBlowupError, InvalidInputError

logger = logging.getLogger(__name__)

__all__ = [
    "CrowdState",
    "InteractionModel",
    "Obstacle",
    "standard_g1",
    "standard_g2",
    "standard_f_kernel",
    "standard_model",
    "pair_force",
    "leader_force",
    "obstacle_force",
    "follower_accel",
    "leader_accel",
    "follower_accelerations",
    "leader_accelerations",
    "step",
]

# relative slack on the control bound, so that -u_max * g/|g| passes
_U_SLACK = 1e-9


def standard_g1(d):
    """Position-consensus gain; negative (repulsive) below d of about 1."""
    d = np.asarray(d, dtype=float)
    return 0.3 + 20.0 * np.exp(-d / 10.0) - 20.0 / (d + 0.1)


def standard_g2(d):
    """Velocity-alignment gain, dominant at short range."""
    d = np.asarray(d, dtype=float)
    return 20.0 / (d + 0.1)


def standard_f_kernel(d):
    """Scalar multiplying ``z_i - z_k`` in the follower repulsion."""
    d = np.asarray(d, dtype=float)
    return 8.0 / d * np.exp(-0.2 * d)


@dataclass(frozen=True)
class InteractionModel:
    g1: object = standard_g1
    g2: object = standard_g2
    f_kernel: object = standard_f_kernel
    p: float = 0.5
    d_floor: float = 1e-6

    def __post_init__(self):
        if not self.p >= 0:
            raise InvalidInputError(f"damping p must be non-negative, got {self.p}")
        if not self.d_floor > 0:
            raise InvalidInputError(f"d_floor must be positive, got {self.d_floor}")

    def g1_field(self, z, zl):
        """``g1`` as a field of follower and leader position (broadcasting)."""
        return self.g1(np.linalg.norm(np.asarray(z) - np.asarray(zl), axis=-1))

    def g2_field(self, z, zl):
        return self.g2(np.linalg.norm(np.asarray(z) - np.asarray(zl), axis=-1))


def standard_model(p=0.5, d_floor=1e-6):
    return InteractionModel(standard_g1, standard_g2, standard_f_kernel, p=p, d_floor=d_floor)


@dataclass(frozen=True)
class Obstacle:
    center: tuple
    radius: float
    delta: float = 2.0
    kappa: float = 20.0

    def __post_init__(self):
        if not self.radius > 0 or not self.delta > 0 or not self.kappa >= 0:
            raise InvalidInputError(
                f"obstacle needs radius > 0, delta > 0, kappa >= 0 (got {self.radius}, {self.delta}, {self.kappa})"
            )
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass
class CrowdState:
    """Positions and velocities of all agents, arrays of shape (N, 2) and (M, 2)."""

    time: float
    follower_pos: np.ndarray
    follower_vel: np.ndarray
    leader_pos: np.ndarray
    leader_vel: np.ndarray = field(default=None)

    def __post_init__(self):
        self.follower_pos = np.array(self.follower_pos, dtype=float).reshape(-1, 2)
        self.follower_vel = np.array(self.follower_vel, dtype=float).reshape(-1, 2)
        self.leader_pos = np.array(self.leader_pos, dtype=float).reshape(-1, 2)
        if self.leader_vel is None:
            self.leader_vel = np.zeros_like(self.leader_pos)
        self.leader_vel = np.array(self.leader_vel, dtype=float).reshape(-1, 2)
        if self.follower_pos.shape != self.follower_vel.shape or self.follower_pos.shape[0] < 1:
            raise InvalidInputError("need N >= 1 followers with matching position/velocity arrays")
        if self.leader_pos.shape != self.leader_vel.shape or self.leader_pos.shape[0] < 1:
            raise InvalidInputError("need M >= 1 leaders with matching position/velocity arrays")

    @property
    def n_followers(self):
        return self.follower_pos.shape[0]

    @property
    def n_leaders(self):
        return self.leader_pos.shape[0]

    def copy(self):
        return replace(
            self,
            follower_pos=self.follower_pos.copy(),
            follower_vel=self.follower_vel.copy(),
            leader_pos=self.leader_pos.copy(),
            leader_vel=self.leader_vel.copy(),
        )

    def translated(self, offset):
        off = np.asarray(offset, dtype=float)
        out = self.copy()
        out.follower_pos = out.follower_pos + off
        out.leader_pos = out.leader_pos + off
        return out


def _pair_forces(diff, model):
    # diff[..., :] = z_i - z_k. Below d_floor the kernel is evaluated at d_floor
    # along the original direction; exact coincidence gives zero.
    d = np.linalg.norm(diff, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        clamped = np.maximum(d, model.d_floor)
        scale = model.f_kernel(clamped) * clamped / d
    scale = np.where(d > 0, scale, 0.0)
    return scale[..., None] * diff


def pair_force(z_i, z_k, model):
    """Repulsive force on follower ``i`` from follower ``k``."""
    diff = np.asarray(z_i, dtype=float) - np.asarray(z_k, dtype=float)
    return _pair_forces(diff, model)


def leader_force(z_i, v_i, z_l, v_l, model):
    """``g1(d) (z_l - z_i) + g2(d) (v_l - v_i)`` with ``d = |z_i - z_l|``."""
    z_i = np.asarray(z_i, dtype=float)
    z_l = np.asarray(z_l, dtype=float)
    d = np.linalg.norm(z_i - z_l, axis=-1)
    g1 = np.asarray(model.g1(d))[..., None]
    g2 = np.asarray(model.g2(d))[..., None]
    return g1 * (z_l - z_i) + g2 * (np.asarray(v_l, dtype=float) - np.asarray(v_i, dtype=float))


def obstacle_force(z, ob, d_floor=1e-6):
    """Push-out force of one obstacle; zero beyond ``radius + delta``.

    Inside the disk the gap ``d - r`` is clamped to ``d_floor`` and a warning
    is logged, since that means the scenario let an agent penetrate.
    """
    z = np.asarray(z, dtype=float)
    rel = z - np.asarray(ob.center)
    d = np.linalg.norm(rel, axis=-1)
    gap = d - ob.radius
    inside = gap <= d_floor
    if np.any(inside):
        logger.warning("agent inside obstacle at %s (gap %.3g)", ob.center, float(np.min(gap)))
    gain = ob.kappa / np.maximum(gap, d_floor)
    gain = np.where(d <= ob.radius + ob.delta, gain, 0.0)
    return gain[..., None] * rel


def _obstacle_sum(z, obstacles, d_floor):
    total = np.zeros_like(z)
    for ob in obstacles or ():
        total += obstacle_force(z, ob, d_floor)
    return total


def follower_accelerations(s, model, obstacles=()):
    """Accelerations of all followers, shape (N, 2)."""
    z, v = s.follower_pos, s.follower_vel
    acc = leader_force(z[:, None, :], v[:, None, :], s.leader_pos[None], s.leader_vel[None], model).sum(axis=1)
    pair = _pair_forces(z[:, None, :] - z[None, :, :], model)
    acc += pair.sum(axis=1)
    acc -= model.p * v
    acc += _obstacle_sum(z, obstacles, model.d_floor)
    return acc


def follower_accel(i, s, model, obstacles=()):
    """Acceleration of follower ``i``."""
    if not 0 <= i < s.n_followers:
        raise InvalidInputError(f"follower index {i} out of range")
    z_i, v_i = s.follower_pos[i], s.follower_vel[i]
    acc = leader_force(z_i[None], v_i[None], s.leader_pos, s.leader_vel, model).sum(axis=0)
    others = np.delete(s.follower_pos, i, axis=0)
    acc += _pair_forces(z_i[None] - others, model).sum(axis=0)
    acc -= model.p * v_i
    acc += _obstacle_sum(z_i[None], obstacles, model.d_floor)[0]
    return acc


def _check_controls(controls, n_leaders, u_max):
    u = np.asarray(controls, dtype=float).reshape(-1, 2)
    if u.shape[0] != n_leaders:
        raise InvalidInputError(f"expected {n_leaders} controls, got {u.shape[0]}")
    if u_max is not None:
        norms = np.linalg.norm(u, axis=1)
        bad = np.flatnonzero(norms > u_max * (1 + _U_SLACK))
        if bad.size:
            j = int(bad[0])
            raise ContractViolationError(f"leader {j}: |u| = {norms[j]:.6g} exceeds u_max = {u_max}")
    return u


def leader_accelerations(controls, s, model, obstacles=(), u_max=None):
    u = _check_controls(controls, s.n_leaders, u_max)
    return u - model.p * s.leader_vel + _obstacle_sum(s.leader_pos, obstacles, model.d_floor)


def leader_accel(j, u_j, s, model, obstacles=(), u_max=None):
    """``u_j - p v_lj`` plus obstacle forces on leader ``j``."""
    u = np.asarray(u_j, dtype=float).reshape(2)
    if u_max is not None and np.linalg.norm(u) > u_max * (1 + _U_SLACK):
        raise ContractViolationError(f"leader {j}: |u| = {np.linalg.norm(u):.6g} exceeds u_max = {u_max}")
    zl = s.leader_pos[j]
    return u - model.p * s.leader_vel[j] + _obstacle_sum(zl[None], obstacles, model.d_floor)[0]


def step(s, controls, dt_sim, model, obstacles=(), u_max=None):
    """One semi-implicit Euler step: velocities first, then positions with the new velocities."""
    if not dt_sim > 0:
        raise InvalidInputError(f"dt_sim must be positive, got {dt_sim}")
    a_f = follower_accelerations(s, model, obstacles)
    a_l = leader_accelerations(controls, s, model, obstacles, u_max)
    fv = s.follower_vel + dt_sim * a_f
    lv = s.leader_vel + dt_sim * a_l
    fz = s.follower_pos + dt_sim * fv
    lz = s.leader_pos + dt_sim * lv
    for name, arr in (("follower", np.hstack([fz, fv])), ("leader", np.hstack([lz, lv]))):
        bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
        if bad.size:
            raise IntegrationBlowupError(f"non-finite state for {name} {int(bad[0])} at t = {s.time + dt_sim:.6g}")
    return CrowdState(s.time + dt_sim, fz, fv, lz, lv)
