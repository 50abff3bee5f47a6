"""Backward finite-difference evaluation of the moment-space HJB equation.

The cost-to-go ``J(t, x)`` over the prediction window ``[tau, tau + q dt]`` is
a function of the flat state vector ``x`` laid out by :class:`HjbLayout`::

    [ M_ab (graded lex, 1 <= a+b <= m) | dM10, dM01 | z_l (M x 2) | v_l (M x 2) ]

At the window end it equals the terminal cost. One level earlier it is
obtained by one explicit backward step,

    J(t, x) = J(t + dt, x) + dt * H(t + dt, x, grad J(t + dt, x)),

where every spatial partial is a central difference of ``J(t + dt, .)`` at
``x +- dxi_k e_k``. Unrolled, this is a tree with ``2D + 1`` children per
node. Nodes are points of the integer lattice ``x + n * dxi`` so identical
branches are evaluated once: each level is a deduplicated set of lattice
offsets, evaluated in one vectorised batch.
"""
from dataclasses import dataclass, field
from functools import cached_property
import logging
import time as _time

import numpy as np

from .exceptions import InvalidInputError, SolverBlowupError
from .moments import full_index, moment_count, moment_indices
from .interaction_approx import coefficient_count, position_coupling_term, velocity_weight_sum

logger = logging.getLogger(__name__)

__all__ = [
    "HjbLayout",
    "HjbPoint",
    "CostWeights",
    "HorizonConfig",
    "standard_weights",
    "default_dxi",
    "running_cost",
    "terminal_cost",
    "hjb_rhs",
    "HjbProblem",
    "SolveStats",
    "j_value",
    "optimal_control",
]


class HjbLayout:
    """Index bookkeeping for the flat HJB state of order ``m`` with ``M`` leaders."""

    def __init__(self, m, n_leaders):
        if m < 1 or n_leaders < 1:
            raise InvalidInputError("need m >= 1 and at least one leader")
        self.m = int(m)
        self.n_leaders = int(n_leaders)
        self.n_moments = moment_count(self.m)
        nm = self.n_moments
        self.moments = slice(0, nm)
        self.dot_m1 = slice(nm, nm + 2)
        self.leader_pos = slice(nm + 2, nm + 2 + 2 * self.n_leaders)
        self.leader_vel = slice(nm + 2 + 2 * self.n_leaders, nm + 2 + 4 * self.n_leaders)
        self.dim = nm + 2 + 4 * self.n_leaders

    def __eq__(self, other):
        return isinstance(other, HjbLayout) and (self.m, self.n_leaders) == (other.m, other.n_leaders)

    def __hash__(self):
        return hash((self.m, self.n_leaders))

    def vel_columns(self, j):
        start = self.leader_vel.start + 2 * j
        return start, start + 1

    def pos_columns(self, j):
        start = self.leader_pos.start + 2 * j
        return start, start + 1

    @cached_property
    def names(self):
        out = [f"M{a}{b}" for a, b in moment_indices(self.m)]
        out += ["dM10", "dM01"]
        out += [f"zl{j}_{c}" for j in range(self.n_leaders) for c in "xy"]
        out += [f"vl{j}_{c}" for j in range(self.n_leaders) for c in "xy"]
        return tuple(out)

    @cached_property
    def drift_plan(self):
        # for each stored (a, b): coefficient a with full index of (a-1, b), and b with (a, b-1)
        rows = []
        for a, b in moment_indices(self.m):
            ia = full_index(a - 1, b) if a > 0 else 0
            ib = full_index(a, b - 1) if b > 0 else 0
            rows.append((a, ia, b, ib))
        arr = np.array(rows)
        return arr[:, 0].astype(float), arr[:, 1], arr[:, 2].astype(float), arr[:, 3]


@dataclass
class HjbPoint:
    """Structured view of one HJB state."""

    moments: np.ndarray
    dot_m1: np.ndarray
    leader_pos: np.ndarray
    leader_vel: np.ndarray

    def __post_init__(self):
        self.moments = np.asarray(self.moments, dtype=float).reshape(-1)
        self.dot_m1 = np.asarray(self.dot_m1, dtype=float).reshape(2)
        self.leader_pos = np.asarray(self.leader_pos, dtype=float).reshape(-1, 2)
        self.leader_vel = np.asarray(self.leader_vel, dtype=float).reshape(-1, 2)
        if self.leader_pos.shape != self.leader_vel.shape:
            raise InvalidInputError("leader position and velocity counts differ")

    @property
    def layout(self):
        nm = self.moments.size
        m = 1
        while moment_count(m) < nm:
            m += 1
        if moment_count(m) != nm:
            raise InvalidInputError(f"{nm} is not a valid moment-vector length")
        return HjbLayout(m, self.leader_pos.shape[0])

    def flat(self):
        x = np.concatenate([self.moments, self.dot_m1, self.leader_pos.ravel(), self.leader_vel.ravel()])
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("HJB point has non-finite entries")
        return x

    @classmethod
    def from_flat(cls, x, layout):
        x = np.asarray(x, dtype=float)
        return cls(
            x[layout.moments],
            x[layout.dot_m1],
            x[layout.leader_pos].reshape(-1, 2),
            x[layout.leader_vel].reshape(-1, 2),
        )


def standard_weights(m, first=1000.0):
    """Per-order weights: ``first`` at order 1, ``10**(2(2-k))`` at order ``k > 1``."""
    return np.array([first if a + b == 1 else 10.0 ** (2 * (2 - (a + b))) for a, b in moment_indices(m)])


@dataclass
class CostWeights:
    running: np.ndarray
    terminal: np.ndarray
    c0: float
    u_max: float
    p: float = 0.5

    def __post_init__(self):
        self.running = np.asarray(self.running, dtype=float).reshape(-1)
        self.terminal = np.asarray(self.terminal, dtype=float).reshape(-1)
        if self.running.shape != self.terminal.shape:
            raise InvalidInputError("running and terminal weight tables differ in length")
        if np.any(self.running < 0) or np.any(self.terminal < 0) or self.c0 < 0:
            raise InvalidInputError("cost weights must be non-negative")
        if not self.u_max > 0:
            raise InvalidInputError(f"u_max must be positive, got {self.u_max}")
        if not self.p >= 0:
            raise InvalidInputError(f"damping p must be non-negative, got {self.p}")

    @classmethod
    def standard(cls, m, c0=10.0, u_max=5.0, p=0.5):
        w = standard_weights(m)
        return cls(w, w.copy(), c0, u_max, p)

    def scaled(self, factor):
        return CostWeights(self.running * factor, self.terminal * factor, self.c0 * factor, self.u_max, self.p)


def default_dxi(m, n_leaders, order1=0.5, leader_pos=0.5, leader_vel=0.2, dot_m1=0.2, growth=5.0):
    """Per-coordinate differencing steps; order-k moments use ``order1 * growth**(k-1)``."""
    layout = HjbLayout(m, n_leaders)
    dxi = np.empty(layout.dim)
    dxi[layout.moments] = [order1 * growth ** (a + b - 1) for a, b in moment_indices(m)]
    dxi[layout.dot_m1] = dot_m1
    dxi[layout.leader_pos] = leader_pos
    dxi[layout.leader_vel] = leader_vel
    return dxi


@dataclass
class HorizonConfig:
    q: int = 3
    dt: float = 0.1
    dxi: np.ndarray = None
    grad_eps: float = None
    chunk: int = 200_000

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise InvalidInputError(f"q must be a positive integer, got {self.q}")
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if self.dxi is not None:
            self.dxi = np.asarray(self.dxi, dtype=float).reshape(-1)
            if np.any(~(self.dxi > 0)):
                raise InvalidInputError("all differencing steps must be positive")

    def steps_for(self, layout):
        if self.dxi is None:
            return default_dxi(layout.m, layout.n_leaders)
        if self.dxi.size != layout.dim:
            raise InvalidInputError(f"dxi has {self.dxi.size} entries, state has {layout.dim}")
        return self.dxi

    def eps_for(self, u_max):
        return 1e-8 * u_max if self.grad_eps is None else float(self.grad_eps)


def running_cost(moments, targets, weights):
    """``sum c_ab (M_ab - M^d_ab)**2``; batched over leading axes of ``moments``."""
    w = weights.running if isinstance(weights, CostWeights) else np.asarray(weights, dtype=float)
    m = getattr(moments, "values", moments)
    err = np.asarray(m, dtype=float) - np.asarray(targets, dtype=float)
    return np.sum(w * err * err, axis=-1)


def terminal_cost(x, targets, rate_target, weights, layout):
    """``c0 |dM1 - dM1^d|**2 + sum cbar_ab (M_ab - M^d_ab)**2`` for flat state(s) ``x``."""
    x = np.asarray(x, dtype=float)
    err = x[..., layout.moments] - targets
    rate = x[..., layout.dot_m1] - rate_target
    return weights.c0 * np.sum(rate * rate, axis=-1) + np.sum(weights.terminal * err * err, axis=-1)


def hjb_rhs(x, grads, alpha, beta, targets, weights, layout):
    """Right-hand side ``H`` of ``-dJ/dt = H`` at flat state(s) ``x``.

    ``grads`` holds dJ/dx with the same shape as ``x``; ``alpha`` and ``beta``
    have shape (..., M, n_coef) (per leader, graded lex including ``(0, 0)``).
    Returns the running cost, leader transport and damping, the per-leader
    norm term ``-u_max sum_j |dJ/dv_lj|``, the moment drift under the mean
    velocity, and the mean-velocity coupling through the expanded gains.
    """
    x = np.asarray(x, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if x.shape[-1] != layout.dim or grads.shape != x.shape:
        raise InvalidInputError(f"state/gradient shapes {x.shape}/{grads.shape} do not match dimension {layout.dim}")
    M = layout.n_leaders
    mom = x[..., layout.moments]
    dm = x[..., layout.dot_m1]
    zl = x[..., layout.leader_pos].reshape(x.shape[:-1] + (M, 2))
    vl = x[..., layout.leader_vel].reshape(x.shape[:-1] + (M, 2))
    g_mom = grads[..., layout.moments]
    g_dm = grads[..., layout.dot_m1]
    g_zl = grads[..., layout.leader_pos].reshape(zl.shape)
    g_vl = grads[..., layout.leader_vel].reshape(vl.shape)
    p = weights.p

    total = running_cost(mom, targets, weights)
    total = total + np.sum(g_zl * vl, axis=(-1, -2))
    total = total - p * np.sum(g_vl * vl, axis=(-1, -2))
    total = total - weights.u_max * np.sum(np.linalg.norm(g_vl, axis=-1), axis=-1)

    full = np.concatenate([np.ones(mom.shape[:-1] + (1,)), mom], axis=-1)
    ca, ia, cb, ib = layout.drift_plan
    drift = g_mom * (ca * full[..., ia] * dm[..., :1] + cb * full[..., ib] * dm[..., 1:])
    total = total + np.sum(drift, axis=-1)

    full_b = full[..., None, :]
    pos = position_coupling_term(alpha, full_b[..., 1:], zl)
    vel = velocity_weight_sum(beta, full_b[..., 1:])
    accel = np.sum(pos + vel[..., None] * (vl - dm[..., None, :]), axis=-2) - p * dm
    total = total + np.sum(g_dm * accel, axis=-1)
    return total


@dataclass
class SolveStats:
    """Work done by one solve: deduplicated internal nodes per level and leaf count."""

    level_sizes: list = field(default_factory=list)
    terminal_evaluations: int = 0
    coefficient_evaluations: int = 0
    seconds: float = 0.0

    @property
    def expanded_nodes(self):
        return int(sum(self.level_sizes))

    def as_dict(self):
        return {
            "level_sizes": [int(v) for v in self.level_sizes],
            "expanded_nodes": self.expanded_nodes,
            "terminal_evaluations": int(self.terminal_evaluations),
            "coefficient_evaluations": int(self.coefficient_evaluations),
            "seconds": self.seconds,
        }


class HjbProblem:
    """Everything a backward solve needs besides the state.

    Parameters
    ----------
    layout : HjbLayout
    weights : CostWeights
    horizon : HorizonConfig
    tau : float
        Absolute time of the window start.
    signal : callable
        ``signal(t) -> (targets, rate_target)`` in the solver's frame.
    coefficients : callable
        ``coefficients(j, leader_positions) -> (alpha, beta)`` for leader ``j``
        at an array of positions of shape (K, 2); returns arrays (K, n_coef).
    degree : int
        Polynomial degree of the coefficients (``m - 1``).
    """

    def __init__(self, layout, weights, horizon, tau, signal, coefficients, degree=None):
        self.layout = layout
        self.weights = weights
        self.horizon = horizon
        self.tau = float(tau)
        self.signal = signal
        self.coefficients = coefficients
        self.degree = layout.m - 1 if degree is None else int(degree)
        if weights.running.size != layout.n_moments:
            raise InvalidInputError("weight table does not match moment order")
        self.dxi = horizon.steps_for(layout)
        self._signal_cache = {}

    def time_of(self, level):
        return self.tau + level * self.horizon.dt

    def signal_at_level(self, level):
        hit = self._signal_cache.get(level)
        if hit is None:
            targets, rate = self.signal(self.time_of(level))
            hit = (np.asarray(targets, dtype=float), np.asarray(rate, dtype=float))
            self._signal_cache[level] = hit
        return hit

    @cached_property
    def stencil(self):
        """Integer displacements: centre, then ``+e_k``, then ``-e_k``."""
        D = self.layout.dim
        eye = np.eye(D, dtype=np.int16)
        return np.concatenate([np.zeros((1, D), dtype=np.int16), eye, -eye])

    def points(self, base, offsets):
        return base + offsets * self.dxi

    def _coefficients(self, base, offsets, cache, stats):
        # alpha/beta for every row, keyed on each leader's integer offset
        M = self.layout.n_leaders
        n = offsets.shape[0]
        ncoef = coefficient_count(self.degree)
        alpha = np.empty((n, M, ncoef))
        beta = np.empty((n, M, ncoef))
        for j in range(M):
            cols = list(self.layout.pos_columns(j))
            keys, inverse = np.unique(offsets[:, cols], axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            missing = [i for i, k in enumerate(map(tuple, keys)) if (j, k) not in cache]
            if missing:
                pos = base[cols] + keys[missing] * self.dxi[cols]
                a, b = self.coefficients(j, pos)
                stats.coefficient_evaluations += len(missing)
                for i, ai, bi in zip(missing, a, b):
                    cache[(j, tuple(keys[i]))] = (ai, bi)
            ka = np.stack([cache[(j, tuple(k))][0] for k in keys])
            kb = np.stack([cache[(j, tuple(k))][1] for k in keys])
            alpha[:, j] = ka[inverse]
            beta[:, j] = kb[inverse]
        return alpha, beta

    def _backward(self, base, offsets, child_values, level, cache, stats):
        # child_values: (n, 2D+1) values of J at level+1 on each row's stencil
        D = self.layout.dim
        plus, minus = child_values[:, 1 : D + 1], child_values[:, D + 1 :]
        grads = (plus - minus) / (2.0 * self.dxi)
        x = self.points(base, offsets)
        alpha, beta = self._coefficients(base, offsets, cache, stats)
        targets, _ = self.signal_at_level(level + 1)
        rhs = hjb_rhs(x, grads, alpha, beta, targets, self.weights, self.layout)
        out = child_values[:, 0] + self.horizon.dt * rhs
        bad = np.flatnonzero(~np.isfinite(out))
        if bad.size:
            row = int(bad[0])
            coord = np.flatnonzero(~np.isfinite(grads[row]))
            where = self.layout.names[int(coord[0])] if coord.size else "value"
            raise SolverBlowupError(
                f"non-finite cost-to-go at depth {level} (t = {self.time_of(level):.6g}), coordinate {where}"
            )
        return out

    def solve(self, x, start_offsets, start_level=0):
        """Cost-to-go at ``x + start_offsets * dxi`` for window level ``start_level``.

        Returns ``(values, stats)``.
        """
        t0 = _time.perf_counter()
        layout = self.layout
        q = self.horizon.q
        if not 0 <= start_level <= q:
            raise InvalidInputError(f"level {start_level} outside the window 0..{q}")
        base = np.asarray(x, dtype=float).reshape(-1)
        if base.size != layout.dim:
            raise InvalidInputError(f"state has {base.size} entries, layout expects {layout.dim}")
        if not np.all(np.isfinite(base)):
            raise InvalidInputError("state has non-finite entries")
        offsets0 = np.asarray(start_offsets, dtype=np.int16).reshape(-1, layout.dim)
        stats = SolveStats()
        targets_T, rate_T = self.signal_at_level(q)

        def terminal(off):
            return terminal_cost(self.points(base, off), targets_T, rate_T, self.weights, layout)

        if start_level == q:
            stats.terminal_evaluations = offsets0.shape[0]
            stats.seconds = _time.perf_counter() - t0
            return terminal(offsets0), stats

        stencil = self.stencil
        width = stencil.shape[0]
        # forward pass: deduplicated offset sets for levels start..q-1
        sets = [offsets0]
        children = []
        for _ in range(start_level + 1, q):
            cur = sets[-1]
            expanded = (cur[:, None, :] + stencil[None, :, :]).reshape(-1, layout.dim)
            uniq, inverse = np.unique(expanded, axis=0, return_inverse=True)
            children.append(inverse.reshape(cur.shape[0], width))
            sets.append(uniq)
        stats.level_sizes = [s.shape[0] for s in sets]

        cache = {}
        # deepest internal level: children are terminal leaves
        deepest = sets[-1]
        level = q - 1
        values = np.empty(deepest.shape[0])
        chunk = max(1, self.horizon.chunk // width)
        for lo in range(0, deepest.shape[0], chunk):
            off = deepest[lo : lo + chunk]
            leaf = terminal((off[:, None, :] + stencil[None]).reshape(-1, layout.dim)).reshape(-1, width)
            values[lo : lo + chunk] = self._backward(base, off, leaf, level, cache, stats)
        stats.terminal_evaluations = deepest.shape[0] * width

        for depth in range(len(sets) - 2, -1, -1):
            level = start_level + depth
            values = self._backward(base, sets[depth], values[children[depth]], level, cache, stats)
        stats.seconds = _time.perf_counter() - t0
        return values, stats


def j_value(t, x, problem):
    """Cost-to-go at absolute time ``t`` (a grid time of the window) and flat state ``x``."""
    level = (float(t) - problem.tau) / problem.horizon.dt
    k = int(round(level))
    if abs(level - k) > 1e-9 or not 0 <= k <= problem.horizon.q:
        raise InvalidInputError(f"t = {t} is not on the backward grid of the window starting at {problem.tau}")
    values, _ = problem.solve(x, np.zeros((1, problem.layout.dim), dtype=np.int16), start_level=k)
    return float(values[0])


def optimal_control(x, problem, return_stats=False):
    """Per-leader bounded controls ``-u_max * g_j / |g_j|`` with ``g_j = dJ/dv_lj`` at the window start.

    ``g_j`` is a central difference of the cost-to-go on the two velocity
    components of leader ``j``; leaders whose gradient norm falls below the
    threshold get a zero control.
    """
    layout = problem.layout
    M = layout.n_leaders
    cols = np.arange(layout.leader_vel.start, layout.leader_vel.stop)
    offsets = np.zeros((2 * cols.size, layout.dim), dtype=np.int16)
    offsets[np.arange(cols.size), cols] = 1
    offsets[cols.size + np.arange(cols.size), cols] = -1
    values, stats = problem.solve(x, offsets, start_level=0)
    h = problem.dxi[cols]
    grad = ((values[: cols.size] - values[cols.size :]) / (2.0 * h)).reshape(M, 2)
    u_max = problem.weights.u_max
    eps = problem.horizon.eps_for(u_max)
    norms = np.linalg.norm(grad, axis=1)
    controls = np.zeros((M, 2))
    active = norms >= eps
    controls[active] = -u_max * grad[active] / norms[active, None]
    if return_stats:
        return controls, grad, stats
    return controls
