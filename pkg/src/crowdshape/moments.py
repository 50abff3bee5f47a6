"""Moment algebra for finite planar point sets.

Moment vectors store the entries ``M_ab`` with ``1 <= a + b <= m`` in graded
lexicographic order::

    (1,0), (0,1), (2,0), (1,1), (0,2), (3,0), ...

so that every order-k block is contiguous. The order-0 moment is the constant
1 and is never stored. Position ``i`` of a stored vector corresponds to the
"full" index ``i + 1`` of :func:`full_index`, which does include ``(0, 0)``.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from .exceptions import InvalidInputError

__all__ = [
    "MomentVector",
    "CentralMomentVector",
    "moment_count",
    "moment_indices",
    "full_index",
    "stored_index",
    "raw_moments",
    "central_moments",
    "raw_from_central",
    "central_from_raw",
    "shift_frame",
    "shift_values",
]


def moment_count(m):
    """Number of stored entries for order ``m``: ``m(m+3)/2``."""
    return m * (m + 3) // 2


@lru_cache(maxsize=None)
def moment_indices(m, include_zero=False):
    """Graded-lex list of ``(a, b)`` pairs up to total order ``m``."""
    start = 0 if include_zero else 1
    return tuple((k - b, b) for k in range(start, m + 1) for b in range(k + 1))


def full_index(a, b):
    """Position of ``(a, b)`` in the graded-lex order that includes ``(0, 0)``."""
    k = a + b
    return k * (k + 1) // 2 + b


def stored_index(a, b):
    """Position of ``(a, b)`` in a stored moment vector (no ``(0, 0)``)."""
    if a + b < 1:
        raise InvalidInputError("M_00 is implicit and has no stored index")
    return full_index(a, b) - 1


def _as_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.size == 2:
        pts = pts.reshape(1, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInputError(f"points must have shape (N, 2), got {pts.shape}")
    if pts.shape[0] == 0:
        raise InvalidInputError("point set is empty")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("point coordinates must be finite")
    return pts


def _check_order(m):
    if int(m) != m or m < 1:
        raise InvalidInputError(f"moment order must be a positive integer, got {m!r}")
    return int(m)


@dataclass(frozen=True)
class MomentVector:
    """Raw moments of a point set, expressed in a frame with origin ``frame_origin``.

    ``frame_origin`` is the absolute position of the coordinate origin the
    values are expressed in.
    """

    order: int
    values: np.ndarray
    frame_origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        order = _check_order(self.order)
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != moment_count(order):
            raise InvalidInputError(
                f"order {order} needs {moment_count(order)} values, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("moment values must be finite")
        origin = np.array(self.frame_origin, dtype=float).reshape(2)
        values.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "frame_origin", origin)

    def __getitem__(self, ab):
        a, b = ab
        if a == 0 and b == 0:
            return 1.0
        return float(self.values[stored_index(a, b)])

    def as_dict(self):
        return {ab: float(v) for ab, v in zip(moment_indices(self.order), self.values)}


@dataclass(frozen=True)
class CentralMomentVector(MomentVector):
    """Moments about the mean; ``mean`` is expressed in ``frame_origin`` coordinates.

    The stored order-1 entries are identically zero.
    """

    mean: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        super().__post_init__()
        mean = np.array(self.mean, dtype=float).reshape(2)
        if not np.all(np.isfinite(mean)):
            raise InvalidInputError("mean must be finite")
        values = self.values.copy()
        values[:2] = 0.0
        values.setflags(write=False)
        mean.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mean", mean)


def _power_table(x, m):
    # (N, m+1) table of x**k, built by repeated products so that k=0 is exactly 1
    out = np.empty((x.shape[0], m + 1))
    out[:, 0] = 1.0
    for k in range(1, m + 1):
        out[:, k] = out[:, k - 1] * x
    return out


def _point_moments(pts, m):
    px = _power_table(pts[:, 0], m)
    py = _power_table(pts[:, 1], m)
    idx = moment_indices(m)
    a = np.array([ab[0] for ab in idx])
    b = np.array([ab[1] for ab in idx])
    return np.mean(px[:, a] * py[:, b], axis=0)


def raw_moments(points, m, frame_origin=(0.0, 0.0)):
    """Raw moments ``M_ab = mean(x**a * y**b)`` of ``points`` for ``a + b <= m``."""
    m = _check_order(m)
    pts = _as_points(points)
    return MomentVector(m, _point_moments(pts, m), frame_origin)


def central_moments(points, m, frame_origin=(0.0, 0.0)):
    """Moments of ``points`` about their mean."""
    m = _check_order(m)
    pts = _as_points(points)
    # same reduction as the raw order-1 entries, so the two agree bit for bit
    mean = _point_moments(pts, 1)
    return CentralMomentVector(m, _point_moments(pts - mean, m), frame_origin, mean=mean)


@lru_cache(maxsize=None)
def _shift_plan(m):
    # For every stored (a, b): list of (full index of (i, j), C(a,i) C(b,j), a-i, b-j)
    plan = []
    for a, b in moment_indices(m):
        terms = []
        for i in range(a + 1):
            for j in range(b + 1):
                terms.append((full_index(i, j), comb(a, i) * comb(b, j), a - i, b - j))
        plan.append(tuple(terms))
    return tuple(plan)


def shift_values(values, m, offset):
    """Binomial re-expansion of full moment values about ``offset``.

    ``values`` holds stored moments (without ``M_00``) in the current frame,
    possibly batched along leading axes; ``offset`` has shape (2,) or a
    matching batch shape (..., 2). Returns the moments of the same points
    with coordinates ``z + offset``.
    """
    values = np.asarray(values, dtype=float)
    off = np.asarray(offset, dtype=float)
    full = np.concatenate([np.ones(values.shape[:-1] + (1,)), values], axis=-1)
    ox, oy = off[..., 0], off[..., 1]
    powx = [np.ones_like(ox)]
    powy = [np.ones_like(oy)]
    for _ in range(m):
        powx.append(powx[-1] * ox)
        powy.append(powy[-1] * oy)
    out = np.empty(np.broadcast_shapes(values.shape, off.shape[:-1] + (values.shape[-1],)))
    for pos, terms in enumerate(_shift_plan(m)):
        acc = 0.0
        for fi, c, px, py in terms:
            acc = acc + c * powx[px] * powy[py] * full[..., fi]
        out[..., pos] = acc
    return out


def shift_frame(r, new_origin):
    """Re-express raw moments with coordinates ``z - new_origin``.

    ``new_origin`` is given in ``r``'s current coordinates; the returned
    vector's ``frame_origin`` is the corresponding absolute position.
    """
    origin = np.asarray(new_origin, dtype=float).reshape(2)
    values = shift_values(r.values, r.order, -origin)
    return MomentVector(r.order, values, r.frame_origin + origin)


def raw_from_central(c):
    """Raw moments in the frame where ``c.mean`` is expressed."""
    values = c.values.copy()
    values[:2] = 0.0
    raw = shift_values(values, c.order, c.mean)
    raw[0], raw[1] = c.mean
    return MomentVector(c.order, raw, c.frame_origin)


def central_from_raw(r):
    """Central moments and mean from raw moments."""
    mean = np.array([r.values[0], r.values[1]])
    centred = shift_values(r.values, r.order, -mean)
    return CentralMomentVector(r.order, centred, r.frame_origin, mean=mean)
