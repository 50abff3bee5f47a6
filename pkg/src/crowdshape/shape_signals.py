"""Desired moment signals generated by a moving, shrinking uniform square.

The reference follows the "path plus centred shape" convention: the
first-order targets are the square's centre along its path, while every
higher-order target is a moment of the same square centred on the origin.
The centred moments do not depend on where the crowd is, so they can be
tabulated ahead of time.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError
from .moments import MomentVector, moment_indices

__all__ = [
    "SquareKeyframe",
    "ShapeSchedule",
    "Reference",
    "square_raw_moments",
    "square_central_moments",
    "signal_at",
]


def _interval_moments(c, s, m):
    # mean of x**k over the interval [c - s/2, c + s/2], for k = 0..m
    lo, hi = c - s / 2.0, c + s / 2.0
    return np.array([(hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * s) for k in range(m + 1)])


def square_raw_moments(center, side, m):
    """Moments of the uniform density on an axis-aligned square.

    The density is separable, so ``M_ab = I_a(c_x) * I_b(c_y)`` where
    ``I_k(c)`` is the mean of ``x**k`` over ``[c - s/2, c + s/2]``.
    """
    side = float(side)
    if not side > 0:
        raise InvalidInputError(f"square side must be positive, got {side}")
    cx, cy = (float(v) for v in center)
    ix = _interval_moments(cx, side, m)
    iy = _interval_moments(cy, side, m)
    values = [ix[a] * iy[b] for a, b in moment_indices(m)]
    return MomentVector(m, values)


def square_central_moments(side, m):
    """Moments of the uniform square of the given side centred on the origin."""
    return square_raw_moments((0.0, 0.0), side, m)


@dataclass(frozen=True)
class SquareKeyframe:
    time: float
    center: tuple
    side: float


class ShapeSchedule:
    """Piecewise-linear keyframed square; values are clamped outside the keyframe span."""

    def __init__(self, keyframes):
        frames = [
            k if isinstance(k, SquareKeyframe) else SquareKeyframe(float(k["time"]), tuple(k["center"]), float(k["side"]))
            for k in keyframes
        ]
        if not frames:
            raise InvalidInputError("shape schedule needs at least one keyframe")
        times = np.array([f.time for f in frames], dtype=float)
        if np.any(np.diff(times) <= 0):
            raise InvalidInputError("keyframe times must be strictly increasing")
        sides = np.array([f.side for f in frames], dtype=float)
        if np.any(~(sides > 0)):
            raise InvalidInputError("keyframe sides must be positive")
        self.keyframes = tuple(frames)
        self._times = times
        self._centers = np.array([f.center for f in frames], dtype=float).reshape(-1, 2)
        self._sides = sides
        self._central_cache = {}

    def shifted(self, offset):
        """The same schedule translated by ``offset``."""
        off = np.asarray(offset, dtype=float)
        return ShapeSchedule(
            [SquareKeyframe(f.time, tuple(np.asarray(f.center, dtype=float) + off), f.side) for f in self.keyframes]
        )

    def to_json(self):
        return [{"time": f.time, "center": [float(c) for c in f.center], "side": f.side} for f in self.keyframes]

    def _segment(self, t):
        # index i such that times[i] <= t < times[i+1]; -1 before, len-1 after
        return int(np.searchsorted(self._times, t, side="right")) - 1

    def center(self, t):
        return np.array([np.interp(t, self._times, self._centers[:, d]) for d in range(2)])

    def side(self, t):
        return float(np.interp(t, self._times, self._sides))

    def center_rate(self, t):
        i = self._segment(t)
        if i < 0 or i >= len(self._times) - 1:
            return np.zeros(2)
        dt = self._times[i + 1] - self._times[i]
        return (self._centers[i + 1] - self._centers[i]) / dt

    def central(self, side, m):
        key = (side, m)
        hit = self._central_cache.get(key)
        if hit is None:
            hit = square_central_moments(side, m).values
            self._central_cache[key] = hit
        return hit


@dataclass(frozen=True)
class Reference:
    """Desired signal at one instant.

    ``central`` holds centred-square moments (its order-1 entries are zero);
    ``center`` and ``center_rate`` are the path targets for ``M_10, M_01``
    and their rates.
    """

    time: float
    center: np.ndarray
    side: float
    center_rate: np.ndarray
    central: np.ndarray
    order: int

    def targets(self, frame_origin=(0.0, 0.0)):
        """Target vector in a frame whose origin sits at ``frame_origin``."""
        out = np.array(self.central, dtype=float)
        out[0:2] = self.center - np.asarray(frame_origin, dtype=float)
        return out


def signal_at(schedule, t, m):
    """Desired reference at time ``t``."""
    if schedule is None or not getattr(schedule, "keyframes", None):
        raise InvalidInputError("empty shape schedule")
    t = float(t)
    if not np.isfinite(t):
        raise InvalidInputError("signal time must be finite")
    side = schedule.side(t)
    return Reference(
        time=t,
        center=schedule.center(t),
        side=side,
        center_rate=schedule.center_rate(t),
        central=schedule.central(side, m),
        order=m,
    )
