"""Polynomial approximation of leader-follower gains in follower position.

For a fixed leader position ``z_l`` a gain field ``g(z, z_l)`` is replaced by
its Taylor polynomial in ``z`` about the origin (the crowd's centre of mass
after re-coordination). Partial derivatives are taken by central finite
differences on a tensor-product stencil, so any smooth user-supplied field
works. With the polynomial in hand, sums over followers collapse to
combinations of moments.

All coupling quantities here are per follower (the factor ``N`` of the
population sums is dropped).
"""
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

from .exceptions import IllConditionedExpansionError, InvalidInputError
from .moments import full_index, moment_indices

__all__ = [
    "PolyCoefficients",
    "coefficient_count",
    "fd_weights",
    "taylor_coefficients",
    "taylor_coefficients_batch",
    "eval_polynomial",
    "position_coupling_term",
    "velocity_weight_sum",
]


def coefficient_count(degree):
    return (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def fd_weights(order, half_width):
    """Central-difference weights for the ``order``-th derivative on nodes ``-r..r`` (unit spacing).

    Obtained by differentiating the Lagrange interpolant, hence exact for
    polynomials of degree ``<= 2r``.
    """
    nodes = np.arange(-half_width, half_width + 1, dtype=float)
    n = nodes.size
    if order >= n:
        raise InvalidInputError(f"{n}-point stencil cannot resolve derivative order {order}")
    vander = np.vander(nodes, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = factorial(order)
    w = np.linalg.solve(vander, rhs)
    w.setflags(write=False)
    return w


def _half_width(degree):
    # smallest symmetric stencil with at least degree+1 points
    return max(1, (degree + 1) // 2)


@dataclass(frozen=True)
class PolyCoefficients:
    """Expansion coefficients, indexed in graded-lex order including ``(0, 0)``."""

    degree: int
    alpha: np.ndarray
    beta: np.ndarray
    leader_pos: np.ndarray
    frame_origin: np.ndarray = np.zeros(2)

    def __post_init__(self):
        n = coefficient_count(self.degree)
        for name in ("alpha", "beta"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != n:
                raise InvalidInputError(f"{name} must have {n} entries for degree {self.degree}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)


def taylor_coefficients_batch(g, leader_pos, degree, h=0.5, check=True):
    """Taylor coefficients of ``g(., z_l)`` about the origin for many leader positions.

    ``leader_pos`` has shape (K, 2); returns shape (K, coefficient_count(degree)).
    ``g`` must broadcast over arrays of follower and leader positions whose
    last axis has length 2.
    """
    if degree < 0 or int(degree) != degree:
        raise InvalidInputError(f"degree must be a non-negative integer, got {degree}")
    if not h > 0:
        raise InvalidInputError(f"differencing step must be positive, got {h}")
    zl = np.asarray(leader_pos, dtype=float).reshape(-1, 2)
    r = _half_width(degree)
    if check:
        dist = np.linalg.norm(zl, axis=1)
        close = np.flatnonzero(dist < (degree + 1) * h)
        if close.size:
            raise IllConditionedExpansionError(
                f"leader at {zl[close[0]].tolist()} lies within {(degree + 1) * h:g} of the expansion point"
            )
    nodes = np.arange(-r, r + 1) * h
    gx, gy = np.meshgrid(nodes, nodes, indexing="ij")
    grid = np.stack([gx, gy], axis=-1)
    values = np.asarray(g(grid[None, :, :, :], zl[:, None, None, :]), dtype=float)
    if check and not np.all(np.isfinite(values)):
        raise IllConditionedExpansionError("gain field is not finite on the differencing stencil")
    weights = np.stack([fd_weights(k, r) for k in range(degree + 1)]) / h ** np.arange(degree + 1)[:, None]
    # derivs[k, a, b] = d^(a+b) g / dx^a dy^b at the origin
    derivs = np.einsum("ai,bj,kij->kab", weights, weights, values)
    out = np.empty((zl.shape[0], coefficient_count(degree)))
    for a, b in moment_indices(degree, include_zero=True):
        out[:, full_index(a, b)] = derivs[:, a, b] / (factorial(a) * factorial(b))
    return out


def taylor_coefficients(g, leader_pos, degree, h=0.5, check=True):
    """Coefficients ``(1/(a! b!)) d^(a+b) g/dx^a dy^b (0, z_l)`` in graded-lex order."""
    return taylor_coefficients_batch(g, np.asarray(leader_pos, dtype=float).reshape(1, 2), degree, h, check)[0]


@lru_cache(maxsize=None)
def _degree_of(n):
    d = 0
    while coefficient_count(d) < n:
        d += 1
    if coefficient_count(d) != n:
        raise InvalidInputError(f"{n} is not a valid coefficient count")
    return d


def eval_polynomial(coeffs, z):
    """``sum c_ab z_x**a z_y**b``; ``z`` may be batched with shape (..., 2)."""
    c = np.asarray(coeffs, dtype=float)
    degree = _degree_of(c.shape[-1])
    z = np.asarray(z, dtype=float)
    x, y = z[..., 0], z[..., 1]
    total = np.zeros(np.broadcast(x, c[..., 0]).shape)
    for a, b in moment_indices(degree, include_zero=True):
        total = total + c[..., full_index(a, b)] * x**a * y**b
    return total


@lru_cache(maxsize=None)
def _coupling_plan(degree):
    idx = moment_indices(degree, include_zero=True)
    ab = np.array([full_index(a, b) for a, b in idx])
    a1b = np.array([full_index(a + 1, b) for a, b in idx])
    ab1 = np.array([full_index(a, b + 1) for a, b in idx])
    return ab, a1b, ab1


def _full_values(moments):
    values = moments.values if hasattr(moments, "values") else np.asarray(moments, dtype=float)
    values = np.asarray(values, dtype=float)
    return np.concatenate([np.ones(values.shape[:-1] + (1,)), values], axis=-1)


def _order_of_full(n_full):
    return _degree_of(n_full)


def position_coupling_term(alpha, moments, z_l):
    """Per-capita ``sum alpha_ab (M_ab z_l - (M_{a+1,b}, M_{a,b+1}))``.

    ``alpha`` may be a coefficient array or :class:`PolyCoefficients`; both
    it and ``moments`` may carry matching leading batch axes.
    """
    alpha = np.asarray(getattr(alpha, "alpha", alpha), dtype=float)
    degree = _degree_of(alpha.shape[-1])
    full = _full_values(moments)
    if _order_of_full(full.shape[-1]) < degree + 1:
        raise InvalidInputError(f"moments of order >= {degree + 1} are required for degree-{degree} coefficients")
    ab, a1b, ab1 = _coupling_plan(degree)
    z_l = np.asarray(z_l, dtype=float)
    w = np.sum(alpha * full[..., ab], axis=-1)
    px = np.sum(alpha * full[..., a1b], axis=-1)
    py = np.sum(alpha * full[..., ab1], axis=-1)
    return w[..., None] * z_l - np.stack([px, py], axis=-1)


def velocity_weight_sum(beta, moments):
    """Per-capita ``sum beta_ab M_ab`` with ``M_00 = 1``."""
    beta = np.asarray(getattr(beta, "beta", beta), dtype=float)
    degree = _degree_of(beta.shape[-1])
    full = _full_values(moments)
    if _order_of_full(full.shape[-1]) < degree:
        raise InvalidInputError(f"moments of order >= {degree} are required for degree-{degree} coefficients")
    ab, _, _ = _coupling_plan(degree)
    return np.sum(beta * full[..., ab], axis=-1)
