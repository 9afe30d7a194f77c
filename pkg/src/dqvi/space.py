"""Finite-dimensional inner-product spaces, convex sets and linear maps.

Every vector lives in coordinates; the metric is carried by a symmetric
positive-definite Gram matrix so that ``(u, v) = u @ gram @ v``.  Dual
vectors (images of monotone operators, lifted loads) are paired with
primal ones by the plain Euclidean dot product, and their dual norm is
``sqrt(d @ gram^{-1} @ d)``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, InputError

PROJECTION_TOL = 1e-10


def _as_vector(v, dim, what="vector"):
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise InputError(f"{what} has shape {arr.shape}, expected ({dim},)")
    return arr


class Space:
    """Coordinate space R^dim with the inner product induced by ``gram``."""

    def __init__(self, gram):
        gram = np.atleast_2d(np.asarray(gram, dtype=float))
        if gram.ndim != 2 or gram.shape[0] != gram.shape[1] or gram.shape[0] < 1:
            raise ConfigurationError(f"gram must be a non-empty square matrix, got {gram.shape}")
        scale = max(np.abs(gram).max(), np.finfo(float).tiny)
        if np.abs(gram - gram.T).max() > 1e-12 * scale:
            raise ConfigurationError("gram matrix is not symmetric")
        gram = 0.5 * (gram + gram.T)
        try:
            self._chol = sla.cho_factor(gram, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise ConfigurationError(f"gram matrix is not positive definite: {exc}") from None
        self.gram = gram
        self.gram.setflags(write=False)
        self.dim = gram.shape[0]
        # dense inverse: dims here are small and the inner loops are matvec-bound
        inv = sla.cho_solve(self._chol, np.eye(self.dim))
        self.gram_inv = 0.5 * (inv + inv.T)
        self.gram_inv.setflags(write=False)
        self.is_diagonal = bool(np.count_nonzero(gram - np.diag(np.diag(gram))) == 0)

    @classmethod
    def euclidean(cls, dim):
        return cls(np.eye(dim))

    def check(self, v, what="vector"):
        return _as_vector(v, self.dim, what)

    def inner(self, u, v):
        u = self.check(u)
        v = self.check(v)
        return float(u @ self.gram @ v)

    def norm(self, v):
        v = self.check(v)
        return float(np.sqrt(max(v @ self.gram @ v, 0.0)))

    def riesz(self, d):
        """Primal representer of the dual vector ``d``: gram^{-1} d."""
        return self.gram_inv @ self.check(d, "dual vector")

    def dual_norm(self, d):
        d = self.check(d, "dual vector")
        return float(np.sqrt(max(d @ self.gram_inv @ d, 0.0)))

    def __repr__(self):
        return f"Space(dim={self.dim})"


def inner(space: Space, u, v) -> float:
    return space.inner(u, v)


class ConvexSet:
    """Closed convex subset of a :class:`Space` with an exact projection."""

    space: Space

    def project(self, v):
        raise NotImplementedError

    def contains(self, v, tol=1e-12):
        raise NotImplementedError

    def constrained_dofs(self):
        """Indices of coordinates the constraint acts on."""
        return ()

    def extreme_moves(self, u):
        """Feasible points reached from ``u`` by single-coordinate moves onto
        the constraint boundary; used to sharpen residual certificates."""
        return []


class WholeSpace(ConvexSet):
    def __init__(self, space: Space):
        self.space = space

    def project(self, v):
        return self.space.check(v).copy()

    def contains(self, v, tol=1e-12):
        self.space.check(v)
        return True

    def __repr__(self):
        return f"WholeSpace(dim={self.space.dim})"


class Box(ConvexSet):
    """Coordinate box ``lower <= v <= upper`` (infinite bounds allowed).

    Projection in the V-metric is a coordinate clip only when the Gram
    matrix is diagonal, so boxes with finite bounds require one.
    """

    def __init__(self, space: Space, lower, upper):
        self.space = space
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (space.dim,)).copy()
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (space.dim,)).copy()
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ConfigurationError("box bounds must not be NaN")
        if np.any(lower > upper):
            bad = np.flatnonzero(lower > upper).tolist()
            raise ConfigurationError(f"empty box: lower > upper at coordinates {bad}")
        finite = np.isfinite(lower) | np.isfinite(upper)
        if finite.any() and not space.is_diagonal:
            raise ConfigurationError("box constraints need a diagonal Gram matrix for an exact projection")
        self.lower = lower
        self.upper = upper
        self._finite = finite

    def project(self, v):
        return np.clip(self.space.check(v), self.lower, self.upper)

    def contains(self, v, tol=1e-12):
        v = self.space.check(v)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def constrained_dofs(self):
        return tuple(int(i) for i in np.flatnonzero(self._finite))

    def extreme_moves(self, u):
        moves = []
        for i in self.constrained_dofs():
            for b in (self.lower[i], self.upper[i]):
                if np.isfinite(b):
                    w = np.array(u, dtype=float)
                    w[i] = b
                    moves.append(w)
        return moves

    def __repr__(self):
        return f"Box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


class NodeUpperBound(ConvexSet):
    """Half-space ``v[index] <= bound``.

    The V-metric projection is closed form:
    ``P v = v - lam * gram^{-1} e_i`` with
    ``lam = max(0, (v_i - bound) / (gram^{-1})_{ii})``.
    """

    def __init__(self, space: Space, index: int, bound: float):
        self.space = space
        if not 0 <= int(index) < space.dim:
            raise ConfigurationError(f"constraint index {index} outside 0..{space.dim - 1}")
        bound = float(bound)
        if not np.isfinite(bound):
            raise ConfigurationError("NodeUpperBound needs a finite bound")
        self.index = int(index)
        self.bound = bound
        self._column = np.array(space.gram_inv[:, self.index])
        self._diag = float(self._column[self.index])

    def project(self, v):
        v = self.space.check(v)
        excess = v[self.index] - self.bound
        if excess <= 0.0:
            return v.copy()
        out = v - (excess / self._diag) * self._column
        # absorb rounding so membership is exact
        out[self.index] = self.bound
        return out

    def contains(self, v, tol=1e-12):
        v = self.space.check(v)
        return bool(v[self.index] <= self.bound + tol)

    def constrained_dofs(self):
        return (self.index,)

    def with_bound(self, bound):
        return NodeUpperBound(self.space, self.index, bound)

    def extreme_moves(self, u):
        w = np.array(u, dtype=float)
        w[self.index] = self.bound
        return [w]

    def __repr__(self):
        return f"NodeUpperBound(index={self.index}, bound={self.bound!r})"


def project(cset: ConvexSet, v):
    return cset.project(v)


class LinearMap:
    """Matrix ``P`` from ``domain`` coordinates into ``codomain`` coordinates.

    ``norm`` is the operator norm between the two metrics, i.e. the smallest
    ``c0`` with ``||P v||_Z <= c0 ||v||_V``, from a generalized symmetric
    eigenproblem.
    """

    def __init__(self, matrix, domain: Space, codomain: Space):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.shape != (codomain.dim, domain.dim):
            raise ConfigurationError(
                f"map shape {matrix.shape} does not match ({codomain.dim}, {domain.dim})"
            )
        self.matrix = matrix
        self.domain = domain
        self.codomain = codomain
        pulled = matrix.T @ codomain.gram @ matrix
        pulled = 0.5 * (pulled + pulled.T)
        top = sla.eigh(pulled, domain.gram, eigvals_only=True)[-1]
        self.norm = float(np.sqrt(max(top, 0.0)))

    def __call__(self, v):
        return self.matrix @ self.domain.check(v)

    def lift(self, z):
        """Dual vector ``fbar`` with ``fbar . v = (z, P v)_Z`` for all v."""
        return self.matrix.T @ (self.codomain.gram @ self.codomain.check(z, "Z vector"))


def mosco_scale(base_bound, scaled_bound, v, index=None):
    """Recovery element ``(scaled_bound / base_bound) * v`` for gap scaling.

    Maps a point of ``{v[index] <= base_bound}`` into
    ``{v[index] <= scaled_bound}``; the distance to ``v`` is
    ``|scaled_bound / base_bound - 1| * ||v||``.
    """
    g = float(base_bound)
    gn = float(scaled_bound)
    if not (g > 0.0 and gn > 0.0):
        raise ConfigurationError(f"gap bounds must be positive, got {g} and {gn}")
    v = np.asarray(v, dtype=float)
    if index is not None and v[index] > g + PROJECTION_TOL * max(1.0, abs(g)):
        raise InputError(f"v[{index}] = {v[index]} violates the base bound {g}")
    out = (gn / g) * v
    if index is not None:
        out[index] = min(out[index], gn)
    return out
