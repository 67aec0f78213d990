"""Mixture supports: unstructured point sets and equal/unequal-interval grids.

Classes of a grid are enumerated row-major over the random dimensions (the
last dimension varies fastest), so a flat class index ``s`` and its
multi-index ``(m_1, ..., m_K)`` are related by ``numpy.ravel_multi_index``.
All indices are zero-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

UNSTRUCTURED = "unstructured"
EQUAL = "equal"
UNEQUAL = "unequal"
VARIANTS = (UNSTRUCTURED, EQUAL, UNEQUAL)

_ALIASES = {
    "unstructured": UNSTRUCTURED,
    "equal": EQUAL,
    "equalgrid": EQUAL,
    "equal_grid": EQUAL,
    "unequal": UNEQUAL,
    "unequalgrid": UNEQUAL,
    "unequal_grid": UNEQUAL,
}


def canonical_variant(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower().replace("-", "_")]
    except KeyError:
        raise ValueError(f"unknown support variant {name!r}; expected one of {VARIANTS}") from None


@dataclass(frozen=True)
class ClassIndex:
    """A class identified both by its flat index and its grid multi-index."""

    flat: int
    multi: tuple[int, ...]

    @classmethod
    def from_flat(cls, flat: int, counts: Sequence[int]) -> "ClassIndex":
        size = int(np.prod(counts))
        if not 0 <= flat < size:
            raise IndexError(f"class index {flat} out of range for {size} classes")
        multi = tuple(int(m) for m in np.unravel_index(flat, tuple(counts)))
        return cls(int(flat), multi)

    @classmethod
    def from_multi(cls, multi: Sequence[int], counts: Sequence[int]) -> "ClassIndex":
        if len(multi) != len(counts):
            raise IndexError("multi-index length does not match the number of dimensions")
        for m, c in zip(multi, counts):
            if not 0 <= m < c:
                raise IndexError(f"multi-index {tuple(multi)} out of range for counts {tuple(counts)}")
        flat = int(np.ravel_multi_index(tuple(int(m) for m in multi), tuple(counts)))
        return cls(flat, tuple(int(m) for m in multi))


def _as_bounds(bounds, k: int) -> tuple[tuple[float, float], ...]:
    if bounds is None:
        return tuple((-np.inf, np.inf) for _ in range(k))
    out = tuple((-np.inf if lo is None else float(lo), np.inf if hi is None else float(hi)) for lo, hi in bounds)
    if len(out) != k:
        raise ValueError("one (lower, upper) bound pair is required per random dimension")
    for lo, hi in out:
        if lo > hi:
            raise ValueError(f"lower bound {lo} exceeds upper bound {hi}")
    return out


@dataclass(frozen=True, eq=False)
class MixtureSupport:
    """Support of the taste-coefficient distribution over the random dimensions.

    Build instances with :meth:`unstructured`, :meth:`equal_grid` or
    :meth:`unequal_grid` rather than calling the constructor directly.
    """

    variant: str
    random_dims: tuple[str, ...]
    counts: tuple[int, ...] = ()
    points: np.ndarray | None = None  # unstructured: (K_r, S)
    alpha: np.ndarray | None = None  # equal grid corner
    delta: np.ndarray | None = None  # equal grid edge lengths
    lambdas: tuple[np.ndarray, ...] | None = None  # unequal grid point sets
    bounds: tuple[tuple[float, float], ...] = field(default=())

    # -- constructors -------------------------------------------------
    @classmethod
    def unstructured(cls, random_dims, points, bounds=None) -> "MixtureSupport":
        dims = tuple(random_dims)
        pts = np.array(points, dtype=float, ndmin=2)
        if pts.shape[0] != len(dims):
            raise ValueError(f"points must have one row per random dimension ({len(dims)}), got {pts.shape}")
        if pts.shape[1] < 1:
            raise ValueError("an unstructured support needs at least one class")
        return cls(UNSTRUCTURED, dims, (pts.shape[1],), points=pts, bounds=_as_bounds(bounds, len(dims)))

    @classmethod
    def equal_grid(cls, random_dims, alpha, delta, counts, bounds=None) -> "MixtureSupport":
        dims = tuple(random_dims)
        a = np.asarray(alpha, dtype=float).reshape(-1)
        d = np.asarray(delta, dtype=float).reshape(-1)
        c = tuple(int(m) for m in counts)
        if not (len(a) == len(d) == len(c) == len(dims)):
            raise ValueError("alpha, delta and counts need one entry per random dimension")
        if any(m < 1 for m in c):
            raise ValueError("grid counts must be positive")
        return cls(EQUAL, dims, c, alpha=a, delta=d, bounds=_as_bounds(bounds, len(dims)))

    @classmethod
    def unequal_grid(cls, random_dims, lambdas, bounds=None) -> "MixtureSupport":
        dims = tuple(random_dims)
        lam = tuple(np.asarray(v, dtype=float).reshape(-1) for v in lambdas)
        if len(lam) != len(dims):
            raise ValueError("one point vector is required per random dimension")
        if any(len(v) < 1 for v in lam):
            raise ValueError("each dimension needs at least one point")
        return cls(UNEQUAL, dims, tuple(len(v) for v in lam), lambdas=lam, bounds=_as_bounds(bounds, len(dims)))

    # -- structure ----------------------------------------------------
    @property
    def n_random(self) -> int:
        return len(self.random_dims)

    @property
    def n_classes(self) -> int:
        if self.variant == UNSTRUCTURED:
            return int(self.points.shape[1])
        return int(np.prod(self.counts)) if self.counts else 1

    @property
    def is_grid(self) -> bool:
        return self.variant != UNSTRUCTURED

    def multi_indices(self) -> np.ndarray:
        """(S, K_r) integer array of grid multi-indices in flat-index order."""
        if not self.is_grid:
            raise TypeError("multi-indices are only defined for grid supports")
        return class_multi_indices(self.counts)

    def class_index(self, s) -> ClassIndex:
        if isinstance(s, ClassIndex):
            return s
        if self.is_grid:
            if isinstance(s, (tuple, list)):
                return ClassIndex.from_multi(s, self.counts)
            return ClassIndex.from_flat(int(s), self.counts)
        flat = int(s)
        if not 0 <= flat < self.n_classes:
            raise IndexError(f"class index {flat} out of range for {self.n_classes} classes")
        return ClassIndex(flat, (flat,))

    def with_values(self, **changes) -> "MixtureSupport":
        return replace(self, **changes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MixtureSupport):
            return NotImplemented
        if (self.variant, self.random_dims, self.counts, self.bounds) != (
            other.variant, other.random_dims, other.counts, other.bounds
        ):
            return False
        return np.array_equal(enumerate_support(self), enumerate_support(other))

    __hash__ = None

    def copy(self) -> "MixtureSupport":
        if self.variant == UNSTRUCTURED:
            return replace(self, points=self.points.copy())
        if self.variant == EQUAL:
            return replace(self, alpha=self.alpha.copy(), delta=self.delta.copy())
        return replace(self, lambdas=tuple(v.copy() for v in self.lambdas))


def class_multi_indices(counts: Sequence[int]) -> np.ndarray:
    counts = tuple(int(c) for c in counts)
    if not counts:
        return np.zeros((1, 0), dtype=int)
    grids = np.unravel_index(np.arange(int(np.prod(counts))), counts)
    return np.stack(grids, axis=1)


def equal_grid_loadings(counts: Sequence[int]) -> np.ndarray:
    """Diagonals of the loading matrices H_s as an (S, K_r) array.

    Entry (s, k) is ``m_k / (M_k - 1)``, or 0 for a dimension with a single
    point.
    """
    counts = np.asarray(counts, dtype=int)
    multi = class_multi_indices(counts)
    denom = np.where(counts > 1, counts - 1, 1).astype(float)
    return multi / denom


def unequal_grid_loadings(counts: Sequence[int], s: int) -> list[np.ndarray]:
    """One-hot loading vectors h_sk selecting each dimension's point for class s."""
    idx = ClassIndex.from_flat(s, counts)
    out = []
    for m, c in zip(idx.multi, counts):
        h = np.zeros(c)
        h[m] = 1.0
        out.append(h)
    return out


def class_coordinates(support: MixtureSupport, s) -> np.ndarray:
    """Coefficient vector (random dimensions only) of class ``s``.

    ``s`` may be a flat index, a multi-index tuple, or a :class:`ClassIndex`.
    """
    idx = support.class_index(s)
    if support.variant == UNSTRUCTURED:
        return support.points[:, idx.flat].copy()
    if support.variant == EQUAL:
        counts = np.asarray(support.counts)
        h = np.where(counts > 1, np.asarray(idx.multi) / np.maximum(counts - 1, 1), 0.0)
        return support.alpha + h * support.delta
    return np.array([lam[m] for lam, m in zip(support.lambdas, idx.multi)])


def enumerate_support(support: MixtureSupport) -> np.ndarray:
    """(K_r, S) matrix whose column s is ``class_coordinates(support, s)``."""
    if support.variant == UNSTRUCTURED:
        return support.points.copy()
    if support.variant == EQUAL:
        H = equal_grid_loadings(support.counts)
        return (support.alpha[None, :] + H * support.delta[None, :]).T
    multi = support.multi_indices()
    if support.n_random == 0:
        return np.zeros((0, 1))
    return np.stack([lam[multi[:, k]] for k, lam in enumerate(support.lambdas)], axis=0)


def equal_to_unequal(support: MixtureSupport) -> MixtureSupport:
    """Re-express an equal-interval grid as an unequal grid with the same points."""
    if support.variant != EQUAL:
        raise TypeError("expected an equal-interval grid")
    lambdas = []
    for a, d, m in zip(support.alpha, support.delta, support.counts):
        frac = np.arange(m) / (m - 1) if m > 1 else np.zeros(1)
        lambdas.append(a + frac * d)
    return MixtureSupport.unequal_grid(support.random_dims, lambdas, bounds=support.bounds)


def support_parameter_count(variant: str, n_random: int, counts: Sequence[int] = (), n_classes: int | None = None) -> int:
    """Number of free parameters locating the support points (excluding masses)."""
    variant = canonical_variant(variant)
    if variant == UNSTRUCTURED:
        if n_classes is None:
            raise ValueError("an unstructured support needs an explicit class count")
        return n_random * int(n_classes)
    if variant == EQUAL:
        return 2 * n_random
    return int(sum(counts))


def parameter_count(n_fixed: int, variant: str, n_random: int, counts: Sequence[int] = (), n_classes: int | None = None) -> int:
    """Total estimable parameters: fixed coefficients, support locations, masses.

    >>> parameter_count(21, "unequal", 7, (2, 2, 2, 4, 4, 4, 4))
    2090
    >>> parameter_count(21, "equal", 7, (2, 2, 2, 4, 4, 4, 4))
    2082
    """
    variant = canonical_variant(variant)
    if variant == UNSTRUCTURED:
        S = int(n_classes)
    else:
        S = int(np.prod(counts)) if len(counts) else 1
    return int(n_fixed) + support_parameter_count(variant, n_random, counts, S) + (S - 1)


def support_parameters(support: MixtureSupport) -> int:
    return support_parameter_count(support.variant, support.n_random, support.counts, support.n_classes)
