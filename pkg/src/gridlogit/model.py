"""Model specification and the fitted mixture model value type."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .support import EQUAL, UNEQUAL, UNSTRUCTURED, MixtureSupport, canonical_variant, enumerate_support, parameter_count


def parse_bound(value) -> tuple[float, float]:
    """Turn a constraint entry into a ``(lower, upper)`` pair.

    Accepts ``"nonpositive"``, ``"nonnegative"``, ``"free"`` or a two-element
    sequence (``None`` meaning unbounded on that side).
    """
    if value is None:
        return (-np.inf, np.inf)
    if isinstance(value, str):
        key = value.strip().lower().replace("_", "-")
        table = {
            "nonpositive": (-np.inf, 0.0),
            "non-positive": (-np.inf, 0.0),
            "negative": (-np.inf, 0.0),
            "nonnegative": (0.0, np.inf),
            "non-negative": (0.0, np.inf),
            "positive": (0.0, np.inf),
            "free": (-np.inf, np.inf),
        }
        if key not in table:
            raise ValueError(f"unknown constraint {value!r}")
        return table[key]
    lo, hi = value
    lo = -np.inf if lo is None else float(lo)
    hi = np.inf if hi is None else float(hi)
    if lo > hi:
        raise ValueError(f"constraint lower bound {lo} exceeds upper bound {hi}")
    return (lo, hi)


@dataclass(frozen=True)
class ModelSpec:
    """Which attributes enter the utility and how their coefficients vary.

    Parameters
    ----------
    fixed : attribute names with coefficients shared by all classes.
    random : attribute names whose coefficients follow the mixture.
    variant : ``"unstructured"``, ``"equal"`` or ``"unequal"``.
    counts : points per random dimension (grid variants).
    n_classes : number of classes (unstructured variant).
    constraints : mapping attribute name -> constraint (see :func:`parse_bound`).
    """

    fixed: tuple[str, ...] = ()
    random: tuple[str, ...] = ()
    variant: str = UNEQUAL
    counts: tuple[int, ...] = ()
    n_classes: int | None = None
    constraints: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(self.fixed))
        object.__setattr__(self, "random", tuple(self.random))
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "constraints", dict(self.constraints))
        names = self.fixed + self.random
        if not names:
            raise ValueError("a model needs at least one coefficient")
        if len(set(names)) != len(names):
            raise ValueError("fixed and random attribute lists must be disjoint and without repeats")
        unknown = set(self.constraints) - set(names)
        if unknown:
            raise ValueError(f"constraints name attributes outside the model: {sorted(unknown)}")
        for v in self.constraints.values():
            parse_bound(v)
        if self.variant == UNSTRUCTURED:
            n = 1 if self.n_classes is None and not self.random else self.n_classes
            if n is None or int(n) < 1:
                raise ValueError("an unstructured model needs n_classes >= 1")
            object.__setattr__(self, "n_classes", int(n))
        else:
            if len(self.counts) != len(self.random):
                raise ValueError("grid models need one point count per random attribute")
            if any(c < 1 for c in self.counts):
                raise ValueError("grid point counts must be positive")
            object.__setattr__(self, "n_classes", int(np.prod(self.counts)) if self.counts else 1)

    @classmethod
    def mnl(cls, attributes, constraints=None) -> "ModelSpec":
        """Single-class specification with every coefficient fixed."""
        return cls(fixed=tuple(attributes), random=(), variant=UNSTRUCTURED, n_classes=1, constraints=constraints or {})

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return self.fixed + self.random

    def bound(self, name: str) -> tuple[float, float]:
        return parse_bound(self.constraints.get(name))

    @property
    def random_bounds(self) -> tuple[tuple[float, float], ...]:
        return tuple(self.bound(n) for n in self.random)

    @property
    def fixed_bounds(self) -> tuple[tuple[float, float], ...]:
        return tuple(self.bound(n) for n in self.fixed)

    @property
    def n_parameters(self) -> int:
        return parameter_count(len(self.fixed), self.variant, len(self.random), self.counts, self.n_classes)

    def to_dict(self) -> dict:
        out = {"fixed": list(self.fixed), "random": list(self.random), "variant": self.variant}
        if self.variant == UNSTRUCTURED:
            out["n_classes"] = self.n_classes
        else:
            out["counts"] = list(self.counts)
        out["constraints"] = {k: (v if isinstance(v, str) else [_json_num(x) for x in parse_bound(v)]) for k, v in self.constraints.items()}
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        cons = {}
        for k, v in (d.get("constraints") or {}).items():
            cons[k] = v if isinstance(v, str) else tuple(_num_json(x) for x in v)
        return cls(
            fixed=tuple(d.get("fixed") or ()),
            random=tuple(d.get("random") or ()),
            variant=d.get("variant", UNEQUAL),
            counts=tuple(d.get("counts") or ()),
            n_classes=d.get("n_classes"),
            constraints=cons,
        )


def _json_num(x: float):
    if np.isposinf(x):
        return "inf"
    if np.isneginf(x):
        return "-inf"
    return float(x)


def _num_json(x) -> float | None:
    if x is None:
        return None
    return float(x)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Fixed coefficients, a mixture support and class masses ``gamma``."""

    fixed_names: tuple[str, ...]
    fixed: np.ndarray
    support: MixtureSupport
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fixed_names", tuple(self.fixed_names))
        object.__setattr__(self, "fixed", np.asarray(self.fixed, dtype=float).reshape(-1))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float).reshape(-1))
        if self.fixed.shape != (len(self.fixed_names),):
            raise ValueError("one fixed coefficient is required per fixed attribute")
        if self.gamma.shape != (self.support.n_classes,):
            raise ValueError(f"gamma has {self.gamma.size} entries for {self.support.n_classes} classes")
        if np.any(self.gamma < 0) or not np.all(np.isfinite(self.gamma)):
            raise ValueError("class masses must be finite and nonnegative")
        if not np.all(np.isfinite(self.fixed)):
            raise ValueError("fixed coefficients must be finite")

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return self.fixed_names + self.support.random_dims

    @property
    def n_classes(self) -> int:
        return self.support.n_classes

    def coefficient_matrix(self) -> np.ndarray:
        """(F + K_r, S) matrix of full coefficient vectors, one column per class."""
        S = self.n_classes
        top = np.repeat(self.fixed[:, None], S, axis=1)
        return np.vstack([top, enumerate_support(self.support)]) if self.support.n_random else top

    def class_coefficients(self, s: int) -> np.ndarray:
        return self.coefficient_matrix()[:, s]

    def permuted(self, perm) -> "MixtureModel":
        """Unstructured model with classes reordered by ``perm``."""
        if self.support.variant != UNSTRUCTURED:
            raise TypeError("only unstructured supports can be permuted freely")
        perm = np.asarray(perm)
        sup = MixtureSupport.unstructured(self.support.random_dims, self.support.points[:, perm], self.support.bounds)
        return MixtureModel(self.fixed_names, self.fixed.copy(), sup, self.gamma[perm])

    @classmethod
    def single_class(cls, names, beta) -> "MixtureModel":
        sup = MixtureSupport.unstructured((), np.zeros((0, 1)))
        return cls(tuple(names), np.asarray(beta, dtype=float), sup, np.ones(1))


__all__ = ["ModelSpec", "MixtureModel", "parse_bound", "EQUAL", "UNEQUAL", "UNSTRUCTURED"]
