"""Panel choice data: the in-memory model and long-format CSV ingestion.

A long-format file has one row per (person, observation, alternative).
Internally the panel is stored densely as an ``(n_obs, n_alts, K)`` attribute
array in which alternatives absent from an observation are masked out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


class ChoiceDataError(ValueError):
    """Base class for malformed choice data."""


class SchemaError(ChoiceDataError):
    """A column required by the schema is missing."""


class ValidationError(ChoiceDataError):
    """The data violate a panel invariant.

    ``row`` is the zero-based data-row index (header excluded) that triggered
    the failure, when one can be named.
    """

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"{message} (row {row})")
        self.row = row


class ParseError(ChoiceDataError):
    """A value could not be parsed as a number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"{message} (row {row})")
        self.row = row


@dataclass(frozen=True)
class ColumnSchema:
    person_id: str = "person_id"
    obs_id: str = "obs_id"
    alt_id: str = "alt_id"
    chosen: str = "chosen"
    avail: str | None = "avail"
    attributes: tuple[str, ...] | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any] | None) -> "ColumnSchema":
        if not mapping:
            return cls()
        known = {"person_id", "obs_id", "alt_id", "chosen", "avail", "attributes"}
        unknown = set(mapping) - known
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        kw = dict(mapping)
        if kw.get("attributes") is not None:
            kw["attributes"] = tuple(kw["attributes"])
        return cls(**kw)

    @property
    def key_columns(self) -> tuple[str, ...]:
        cols = (self.person_id, self.obs_id, self.alt_id, self.chosen)
        return cols + ((self.avail,) if self.avail else ())


@dataclass(frozen=True)
class AlternativeRow:
    alternative_id: str
    available: bool
    chosen: bool
    attributes: np.ndarray


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    observations: tuple[tuple[AlternativeRow, ...], ...]

    @property
    def n_obs(self) -> int:
        return len(self.observations)


@dataclass(frozen=True, eq=False)
class ChoicePanel:
    """Validated, immutable panel of choice observations.

    Attributes
    ----------
    person_ids : tuple of str
        Decision-maker identifiers in order of first appearance.
    obs_ids : tuple of str
        Observation identifiers, one per observation, grouped by person.
    obs_start : (N + 1,) int array
        Observations of person n are ``obs_start[n]:obs_start[n + 1]``.
    alternative_labels : tuple of str
        Alternative identifiers; these index the second axis of ``X``.
    attribute_names : tuple of str
    X : (n_obs, n_alts, K) float array
    present : (n_obs, n_alts) bool array
        Whether a row for the alternative exists in the observation.
    avail : (n_obs, n_alts) bool array
    chosen : (n_obs,) int array
        Index of the chosen alternative.
    """

    person_ids: tuple[str, ...]
    obs_ids: tuple[str, ...]
    obs_start: np.ndarray
    alternative_labels: tuple[str, ...]
    attribute_names: tuple[str, ...]
    X: np.ndarray
    present: np.ndarray
    avail: np.ndarray
    chosen: np.ndarray
    _design_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.obs_start, self.X, self.present, self.avail, self.chosen):
            arr.setflags(write=False)
        self._check()

    def _check(self):
        N = len(self.person_ids)
        if N < 1:
            raise ValidationError("a panel needs at least one person")
        if len(set(self.person_ids)) != N:
            raise ValidationError("person identifiers must be unique")
        if self.obs_start.shape != (N + 1,) or self.obs_start[0] != 0 or self.obs_start[-1] != self.n_obs:
            raise ValidationError("inconsistent observation offsets")
        if np.any(np.diff(self.obs_start) < 1):
            raise ValidationError("every person needs at least one observation")
        O, J, K = self.X.shape
        if K != len(self.attribute_names) or J != len(self.alternative_labels):
            raise ValidationError("attribute array does not match labels")
        if not np.all(np.isfinite(self.X[self.present])):
            raise ValidationError("attributes must be finite")
        if np.any(self.avail & ~self.present):
            raise ValidationError("an alternative without a row cannot be available")
        n_avail = self.avail.sum(axis=1)
        bad = np.flatnonzero(n_avail < 2)
        if bad.size:
            raise ValidationError(f"observation {self.obs_ids[bad[0]]!r} has fewer than 2 available alternatives")
        if not np.all(self.avail[np.arange(O), self.chosen]):
            o = int(np.flatnonzero(~self.avail[np.arange(O), self.chosen])[0])
            raise ValidationError(f"observation {self.obs_ids[o]!r}: chosen alternative is unavailable")

    # -- sizes --------------------------------------------------------
    @property
    def n_persons(self) -> int:
        return len(self.person_ids)

    @property
    def n_obs(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_alternatives(self) -> int:
        return len(self.alternative_labels)

    @property
    def n_rows(self) -> int:
        return int(self.present.sum())

    @cached_property
    def obs_person(self) -> np.ndarray:
        """Person index of each observation."""
        counts = np.diff(self.obs_start)
        out = np.repeat(np.arange(self.n_persons), counts)
        out.setflags(write=False)
        return out

    @property
    def obs_per_person(self) -> np.ndarray:
        return np.diff(self.obs_start)

    def attribute_index(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.attribute_names]
        if missing:
            raise KeyError(f"attributes not in panel: {missing}")
        return np.array([self.attribute_names.index(n) for n in names], dtype=int)

    # -- record views -------------------------------------------------
    @cached_property
    def persons(self) -> tuple[PersonRecord, ...]:
        return tuple(self.person(n) for n in range(self.n_persons))

    def person(self, n: int) -> PersonRecord:
        obs = []
        for o in range(self.obs_start[n], self.obs_start[n + 1]):
            rows = tuple(
                AlternativeRow(
                    self.alternative_labels[j],
                    bool(self.avail[o, j]),
                    bool(self.chosen[o] == j),
                    self.X[o, j].copy(),
                )
                for j in np.flatnonzero(self.present[o])
            )
            obs.append(rows)
        return PersonRecord(self.person_ids[n], tuple(obs))

    def subset(self, person_indices: Sequence[int]) -> "ChoicePanel":
        """Panel restricted to the given persons, in the given order."""
        idx = np.asarray(person_indices, dtype=int)
        if idx.size == 0:
            raise ValidationError("cannot build an empty panel")
        sel = np.concatenate([np.arange(self.obs_start[n], self.obs_start[n + 1]) for n in idx])
        counts = self.obs_start[idx + 1] - self.obs_start[idx]
        return ChoicePanel(
            person_ids=tuple(self.person_ids[n] for n in idx),
            obs_ids=tuple(self.obs_ids[o] for o in sel),
            obs_start=np.concatenate([[0], np.cumsum(counts)]),
            alternative_labels=self.alternative_labels,
            attribute_names=self.attribute_names,
            X=self.X[sel].copy(),
            present=self.present[sel].copy(),
            avail=self.avail[sel].copy(),
            chosen=self.chosen[sel].copy(),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChoicePanel):
            return NotImplemented
        return (
            self.person_ids == other.person_ids
            and self.obs_ids == other.obs_ids
            and self.alternative_labels == other.alternative_labels
            and self.attribute_names == other.attribute_names
            and np.array_equal(self.obs_start, other.obs_start)
            and np.array_equal(self.present, other.present)
            and np.array_equal(self.avail, other.avail)
            and np.array_equal(self.chosen, other.chosen)
            and np.array_equal(np.where(self.present[..., None], self.X, 0.0), np.where(other.present[..., None], other.X, 0.0))
        )

    __hash__ = None

    # -- conversion ---------------------------------------------------
    def to_frame(self, schema: ColumnSchema | None = None) -> pd.DataFrame:
        schema = schema or ColumnSchema()
        o_idx, j_idx = np.nonzero(self.present)
        data = {
            schema.person_id: np.asarray(self.person_ids, dtype=object)[self.obs_person[o_idx]],
            schema.obs_id: np.asarray(self.obs_ids, dtype=object)[o_idx],
            schema.alt_id: np.asarray(self.alternative_labels, dtype=object)[j_idx],
            schema.chosen: (self.chosen[o_idx] == j_idx).astype(int),
        }
        if schema.avail:
            data[schema.avail] = self.avail[o_idx, j_idx].astype(int)
        for k, name in enumerate(self.attribute_names):
            data[name] = self.X[o_idx, j_idx, k]
        return pd.DataFrame(data)

    @classmethod
    def from_arrays(
        cls,
        X,
        chosen,
        obs_per_person,
        attribute_names,
        alternative_labels=None,
        avail=None,
        person_ids=None,
        obs_ids=None,
    ) -> "ChoicePanel":
        """Build a panel from dense arrays (used by the synthetic generators)."""
        X = np.asarray(X, dtype=float)
        O, J, _ = X.shape
        counts = np.asarray(obs_per_person, dtype=int)
        N = len(counts)
        if avail is None:
            avail = np.ones((O, J), dtype=bool)
        avail = np.asarray(avail, dtype=bool)
        if person_ids is None:
            person_ids = tuple(str(n + 1) for n in range(N))
        if obs_ids is None:
            obs_ids = tuple(str(t + 1) for c in counts for t in range(c))
        if alternative_labels is None:
            alternative_labels = tuple(str(j + 1) for j in range(J))
        X = X.copy()
        return cls(
            person_ids=tuple(str(p) for p in person_ids),
            obs_ids=tuple(str(o) for o in obs_ids),
            obs_start=np.concatenate([[0], np.cumsum(counts)]).astype(int),
            alternative_labels=tuple(str(a) for a in alternative_labels),
            attribute_names=tuple(attribute_names),
            X=X,
            present=np.ones((O, J), dtype=bool),
            avail=avail.copy(),
            chosen=np.asarray(chosen, dtype=int).copy(),
        )


def _parse_flag(values: pd.Series, column: str) -> np.ndarray:
    num = pd.to_numeric(values, errors="coerce")
    bad = num.isna() | ~num.isin([0, 1])
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(f"column {column!r} must contain 0/1 values, got {values.iloc[row]!r}", row)
    return num.to_numpy().astype(bool)


def panel_from_frame(df: pd.DataFrame, schema: ColumnSchema | None = None) -> ChoicePanel:
    """Validate a long-format frame and build a :class:`ChoicePanel`."""
    schema = schema or ColumnSchema()
    required = [schema.person_id, schema.obs_id, schema.alt_id, schema.chosen]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"missing required columns: {missing}")
    has_avail = bool(schema.avail) and schema.avail in df.columns
    if schema.attributes is not None:
        attrs = list(schema.attributes)
        missing = [c for c in attrs if c not in df.columns]
        if missing:
            raise SchemaError(f"missing attribute columns: {missing}")
    else:
        skip = set(required) | ({schema.avail} if has_avail else set())
        attrs = [c for c in df.columns if c not in skip]
    if len(df) == 0:
        raise ValidationError("no data rows")

    pid = df[schema.person_id].astype(str).to_numpy()
    oid = df[schema.obs_id].astype(str).to_numpy()
    aid = df[schema.alt_id].astype(str).to_numpy()
    chosen = _parse_flag(df[schema.chosen], schema.chosen)
    avail = _parse_flag(df[schema.avail], schema.avail) if has_avail else np.ones(len(df), dtype=bool)

    X_rows = np.empty((len(df), len(attrs)))
    for k, col in enumerate(attrs):
        raw = df[col]
        num = pd.to_numeric(raw, errors="coerce")
        bad = num.isna() & raw.notna() | raw.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(f"attribute {col!r} has non-numeric value {raw.iloc[row]!r}", row)
        X_rows[:, k] = num.to_numpy(dtype=float)

    bad = np.flatnonzero(chosen & ~avail)
    if bad.size:
        raise ValidationError("chosen alternative is marked unavailable", int(bad[0]))

    # first-appearance ordering of persons, observations within persons, alternatives
    persons, p_idx = _codes(pid)
    alts, a_idx = _codes(aid)
    obs_keys = pd.Series(list(zip(p_idx, oid)))
    obs_codes, obs_first = pd.factorize(obs_keys)
    n_obs_total = len(obs_first)
    obs_pidx = np.array([k[0] for k in obs_first], dtype=int)
    obs_label = [k[1] for k in obs_first]
    # order observations by person first appearance, then observation appearance
    order = np.lexsort((np.arange(n_obs_total), obs_pidx))
    rank = np.empty(n_obs_total, dtype=int)
    rank[order] = np.arange(n_obs_total)
    o_idx = rank[obs_codes]

    O, J, K = n_obs_total, len(alts), len(attrs)
    present = np.zeros((O, J), dtype=bool)
    seen = np.zeros((O, J), dtype=int) - 1
    for r in range(len(df)):
        o, j = o_idx[r], a_idx[r]
        if present[o, j]:
            raise ValidationError(f"duplicate alternative {alts[j]!r} in observation {obs_label[order[o]]!r}", r)
        present[o, j] = True
        seen[o, j] = r
    X = np.zeros((O, J, K))
    X[o_idx, a_idx] = X_rows
    av = np.zeros((O, J), dtype=bool)
    av[o_idx, a_idx] = avail
    ch = np.zeros((O, J), dtype=bool)
    ch[o_idx, a_idx] = chosen

    n_chosen = ch.sum(axis=1)
    for o in np.flatnonzero(n_chosen != 1):
        first_row = int(seen[o][seen[o] >= 0].min())
        what = "no chosen alternative" if n_chosen[o] == 0 else f"{n_chosen[o]} chosen alternatives"
        raise ValidationError(f"observation {obs_label[order[o]]!r} of person {persons[obs_pidx[order[o]]]!r} has {what}", first_row)
    for o in np.flatnonzero(av.sum(axis=1) < 2):
        first_row = int(seen[o][seen[o] >= 0].min())
        raise ValidationError(f"observation {obs_label[order[o]]!r} has fewer than 2 available alternatives", first_row)

    counts = np.bincount(obs_pidx, minlength=len(persons))
    return ChoicePanel(
        person_ids=tuple(persons),
        obs_ids=tuple(obs_label[order[o]] for o in range(O)),
        obs_start=np.concatenate([[0], np.cumsum(counts)]).astype(int),
        alternative_labels=tuple(alts),
        attribute_names=tuple(attrs),
        X=X,
        present=present,
        avail=av,
        chosen=ch.argmax(axis=1),
    )


def _codes(values: np.ndarray) -> tuple[list[str], np.ndarray]:
    codes, uniques = pd.factorize(values)
    return [str(u) for u in uniques], codes.astype(int)


def load_panel(path, schema: ColumnSchema | None = None) -> ChoicePanel:
    """Read and validate a long-format CSV file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    schema = schema or ColumnSchema()
    id_cols = {schema.person_id: str, schema.obs_id: str, schema.alt_id: str}
    df = pd.read_csv(path, dtype=id_cols, float_precision="round_trip", encoding="utf-8")
    panel = panel_from_frame(df, schema)
    log.debug("loaded %s: %d persons, %d observations", path, panel.n_persons, panel.n_obs)
    return panel


def save_panel(panel: ChoicePanel, path, schema: ColumnSchema | None = None) -> None:
    """Write the panel as long-format CSV; floats use shortest round-trip repr."""
    panel.to_frame(schema).to_csv(Path(path), index=False, encoding="utf-8", lineterminator="\n")


def split_holdout(panel: ChoicePanel, fraction: float, seed: int) -> tuple[ChoicePanel, ChoicePanel]:
    """Split persons (never observations) into estimation and holdout panels.

    Both parts keep the original person order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    N = panel.n_persons
    if N < 2:
        raise ValueError("splitting needs at least two persons")
    n_hold = int(round(fraction * N))
    if n_hold == 0 or n_hold == N:
        raise ValueError(f"fraction {fraction} leaves an empty partition for {N} persons")
    rng = np.random.default_rng(seed)
    hold = np.zeros(N, dtype=bool)
    hold[rng.choice(N, size=n_hold, replace=False)] = True
    return panel.subset(np.flatnonzero(~hold)), panel.subset(np.flatnonzero(hold))
