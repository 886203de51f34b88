"""Dissipaton multi-index bookkeeping and the DDO container.

A ``HierarchySpace`` enumerates every occupation vector ``n = {n_mk}`` with
total tier ``sum n_mk <= cap`` (optionally with per-mode caps) and stores
raise/lower neighbour tables.  Neighbours outside the truncation point at
the sentinel row ``len(space)``, which always reads as zero.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import CapacityError, DimensionError

DEFAULT_MAX_INDICES = 2_000_000


@dataclass(frozen=True, eq=False)
class HierarchySpace:
    labels: tuple
    cap: int
    indices: np.ndarray
    raise_table: np.ndarray
    lower_table: np.ndarray
    mode_caps: tuple = ()

    def __len__(self):
        return self.indices.shape[0]

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def sentinel(self) -> int:
        return len(self)

    @property
    def tiers(self) -> np.ndarray:
        return self.indices.sum(axis=1)

    def label_position(self, m, k):
        try:
            return self.labels.index((m, k))
        except ValueError:
            return None

    def position(self, occupation) -> int | None:
        """Row of a full occupation vector, or None when outside the space."""
        occ = np.asarray(occupation, dtype=np.int64)
        # above the cap the radix keys are no longer unique
        if occ.shape != (self.n_labels,) or occ.min(initial=0) < 0 or occ.sum() > self.cap:
            return None
        key = int(occ @ self._weights)
        pos = int(np.searchsorted(self._sorted_keys, key))
        if pos < len(self._sorted_keys) and self._sorted_keys[pos] == key:
            return int(self._order[pos])
        return None

    def occupation(self, entries=()) -> np.ndarray:
        """Occupation vector from ``{(m, k): n}`` or an iterable of ``(m, k)``."""
        occ = np.zeros(self.n_labels, dtype=np.int64)
        items = entries.items() if isinstance(entries, dict) else ((e, 1) for e in entries)
        for (m, k), n in items:
            a = self.label_position(m, k)
            if a is None:
                raise KeyError(f"label {(m, k)} is not in the space")
            occ[a] += n
        return occ

    def lookup_many(self, occupations) -> np.ndarray:
        """Rows of many occupation vectors; missing ones map to the sentinel."""
        occ = np.asarray(occupations, dtype=np.int64)
        out = np.full(occ.shape[0], self.sentinel, dtype=np.int64)
        ok = np.all(occ >= 0, axis=1) & (occ.sum(axis=1) <= self.cap)
        if self.n_labels == 0:
            out[ok] = 0
            return out
        keys = occ[ok] @ self._weights
        pos = np.searchsorted(self._sorted_keys, keys)
        pos = np.minimum(pos, len(self._sorted_keys) - 1)
        hit = self._sorted_keys[pos] == keys
        rows = np.where(hit, self._order[pos], self.sentinel)
        out[np.nonzero(ok)[0]] = rows
        return out

    def conjugate_rows(self, conj_map) -> np.ndarray:
        """Row of the conjugate image (each n_mk moved to n_{m kbar}) for every row."""
        perm = [self.labels.index((m, int(conj_map[k]))) for (m, k) in self.labels]
        image = np.zeros_like(self.indices)
        image[:, perm] = self.indices
        return self.lookup_many(image)


def _attach_lookup(space: HierarchySpace):
    radix = space.cap + 1
    weights = radix ** np.arange(space.n_labels, dtype=np.int64)
    keys = space.indices @ weights if space.n_labels else np.zeros(len(space), np.int64)
    order = np.argsort(keys, kind="stable")
    object.__setattr__(space, "_weights", weights)
    object.__setattr__(space, "_sorted_keys", keys[order])
    object.__setattr__(space, "_order", order)


def count_indices(n_labels: int, cap: int) -> int:
    return comb(cap + n_labels, n_labels)


def build_space(labels, cap: int, mode_caps=None, max_indices=DEFAULT_MAX_INDICES) -> HierarchySpace:
    """Dense enumeration of occupation vectors over ``labels`` up to tier ``cap``.

    ``labels`` is a sequence of ``(mode, exponent)`` pairs.  ``mode_caps`` maps
    a mode to the largest total occupation allowed on that mode's labels.
    """
    if cap < 0:
        raise ValueError("tier cap must be nonnegative")
    labels = tuple((int(m), int(k)) for m, k in labels)
    n_labels = len(labels)
    mode_caps = dict(mode_caps or {})
    if radix_overflow(n_labels, cap):
        raise CapacityError("occupation keys would overflow 64-bit integers")
    total = count_indices(n_labels, cap)
    if not mode_caps and total > max_indices:
        raise CapacityError(f"{total} hierarchy indices exceed the budget of {max_indices}")
    rows = []
    mode_of = np.array([m for m, _ in labels], dtype=np.int64)
    for tier in range(cap + 1):
        for combo in itertools.combinations_with_replacement(range(n_labels), tier):
            occ = np.bincount(np.asarray(combo, dtype=np.int64), minlength=n_labels)
            if mode_caps and any(occ[mode_of == m].sum() > c for m, c in mode_caps.items()):
                continue
            rows.append(occ)
            if len(rows) > max_indices:
                raise CapacityError(f"hierarchy exceeds the budget of {max_indices} indices")
    indices = np.array(rows, dtype=np.int64).reshape(len(rows), n_labels)
    space = HierarchySpace(labels, cap, indices, np.empty((0, 0), np.int64),
                           np.empty((0, 0), np.int64), tuple(sorted(mode_caps.items())))
    _attach_lookup(space)
    eye = np.eye(n_labels, dtype=np.int64)
    raise_t = np.empty((len(indices), n_labels), np.int64)
    lower_t = np.empty((len(indices), n_labels), np.int64)
    for a in range(n_labels):
        raise_t[:, a] = space.lookup_many(indices + eye[a])
        lower_t[:, a] = space.lookup_many(indices - eye[a])
    object.__setattr__(space, "raise_table", raise_t)
    object.__setattr__(space, "lower_table", lower_t)
    return space


def radix_overflow(n_labels, cap) -> bool:
    return n_labels * np.log2(cap + 1) >= 62


class DDOSet:
    """DDO stack ``data[row]`` = d x d matrix for the occupation vector of ``row``.

    Entries absent from the space are identically zero.  ``time`` carries the
    real time (or imaginary-time parameter) of the snapshot when known.
    """

    __slots__ = ("space", "data", "time")

    def __init__(self, space: HierarchySpace, data, time=None):
        data = np.asarray(data, dtype=complex)
        if data.ndim != 3 or data.shape[0] != len(space) or data.shape[1] != data.shape[2]:
            raise DimensionError(f"data shape {data.shape} does not fit a space of {len(space)} rows")
        self.space = space
        self.data = data
        self.time = time

    @classmethod
    def zeros(cls, space, dim, time=None):
        return cls(space, np.zeros((len(space), dim, dim), complex), time)

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def tier0(self) -> np.ndarray:
        return self.data[0]

    def __getitem__(self, entries):
        occ = entries if isinstance(entries, np.ndarray) else self.space.occupation(entries)
        row = self.space.position(occ)
        if row is None:
            return np.zeros((self.dim, self.dim), complex)
        return self.data[row]

    def copy(self):
        return DDOSet(self.space, self.data.copy(), self.time)

    def vector(self) -> np.ndarray:
        return self.data.reshape(-1)

    @classmethod
    def from_vector(cls, space, vec, dim, time=None):
        return cls(space, np.asarray(vec).reshape(len(space), dim, dim), time)

    def _check(self, other):
        if other.space is not self.space or other.dim != self.dim:
            raise DimensionError("DDO sets live on different spaces")

    def __add__(self, other):
        self._check(other)
        return DDOSet(self.space, self.data + other.data, self.time)

    def __sub__(self, other):
        self._check(other)
        return DDOSet(self.space, self.data - other.data, self.time)

    def __mul__(self, scalar):
        return DDOSet(self.space, self.data * scalar, self.time)

    __rmul__ = __mul__

    def __neg__(self):
        return DDOSet(self.space, -self.data, self.time)

    def max_abs(self) -> float:
        return float(np.abs(self.data).max(initial=0.0))

    def tier_norms(self) -> np.ndarray:
        tiers = self.space.tiers
        norms = np.zeros(self.space.cap + 1)
        np.maximum.at(norms, tiers, np.abs(self.data).reshape(len(tiers), -1).max(axis=1))
        return norms

    def embed(self, target: HierarchySpace) -> "DDOSet":
        """Copy into a larger space with the same labels; new rows are zero."""
        if target.labels != self.space.labels:
            raise DimensionError("embedding requires identical labels")
        rows = target.lookup_many(self.space.indices)
        if np.any(rows == target.sentinel):
            raise DimensionError("target space does not contain every stored index")
        out = np.zeros((len(target), self.dim, self.dim), complex)
        out[rows] = self.data
        return DDOSet(target, out, self.time)

    def restrict(self, target: HierarchySpace) -> "DDOSet":
        """Keep only the rows that exist in ``target``."""
        if target.labels != self.space.labels:
            raise DimensionError("restriction requires identical labels")
        rows = self.space.lookup_many(target.indices)
        padded = np.concatenate([self.data, np.zeros((1, self.dim, self.dim), complex)])
        return DDOSet(target, padded[rows], self.time)


def ddo_conjugate(state: DDOSet, conj_map) -> DDOSet:
    """The DDO set of the adjoint total operator: ``[rho_n]^dagger`` placed at ``n~``."""
    rows = state.space.conjugate_rows(conj_map)
    if np.any(rows == state.space.sentinel):
        raise DimensionError("space is not closed under the conjugate index map")
    out = np.empty_like(state.data)
    out[rows] = np.conj(np.swapaxes(state.data, 1, 2))
    return DDOSet(state.space, out, state.time)
