"""Covariate selectors: extract the activation input of a parameter at one position.

A selector is called as ``selector(log, t, slot)`` with a 1-based position
``t`` and the literal's static slot (or None) and returns covariates for every
session in ``log``: a 1-D integer group index for tabular activations, or an
``(n, m)`` float matrix for logistic ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DefinitionError


def _position(log, t, offset):
    pos = t - 1 + offset
    if not 0 <= pos < log.list_size:
        raise DefinitionError(f"covariate offset {offset} at position {t} falls outside the list")
    return pos


@dataclass(frozen=True)
class ItemSelector:
    """Item index at position ``t + offset`` (offset -1 selects the previous item)."""

    offset: int = 0

    def __call__(self, log, t, slot=None):
        return log.items[:, _position(log, t, self.offset)]

    def to_dict(self):
        return {"kind": "item", "offset": self.offset}


@dataclass(frozen=True)
class ConstantSelector:
    """Always group 0; used for global scalar parameters."""

    def __call__(self, log, t, slot=None):
        return np.zeros(log.n_sessions, dtype=np.int64)

    def to_dict(self):
        return {"kind": "constant"}


@dataclass(frozen=True)
class SlotSelector:
    """The literal's static slot as the group index (e.g. a (last click, position) pair)."""

    def __call__(self, log, t, slot=None):
        if slot is None:
            raise DefinitionError("slot selector used on a literal without a slot")
        return np.full(log.n_sessions, int(slot), dtype=np.int64)

    def to_dict(self):
        return {"kind": "slot"}


@dataclass(frozen=True)
class PositionSelector:
    """Position ``t - 1`` as a group index (per-rank parameters)."""

    def __call__(self, log, t, slot=None):
        return np.full(log.n_sessions, t - 1, dtype=np.int64)

    def to_dict(self):
        return {"kind": "position"}


@dataclass(frozen=True)
class ColumnSelector:
    """Named per-position covariate columns stacked into a matrix."""

    columns: tuple
    offset: int = 0

    def __call__(self, log, t, slot=None):
        pos = _position(log, t, self.offset)
        parts = []
        for name in self.columns:
            if name not in log.covariates:
                raise DefinitionError(f"session log has no covariate column {name!r}")
            col = log.covariates[name][:, pos]
            parts.append(col.reshape(len(col), -1))
        return np.hstack(parts)

    def to_dict(self):
        return {"kind": "column", "columns": list(self.columns), "offset": self.offset}


@dataclass(frozen=True)
class ItemFeatureSelector:
    """Feature vector of the item at ``t + offset`` from a fixed ``(V, m)`` table.

    Items outside the table (index -1) get the mean feature vector.
    """

    features: tuple
    offset: int = 0

    @classmethod
    def from_array(cls, features, offset=0):
        return cls(tuple(tuple(float(v) for v in row) for row in np.asarray(features, dtype=float)), offset)

    def __call__(self, log, t, slot=None):
        table = np.asarray(self.features, dtype=float)
        idx = log.items[:, _position(log, t, self.offset)]
        out = table[np.maximum(idx, 0)]
        unseen = idx < 0
        if unseen.any():
            out[unseen] = table.mean(axis=0)
        return out

    def to_dict(self):
        return {"kind": "item_feature", "features": [list(r) for r in self.features], "offset": self.offset}


def selector_from_dict(d: dict):
    kind = d["kind"]
    if kind == "item":
        return ItemSelector(int(d.get("offset", 0)))
    if kind == "constant":
        return ConstantSelector()
    if kind == "slot":
        return SlotSelector()
    if kind == "position":
        return PositionSelector()
    if kind == "column":
        return ColumnSelector(tuple(d["columns"]), int(d.get("offset", 0)))
    if kind == "item_feature":
        return ItemFeatureSelector(tuple(tuple(r) for r in d["features"]), int(d.get("offset", 0)))
    raise ValueError(f"unknown selector kind {kind!r}")
