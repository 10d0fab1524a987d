"""In-memory session logs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import SchemaError


@dataclass
class SessionLog:
    """Query sessions with a fixed list size.

    Attributes
    ----------
    items : ndarray of int, shape (n, T)
        Dense item index shown at each position; -1 marks an item missing
        from ``item_ids``.
    clicks : ndarray of int8, shape (n, T)
        Observed clicks.
    item_ids : list of str
        Item vocabulary; ``item_ids[v]`` is the identifier of index ``v``.
    session_ids : list of str
    covariates : dict
        Named per-position covariate columns, each of shape ``(n, T)`` or
        ``(n, T, m)``.
    """

    items: np.ndarray
    clicks: np.ndarray
    item_ids: list = field(default_factory=list)
    session_ids: Optional[list] = None
    covariates: dict = field(default_factory=dict)

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        self.clicks = np.asarray(self.clicks, dtype=np.int8)
        if self.items.ndim != 2 or self.items.shape != self.clicks.shape:
            raise SchemaError(f"items {self.items.shape} and clicks {self.clicks.shape} must be equal 2-D shapes")
        if not np.isin(self.clicks, (0, 1)).all():
            raise SchemaError("clicks must be 0 or 1")
        if not self.item_ids and self.items.size:
            self.item_ids = [str(v) for v in range(int(self.items.max()) + 1)]
        if self.session_ids is None:
            self.session_ids = [str(i) for i in range(len(self.items))]
        if len(self.session_ids) != len(self.items):
            raise SchemaError("one session id per session required")
        for name, col in list(self.covariates.items()):
            col = np.asarray(col, dtype=float)
            if col.shape[:2] != self.items.shape:
                raise SchemaError(f"covariate {name!r} has shape {col.shape}, expected leading {self.items.shape}")
            self.covariates[name] = col

    @property
    def n_sessions(self) -> int:
        return self.items.shape[0]

    @property
    def list_size(self) -> int:
        return self.items.shape[1]

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self):
        return self.n_sessions

    def subset(self, rows) -> "SessionLog":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return SessionLog(
            items=self.items[rows],
            clicks=self.clicks[rows],
            item_ids=list(self.item_ids),
            session_ids=[self.session_ids[i] for i in rows],
            covariates={k: v[rows] for k, v in self.covariates.items()},
        )

    def reindex(self, item_ids: Sequence[str]) -> "SessionLog":
        """Re-express item indices in another vocabulary; unknown items become -1."""
        lookup = {v: i for i, v in enumerate(item_ids)}
        table = np.array([lookup.get(v, -1) for v in self.item_ids] + [-1], dtype=np.int64)
        return SessionLog(
            items=table[self.items],
            clicks=self.clicks,
            item_ids=list(item_ids),
            session_ids=list(self.session_ids),
            covariates=dict(self.covariates),
        )

    def impressions(self) -> np.ndarray:
        """Number of times each item was shown."""
        it = self.items[self.items >= 0]
        return np.bincount(it, minlength=self.n_items)

    def click_counts(self) -> np.ndarray:
        mask = (self.items >= 0) & (self.clicks == 1)
        return np.bincount(self.items[mask], minlength=self.n_items)

    def equals(self, other: "SessionLog") -> bool:
        """Structural equality, comparing item identifiers rather than indices."""
        if self.items.shape != other.items.shape or self.session_ids != other.session_ids:
            return False
        mine = np.array(self.item_ids + [None], dtype=object)[self.items]
        theirs = np.array(other.item_ids + [None], dtype=object)[other.items]
        if not (mine == theirs).all() or not np.array_equal(self.clicks, other.clicks):
            return False
        if set(self.covariates) != set(other.covariates):
            return False
        return all(np.array_equal(self.covariates[k], other.covariates[k]) for k in self.covariates)
