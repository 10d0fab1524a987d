"""Synthetic click logs with known ground truth.

Items and users live in the unit square.  A user is attracted to (and
satisfied by) nearby items: both probabilities are logistic in the
user-item distance.  Every user issues a geometric number of sessions; each
session shows ``T`` distinct items drawn with probability proportional to
item popularity measured in a warm-up phase, and clicks are sampled
ancestrally from the chosen model's transition matrices.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.special import expit

from .activations import PROB_EPS, evaluate
from .covariates import ItemSelector
from .data import SessionLog
from .errors import DefinitionError
from .transitions import entry_values
from .models import build_czm, build_ubm, ubm_slot

MAX_SESSIONS_PER_USER = 50


@dataclass(frozen=True)
class SimulationConfig:
    items: int = 100
    users: int = 20000
    warmup_sessions: int = 100
    list_size: int = 10
    distance_sensitivity: float = 1.0
    attraction_salience: float = 5.0
    satisfaction_salience: float = 5.0
    lifetime_geometric_p: float = 0.5
    continuation_probability: float = 0.9
    seed: int = 0

    def __post_init__(self):
        for name in ("items", "users", "warmup_sessions", "list_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.list_size > self.items:
            raise ValueError("list_size cannot exceed the number of items")
        for name in ("distance_sensitivity", "attraction_salience", "satisfaction_salience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lifetime_geometric_p", "continuation_probability"):
            v = getattr(self, name)
            # continuation 0 is allowed: it gives single-examination sessions
            lo_ok = v >= 0 if name == "continuation_probability" else v > 0
            if not (lo_ok and v <= 1):
                raise ValueError(f"{name} must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class GroundTruth:
    """Parameters that generated a simulated log.

    ``attraction`` and ``satisfaction`` are ``(users, items)`` matrices.
    ``session_users`` maps each simulated session to its user.  The per-item
    summaries are what a model without user effects can recover:
    ``item_attraction`` averages user-level attraction over impressions, and
    ``item_satisfaction`` averages satisfaction over impressions weighted by
    attraction, since satisfaction only acts after a click.
    """

    model_kind: str
    item_locations: np.ndarray
    user_locations: np.ndarray
    attraction: np.ndarray
    satisfaction: np.ndarray
    continuation: float
    session_users: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    popularity: Optional[np.ndarray] = None
    item_attraction: Optional[np.ndarray] = None
    item_satisfaction: Optional[np.ndarray] = None
    impressions: Optional[np.ndarray] = None
    item_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("attraction", "satisfaction"):
            m = getattr(self, name)
            if m.size and not (np.all(m > 0) and np.all(m < 1)):
                raise ValueError(f"{name} probabilities must lie strictly inside (0, 1)")

    @property
    def n_items(self):
        return self.item_locations.shape[0]

    def examination(self, list_size: int) -> np.ndarray:
        """UBM examination weights ``g ** (t - t')`` in slot order."""
        return ubm_examination_values(self.continuation, list_size)

    def parameters(self, list_size: int) -> dict:
        """Per-item parameter values as probabilities, keyed like the model's parameters."""
        out = {"attraction": self.item_attraction}
        if self.model_kind == "czm":
            out["satisfaction"] = self.item_satisfaction
            out["continuation"] = np.array([self.continuation])
        else:
            out["examination"] = self.examination(list_size)
        return out

    def save(self, path):
        arrays = {k: v for k, v in self.__dict__.items() if isinstance(v, np.ndarray)}
        np.savez(path, model_kind=np.array(self.model_kind), continuation=np.array(self.continuation), **arrays)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with np.load(path, allow_pickle=False) as z:
            d = {k: z[k] for k in z.files}
        d["model_kind"] = str(d["model_kind"])
        d["continuation"] = float(d["continuation"])
        return cls(**d)


def ubm_examination_values(g: float, list_size: int) -> np.ndarray:
    T = list_size
    out = np.empty(T * (T + 1) // 2)
    for t in range(1, T + 1):
        for lc in range(t):
            out[ubm_slot(lc, t)] = g ** (t - lc)
    return np.clip(out, PROB_EPS, 1 - PROB_EPS)


def _distance_probabilities(dist, sensitivity, salience):
    z = sensitivity * dist
    offset = np.median(z)
    return np.clip(expit(salience * (offset - z)), PROB_EPS, 1 - PROB_EPS)


def draw_truth(config: SimulationConfig, model_kind: str, rng) -> GroundTruth:
    items = rng.random((config.items, 2))
    users = rng.random((config.users, 2))
    dist = np.sqrt(((users[:, None, :] - items[None, :, :]) ** 2).sum(axis=-1))
    return GroundTruth(
        model_kind=model_kind,
        item_locations=items,
        user_locations=users,
        attraction=_distance_probabilities(dist, config.distance_sensitivity, config.attraction_salience),
        satisfaction=_distance_probabilities(dist, config.distance_sensitivity, config.satisfaction_salience),
        continuation=float(config.continuation_probability),
    )


def model_for(kind: str, n_items: int, list_size: int):
    if kind == "czm":
        return build_czm(n_items, list_size)
    if kind == "ubm":
        return build_ubm(list_size, n_items)
    raise DefinitionError(f"unknown simulation model {kind!r}")


def truth_params(model, truth: GroundTruth) -> dict:
    """Weights of the non-item parameters of ``model`` implied by ``truth``."""
    out = {}
    for name, spec in model.parameters.items():
        act = spec.activation
        if name == "continuation":
            out[name] = act.from_probabilities([truth.continuation])
        elif name == "examination":
            out[name] = act.from_probabilities(truth.examination(model.list_size))
        else:
            out[name] = act.init_weights()
    return out


def sample_clicks(model, params: Mapping, items, rng, user_tables: Optional[Mapping] = None, users=None) -> np.ndarray:
    """Ancestral sampling of clicks for fixed item lists.

    Parameters
    ----------
    model : ModelDefinition
    params : mapping
        Weights of every parameter.
    items : ndarray of int, shape (n, T)
    rng : numpy Generator
    user_tables : mapping, optional
        ``name -> (users, items)`` probability matrices that replace the
        per-item parameter of that name (item selectors only).
    users : ndarray of int, shape (n,), optional
        User of each session, indexing the rows of ``user_tables``.
    """
    items = np.asarray(items, dtype=np.int64)
    n, T = items.shape
    if T != model.list_size:
        raise DefinitionError(f"items have {T} positions, model expects {model.list_size}")
    log = SessionLog(items, np.zeros_like(items), item_ids=[str(v) for v in range(max(int(items.max()) + 1, 1))])
    D = model.space.click_indicator()
    z = np.full(n, int(np.argmax(D[:, 0])))
    clicks = np.zeros((n, T), dtype=np.int8)
    user_tables = user_tables or {}
    for cp in model.compiled():
        t = cp.t
        theta = np.empty((n, len(cp.terms)))
        for j, (name, slot) in enumerate(cp.terms):
            spec = model.parameters[name]
            x = spec.selector(log, t, slot)
            if name in user_tables and isinstance(spec.selector, ItemSelector):
                theta[:, j] = user_tables[name][users, x]
            else:
                theta[:, j] = evaluate(spec.activation, params[name], x)
        vals = entry_values(cp, theta) * (cp.src[None, :] == z[:, None])
        cum = np.cumsum(vals, axis=1)
        u = rng.random(n) * cum[:, -1]
        pick = np.minimum((cum <= u[:, None]).sum(axis=1), cp.n_entries - 1)
        z = cp.dst[pick]
        clicks[:, t - 1] = D[z, t] > 0
    return clicks


def _order_items(weights, n, T, rng):
    # Gumbel top-k: equivalent to sequential sampling without replacement
    keys = np.log(weights)[None, :] - np.log(-np.log(rng.random((n, len(weights)))))
    return np.argsort(-keys, axis=1, kind="stable")[:, :T]


def popularity_warmup(config: SimulationConfig, truth: Optional[GroundTruth] = None, model_kind: str = "czm", rng=None):
    """Normalized click counts of warm-up sessions shown in uniformly random order.

    Falls back to uniform weights when the warm-up produces no clicks.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if truth is None:
        truth = draw_truth(config, model_kind, rng)
    V, T = config.items, config.list_size
    model = model_for(truth.model_kind, V, T)
    users = rng.integers(0, truth.user_locations.shape[0], config.warmup_sessions)
    items = _order_items(np.ones(V), config.warmup_sessions, T, rng)
    tables = {"attraction": truth.attraction, "satisfaction": truth.satisfaction}
    clicks = sample_clicks(model, truth_params(model, truth), items, rng, tables, users)
    counts = np.bincount(items[clicks == 1], minlength=V).astype(float)
    if counts.sum() == 0:
        return np.full(V, 1.0 / V)
    return counts / counts.sum()


def simulate(config: SimulationConfig = SimulationConfig(), model_kind: str = "czm"):
    """Simulate a click log; returns ``(SessionLog, GroundTruth)``.

    The result depends only on ``config`` (including its seed).
    """
    rng = np.random.default_rng(config.seed)
    truth = draw_truth(config, model_kind, rng)
    popularity = popularity_warmup(config, truth, model_kind, rng)
    V, T = config.items, config.list_size
    counts = np.minimum(rng.geometric(config.lifetime_geometric_p, config.users), MAX_SESSIONS_PER_USER)
    users = np.repeat(np.arange(config.users), counts)
    n = len(users)
    # add-one smoothing keeps never-clicked items in circulation
    weights = popularity * config.warmup_sessions + 1.0
    items = _order_items(weights / weights.sum(), n, T, rng)
    model = model_for(model_kind, V, T)
    tables = {"attraction": truth.attraction, "satisfaction": truth.satisfaction}
    clicks = sample_clicks(model, truth_params(model, truth), items, rng, tables, users)
    log = SessionLog(items, clicks, item_ids=[f"item{v}" for v in range(V)])
    truth.session_users = users
    truth.popularity = popularity
    truth.impressions = log.impressions()
    truth.item_ids = np.array(log.item_ids)
    att = truth.attraction[users[:, None], items]
    truth.item_attraction = _impression_mean(truth.attraction, users, items, V)
    truth.item_satisfaction = _impression_mean(truth.satisfaction, users, items, V, weights=att)
    return log, truth


def _impression_mean(table, users, items, V, weights=None):
    vals = table[users[:, None], items]
    w = np.ones(items.shape) if weights is None else weights
    num = np.bincount(items.ravel(), weights=(w * vals).ravel(), minlength=V)
    den = np.bincount(items.ravel(), weights=w.ravel(), minlength=V)
    overall = table.mean(axis=0)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), overall)
