"""Click prediction, perplexity and parameter-recovery scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .activations import PROB_EPS, evaluate
from .em import PreparedData, _chunks, _rmul
from .errors import DegenerateSessionError, DimensionError, SchemaError
from .transitions import entry_values


def _params_of(fitted, params):
    if params is not None:
        return fitted, params
    return fitted.model, fitted.params


def predict_click_probs(fitted, data, params: Optional[Mapping] = None, chunk_size: int = 4096) -> np.ndarray:
    """Conditional click probabilities ``P(y_t = 1 | y_<t)`` for every session, shape ``(n, T)``.

    Parameters
    ----------
    fitted : FittedModel or ModelDefinition
        With a bare model definition, ``params`` must be given.
    data : SessionLog
        Sessions indexed in the model's item vocabulary.
    """
    model, params = _params_of(fitted, params)
    prepared = PreparedData.build(model, data)
    D = prepared.masks_click
    out = np.empty(data.clicks.shape)
    for rows in _chunks(data.n_sessions, chunk_size):
        clicks = data.clicks[rows]
        n = clicks.shape[0]
        alpha = np.tile(D[:, 0], (n, 1))
        for cp in prepared.compiled:
            t = cp.t
            theta = np.empty((n, len(cp.terms)))
            for j, (name, _) in enumerate(cp.terms):
                theta[:, j] = evaluate(model.parameters[name].activation, params[name], prepared.covariates[t][j][rows])
            pred = _rmul(alpha[:, cp.src] * entry_values(cp, theta), cp.sparse[0])
            total = pred.sum(axis=1)
            q = (pred @ D[:, t]) / total
            out[rows, t - 1] = q
            mask = np.where(clicks[:, t - 1, None] == 1, D[:, t][None, :], 1.0 - D[:, t][None, :])
            a = pred * mask
            s = a.sum(axis=1)
            bad = np.flatnonzero(~(s > 0))
            if bad.size:
                i = rows.start + int(bad[0])
                raise DegenerateSessionError(f"session {i}: click prefix impossible at position {t}", session=i, position=t)
            alpha = a / s[:, None]
    return np.clip(out, 0.0, 1.0)


@dataclass
class PerplexityReport:
    """Per-rank click perplexity; ``overall`` is the mean over ranks."""

    per_rank: np.ndarray
    overall: float
    baseline: float = 2.0
    n_sessions: int = 0
    clamped: int = 0
    model_name: str = ""
    overall_definition: str = "mean over ranks"

    def records(self):
        for t, p in enumerate(self.per_rank, start=1):
            yield {"model": self.model_name, "rank": t, "perplexity": float(p)}
        yield {
            "model": self.model_name,
            "rank": "overall",
            "perplexity": self.overall,
            "definition": self.overall_definition,
            "baseline": self.baseline,
            "n_sessions": self.n_sessions,
            "clamped": self.clamped,
        }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())

    def plot_rows(self) -> str:
        """Tab-separated ``rank perplexity model`` lines."""
        return "".join(f"{t}\t{p!r}\t{self.model_name}\n" for t, p in enumerate(self.per_rank.tolist(), start=1))


def perplexity_from_probs(q, y, model_name: str = "") -> PerplexityReport:
    """Per-rank perplexity ``2 ** -mean(y log2 q + (1 - y) log2 (1 - q))``.

    Probabilities are clamped away from 0 and 1; the number of clamped
    predictions that contradicted the observed outcome is reported.
    """
    q = np.asarray(q, dtype=float)
    y = np.asarray(y)
    if q.shape != y.shape or q.ndim != 2:
        raise DimensionError(f"predictions {q.shape} and clicks {y.shape} must be equal 2-D shapes")
    if q.shape[0] == 0:
        raise SchemaError("perplexity needs at least one session")
    contradicted = int(np.sum((q <= 0) & (y == 1)) + np.sum((q >= 1) & (y == 0)))
    qc = np.clip(q, PROB_EPS, 1 - PROB_EPS)
    ll = np.where(y == 1, np.log2(qc), np.log2(1 - qc))
    per_rank = 2.0 ** (-ll.mean(axis=0))
    return PerplexityReport(per_rank, float(per_rank.mean()), 2.0, q.shape[0], contradicted, model_name)


def perplexity(fitted, data, params: Optional[Mapping] = None, model_name: Optional[str] = None) -> PerplexityReport:
    """Click perplexity of a model on a session log."""
    if data.n_sessions == 0:
        raise SchemaError("perplexity needs at least one session")
    model, _ = _params_of(fitted, params)
    q = predict_click_probs(fitted, data, params)
    return perplexity_from_probs(q, data.clicks, model.name if model_name is None else model_name)


def log_likelihood(fitted, data, params: Optional[Mapping] = None) -> float:
    from .em import batch_loglik

    model, params = _params_of(fitted, params)
    return batch_loglik(model, params, data)


@dataclass
class RecoveryReport:
    """Absolute errors per parameter, restricted to items with enough impressions."""

    errors: dict = field(default_factory=dict)
    min_impressions: int = 0

    def summary(self) -> dict:
        return {
            name: {"mean": float(np.mean(e)) if e.size else float("nan"), "max": float(np.max(e)) if e.size else float("nan"), "n": int(e.size)}
            for name, e in self.errors.items()
        }

    def mean(self, name) -> float:
        return self.summary()[name]["mean"]

    def max(self, name) -> float:
        return self.summary()[name]["max"]

    def records(self):
        for name, s in self.summary().items():
            yield {"parameter": name, **s, "min_impressions": self.min_impressions}


def recovery_error(fitted, truth, min_impressions: int = 0) -> RecoveryReport:
    """Compare fitted probabilities with simulator ground truth.

    Per-item parameters are scored only on items shown at least
    ``min_impressions`` times.
    """
    model = fitted.model
    expected = truth.parameters(model.list_size)
    report = RecoveryReport(min_impressions=min_impressions)
    perm = None
    if truth.item_ids is not None and fitted.item_ids:
        # align fitted item indices with the simulator's
        where = {v: i for i, v in enumerate(fitted.item_ids)}
        missing = [v for v in truth.item_ids.tolist() if v not in where]
        if missing and truth.impressions is not None:
            shown = set(np.asarray(truth.item_ids)[np.asarray(truth.impressions) >= max(min_impressions, 1)].tolist())
            if shown & set(missing):
                raise SchemaError(f"fitted model lacks items {sorted(shown & set(missing))[:5]}")
        perm = np.array([where.get(v, -1) for v in truth.item_ids.tolist()])
    for name, value in expected.items():
        if name not in model.parameters:
            raise SchemaError(f"fitted model has no parameter {name!r}")
        act = model.parameters[name].activation
        if not hasattr(act, "probabilities"):
            raise SchemaError(f"parameter {name!r} is not tabular and cannot be compared")
        est = act.probabilities(fitted.params[name])
        value = np.asarray(value, dtype=float)
        if perm is not None and value.shape[0] == truth.n_items and est.shape[0] == len(fitted.item_ids):
            est = np.where(perm >= 0, est[np.maximum(perm, 0)], np.nan)
        if est.shape != value.shape:
            raise SchemaError(f"parameter {name!r}: fitted shape {est.shape}, truth shape {value.shape}")
        err = np.abs(est - value)
        if value.shape[0] == truth.n_items and truth.impressions is not None:
            err = err[np.asarray(truth.impressions) >= min_impressions]
        err = err[np.isfinite(err)]
        report.errors[name] = err
    return report
