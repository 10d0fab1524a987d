"""Reading and writing session logs and fitted models.

Session logs are UTF-8 JSON lines.  The first line is a header::

    {"format": "gcm-sessions", "version": 1, "list_size": 10, "covariates": []}

and every following line is one session::

    {"id": "s1", "items": ["a", "b", ...], "clicks": [0, 1, ...], "covariates": {}}

Fitted models are single JSON documents holding the model definition in
its text form, the weights and the fit report.  Floats are written with
``repr`` precision, so weights survive a round trip exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import SessionLog
from .em import FitReport, FittedModel
from .errors import SchemaError
from .models import ModelDefinition

SESSION_FORMAT = "gcm-sessions"
MODEL_FORMAT = "gcm-fitted-model"
VERSION = 1


def write_sessions(log: SessionLog, path) -> None:
    names = sorted(log.covariates)
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": SESSION_FORMAT, "version": VERSION, "list_size": log.list_size, "covariates": names}
        fh.write(json.dumps(header) + "\n")
        ids = np.array(list(log.item_ids) + [None], dtype=object)
        for i in range(log.n_sessions):
            rec = {
                "id": log.session_ids[i],
                "items": ids[log.items[i]].tolist(),
                "clicks": log.clicks[i].tolist(),
                "covariates": {k: log.covariates[k][i].tolist() for k in names},
            }
            fh.write(json.dumps(rec) + "\n")


def _parse(line, lineno):
    try:
        return json.loads(line)
    except json.JSONDecodeError as err:
        raise SchemaError(f"malformed JSON ({err.msg})", line=lineno) from None


def read_sessions(path, item_ids=None) -> SessionLog:
    """Parse a session file.

    Parameters
    ----------
    item_ids : sequence of str, optional
        Vocabulary to index items with; items outside it get index -1.
        By default the vocabulary is built in order of first appearance.

    Raises
    ------
    SchemaError
        On any malformed line, naming the line number.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError("empty session file", line=1)
    header = _parse(lines[0], 1)
    if not isinstance(header, dict) or header.get("format") != SESSION_FORMAT:
        raise SchemaError("missing session file header", line=1)
    if header.get("version") != VERSION:
        raise SchemaError(f"unsupported version {header.get('version')!r}", line=1)
    T = header.get("list_size")
    if not isinstance(T, int) or T < 1:
        raise SchemaError("header list_size must be a positive integer", line=1)
    names = list(header.get("covariates", []))
    fixed = item_ids is not None
    vocab = {v: i for i, v in enumerate(item_ids)} if fixed else {}
    items, clicks, sids = [], [], []
    cov = {k: [] for k in names}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _parse(line, lineno)
        if not isinstance(rec, dict):
            raise SchemaError("record must be a JSON object", line=lineno)
        its, cl = rec.get("items"), rec.get("clicks")
        if not isinstance(its, list) or not isinstance(cl, list):
            raise SchemaError("record needs 'items' and 'clicks' lists", line=lineno)
        if len(its) != T or len(cl) != T:
            raise SchemaError(f"expected {T} items and clicks, got {len(its)} and {len(cl)}", line=lineno)
        if any(c not in (0, 1) or isinstance(c, bool) for c in cl):
            raise SchemaError("clicks must be 0 or 1", line=lineno)
        row = []
        for v in its:
            v = str(v)
            if v not in vocab:
                if fixed:
                    row.append(-1)
                    continue
                vocab[v] = len(vocab)
            row.append(vocab[v])
        items.append(row)
        clicks.append(cl)
        sids.append(str(rec.get("id", len(sids))))
        rc = rec.get("covariates") or {}
        for k in names:
            if k not in rc:
                raise SchemaError(f"missing covariate {k!r}", line=lineno)
            col = np.asarray(rc[k], dtype=float)
            if col.shape[:1] != (T,):
                raise SchemaError(f"covariate {k!r} needs {T} values", line=lineno)
            cov[k].append(col)
    vocab_list = list(item_ids) if fixed else list(vocab)
    n = len(items)
    return SessionLog(
        items=np.array(items, dtype=np.int64).reshape(n, T),
        clicks=np.array(clicks, dtype=np.int8).reshape(n, T),
        item_ids=vocab_list,
        session_ids=sids,
        covariates={k: np.array(v).reshape((n, T) + np.shape(v[0])[1:] if v else (0, T)) for k, v in cov.items()},
    )


def fitted_to_dict(fitted: FittedModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": VERSION,
        "name": fitted.model.name,
        "definition": fitted.model.to_text(),
        "options": fitted.model.options,
        "item_ids": list(fitted.item_ids),
        "params": {k: np.asarray(v, dtype=float).tolist() for k, v in fitted.params.items()},
        "report": fitted.report.to_dict(),
    }


def fitted_from_dict(d: dict) -> FittedModel:
    if d.get("format") != MODEL_FORMAT or d.get("version") != VERSION:
        raise SchemaError("not a fitted model file")
    model = ModelDefinition.from_text(d["definition"])
    object.__setattr__(model, "options", dict(d.get("options") or {}))
    params = {}
    for name, spec in model.parameters.items():
        if name not in d["params"]:
            raise SchemaError(f"fitted model file lacks weights for {name!r}")
        w = np.asarray(d["params"][name], dtype=float)
        if w.shape != (spec.activation.n_weights(),):
            raise SchemaError(f"weights of {name!r} have shape {w.shape}")
        params[name] = w
    return FittedModel(model, params, FitReport.from_dict(d["report"]), list(d.get("item_ids", [])))


def save_fitted(fitted: FittedModel, path) -> None:
    Path(path).write_text(json.dumps(fitted_to_dict(fitted)) + "\n", encoding="utf-8")


def load_fitted(path) -> FittedModel:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise SchemaError(f"malformed fitted model file ({err.msg})", line=err.lineno) from None
    return fitted_from_dict(d)
