"""Forward-backward E-step, per-parameter M-step and the EM driver.

Two implementations of the E-step live here.  The dense functions
(:func:`forward`, :func:`backward`, :func:`expected_transitions`) follow the
vectorized recursions on explicit ``K x K`` matrices for a single session and
are meant for inspection and testing.  :func:`e_step` runs the same
recursions batched over sessions on the sparse entry lists produced by the
transition compiler, and is what :func:`fit` uses.

All forward tables are rescaled per column to avoid underflow; the log of
each column's normalizer is kept so that unscaled quantities and the
log-likelihood can be recovered.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .activations import (
    MStepProblem,
    SolverSettings,
    evaluate,
    objective,
    solve_numeric,
    solve_table_closed_form,
)
from .errors import DegenerateSessionError, MStepError
from .transitions import entry_values

# ---------------------------------------------------------------------------
# dense single-session recursions


def _mask(D, y, t):
    return D[:, t] if y[t - 1] else 1.0 - D[:, t]


@dataclass
class ForwardPass:
    """Scaled forward table ``alpha_hat`` of shape ``(K, T+1)`` and log normalizers ``(T,)``."""

    alpha_hat: np.ndarray
    log_scale: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        """Unscaled ``alpha[k, t] = P(y_1..y_t, z_t = k)``."""
        cum = np.concatenate([[0.0], np.cumsum(self.log_scale)])
        return self.alpha_hat * np.exp(cum)[None, :]

    @property
    def loglik(self) -> float:
        return float(np.sum(self.log_scale))


@dataclass
class BackwardPass:
    """Backward table ``beta_hat`` of shape ``(K, T+1)``; scaled when ``log_scale`` is set."""

    beta_hat: np.ndarray
    log_scale: Optional[np.ndarray] = None

    @property
    def beta(self) -> np.ndarray:
        """Unscaled ``beta[k, t] = P(y_{t+1}..y_T | z_t = k)``."""
        if self.log_scale is None:
            return self.beta_hat
        rev = np.concatenate([np.cumsum(self.log_scale[::-1])[::-1], [0.0]])
        return self.beta_hat * np.exp(rev)[None, :]


def forward(M, y, D, scaled: bool = True) -> ForwardPass:
    """Forward recursion for one session.

    Parameters
    ----------
    M : ndarray, shape (T, K, K)
        ``M[t-1]`` is the transition matrix between positions ``t-1`` and ``t``.
    y : array of {0, 1}, shape (T,)
    D : ndarray, shape (K, T+1)
        Click-state indicators; column 0 is the virtual click at position 0.
    scaled : bool
        Normalize every column (the default).  With ``scaled=False`` the
        table holds raw joint probabilities and ``log_scale`` is zero.
    """
    M = np.asarray(M, dtype=float)
    T, K = M.shape[0], M.shape[1]
    A = np.zeros((K, T + 1))
    A[:, 0] = D[:, 0]
    logc = np.zeros(T)
    for t in range(1, T + 1):
        col = _mask(D, y, t) * (M[t - 1].T @ A[:, t - 1])
        s = col.sum()
        if not s > 0:
            raise DegenerateSessionError(f"observed clicks impossible at position {t}", position=t)
        if scaled:
            col = col / s
            logc[t - 1] = math.log(s)
        A[:, t] = col
    return ForwardPass(A, logc)


def backward(M, y, D, log_scale=None) -> BackwardPass:
    """Backward recursion; pass the forward ``log_scale`` to get the matching scaled table."""
    M = np.asarray(M, dtype=float)
    T, K = M.shape[0], M.shape[1]
    B = np.zeros((K, T + 1))
    B[:, T] = 1.0
    for t in range(T, 0, -1):
        lam = _mask(D, y, t) * B[:, t]
        col = M[t - 1] @ lam
        if log_scale is not None:
            col = col / math.exp(log_scale[t - 1])
        B[:, t - 1] = col
    if not B[:, 0].any():
        raise DegenerateSessionError("observed clicks impossible under the model", position=0)
    return BackwardPass(B, None if log_scale is None else np.asarray(log_scale))


def expected_transitions(fwd: ForwardPass, bwd: BackwardPass, M, y, D) -> np.ndarray:
    """Posterior transition tables ``H[t-1][k', k] = P(z_{t-1}=k', z_t=k | y)``, shape ``(T, K, K)``."""
    M = np.asarray(M, dtype=float)
    T = M.shape[0]
    scaled = bwd.log_scale is not None
    if scaled:
        A, B = fwd.alpha_hat, bwd.beta_hat
        norm = np.exp(fwd.log_scale)
    else:
        A, B = fwd.alpha, bwd.beta
        total = A[:, T].sum()
        if not total > 0:
            raise DegenerateSessionError("zero session likelihood", position=T)
        norm = np.full(T, total)
    H = np.empty_like(M)
    for t in range(1, T + 1):
        lam = _mask(D, y, t) * B[:, t]
        H[t - 1] = np.outer(A[:, t - 1], lam) * M[t - 1]
        H[t - 1] /= norm[t - 1] if scaled else norm[0]
    return H


def state_posteriors(H: np.ndarray) -> np.ndarray:
    """Marginal posteriors ``zeta[k, t] = P(z_t = k | y)`` for ``t = 1..T``, shape ``(K, T)``."""
    return H.sum(axis=1).T


def session_loglik(fwd: ForwardPass) -> float:
    """Log-likelihood ``log sum_k alpha[k, T]`` of one session (scaled or unscaled table)."""
    tail = fwd.alpha_hat[:, -1].sum()
    if not tail > 0:
        raise DegenerateSessionError("zero session likelihood")
    return float(np.sum(fwd.log_scale) + math.log(tail))


# ---------------------------------------------------------------------------
# batched sparse E-step


@dataclass
class PreparedData:
    """Session log paired with a model: compiled positions and cached covariates."""

    model: object
    log: object
    compiled: list
    covariates: dict
    masks_click: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, model, log):
        if log.list_size != model.list_size:
            from .errors import SchemaError

            raise SchemaError(f"sessions have {log.list_size} positions, model expects {model.list_size}")
        compiled = model.compiled()
        cov = {}
        for cp in compiled:
            cov[cp.t] = [model.parameters[name].selector(log, cp.t, slot) for name, slot in cp.terms]
        D = model.space.click_indicator()
        return cls(model, log, compiled, cov, D)


@dataclass
class EStepResult:
    """Per-session log-likelihoods and per-position term weights.

    ``w_plus[t-1]`` and ``w_minus[t-1]`` have shape ``(n, J_t)``: the
    posterior mass of entries on which term ``j`` acts positively and
    negatively.
    """

    loglik: np.ndarray
    w_plus: list
    w_minus: list

    @property
    def total_loglik(self) -> float:
        return math.fsum(self.loglik.tolist())


def _rmul(dense, S):
    """``dense @ S`` for a sparse ``S``, returned as a dense C-ordered array."""
    return np.ascontiguousarray((S.T @ dense.T).T)


def _estep_chunk(data: PreparedData, params, rows: slice, offset: int):
    model = data.model
    K = model.n_states
    D = data.masks_click
    clicks = data.log.clicks[rows]
    n = clicks.shape[0]
    T = model.list_size
    cov = {t: [x[rows] for x in xs] for t, xs in data.covariates.items()}
    alphas = np.empty((T + 1, n, K))
    alphas[0] = D[:, 0][None, :]
    logc = np.empty((n, T))
    vals_t, masks = [], []
    for cp in data.compiled:
        t = cp.t
        theta = np.empty((n, len(cp.terms)))
        for j, (name, _) in enumerate(cp.terms):
            theta[:, j] = evaluate(model.parameters[name].activation, params[name], cov[t][j])
        vals = entry_values(cp, theta)
        pred = _rmul(alphas[t - 1][:, cp.src] * vals, cp.sparse[0])
        mask = np.where(clicks[:, t - 1, None] == 1, D[:, t][None, :], 1.0 - D[:, t][None, :])
        a = pred * mask
        s = a.sum(axis=1)
        bad = np.flatnonzero(~(s > 0))
        if bad.size:
            i = offset + int(bad[0])
            raise DegenerateSessionError(
                f"session {i}: observed clicks impossible at position {t}", session=i, position=t
            )
        alphas[t] = a / s[:, None]
        logc[:, t - 1] = np.log(s)
        vals_t.append(vals)
        masks.append(mask)
    w_plus = [None] * T
    w_minus = [None] * T
    b = np.ones((n, K))
    for cp in reversed(data.compiled):
        t = cp.t
        c = np.exp(logc[:, t - 1])[:, None]
        lam = masks[t - 1] * b
        ev = vals_t[t - 1] * lam[:, cp.dst]
        h = alphas[t - 1][:, cp.src] * ev / c
        w_plus[t - 1] = _rmul(h, cp.sparse[2])
        w_minus[t - 1] = _rmul(h, cp.sparse[3])
        b = _rmul(ev, cp.sparse[1]) / c
    return logc.sum(axis=1), w_plus, w_minus


def _chunks(n, chunk_size):
    return [slice(a, min(a + chunk_size, n)) for a in range(0, n, chunk_size)] or [slice(0, 0)]


def e_step(data: PreparedData, params: Mapping, chunk_size: int = 4096, threads: int = 1) -> EStepResult:
    """Run forward-backward on every session and aggregate term weights.

    Chunks are processed independently and concatenated in session order,
    so the result does not depend on ``threads``.
    """
    n = data.log.n_sessions
    chunks = _chunks(n, chunk_size)
    jobs = [(data, params, sl, sl.start) for sl in chunks]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _estep_chunk(*a), jobs))
    else:
        parts = [_estep_chunk(*a) for a in jobs]
    T = data.model.list_size
    loglik = np.concatenate([p[0] for p in parts])
    w_plus = [np.concatenate([p[1][t] for p in parts]) for t in range(T)]
    w_minus = [np.concatenate([p[2][t] for p in parts]) for t in range(T)]
    return EStepResult(loglik, w_plus, w_minus)


def weight_tensor(data: PreparedData, estep: EStepResult, name: str):
    """Per-(t, term, session) weights of one parameter as ``(w_plus, w_minus)`` lists of ``(n, J_t^p)`` arrays."""
    wp, wm = [], []
    for cp in data.compiled:
        cols = [j for j, (pname, _) in enumerate(cp.terms) if pname == name]
        wp.append(estep.w_plus[cp.t - 1][:, cols])
        wm.append(estep.w_minus[cp.t - 1][:, cols])
    return wp, wm


def build_problems(data: PreparedData, estep: EStepResult) -> dict:
    """Assemble the M-step problem of every parameter from the E-step weights.

    Each (position, term, session) contributes a positive row with its
    ``w_plus`` and a negative row with ``-w_minus``; zero rows are dropped.
    """
    xs = {name: [] for name in data.model.parameters}
    ws = {name: [] for name in data.model.parameters}
    for cp in data.compiled:
        t = cp.t
        for j, (name, _) in enumerate(cp.terms):
            x = data.covariates[t][j]
            xs[name] += [x, x]
            ws[name] += [estep.w_plus[t - 1][:, j], -estep.w_minus[t - 1][:, j]]
    out = {}
    for name, spec in data.model.parameters.items():
        if xs[name]:
            out[name] = MStepProblem(np.concatenate(xs[name]), np.concatenate(ws[name]))
        else:
            empty_x = np.zeros(0, dtype=np.int64) if spec.activation.closed_form else np.zeros((0, 1))
            out[name] = MStepProblem(empty_x, np.zeros(0))
    return out


def m_step(model, params: Mapping, problems: Mapping, settings: Optional[SolverSettings] = None, iteration=None) -> dict:
    """Update every parameter independently."""
    new = {}
    for name, spec in model.parameters.items():
        prob = problems[name]
        old = np.asarray(params[name], dtype=float)
        try:
            if spec.use_closed_form():
                upd = solve_table_closed_form(spec.activation, old, prob)
            else:
                upd = solve_numeric(spec.activation, old, prob, settings)
        except MStepError as err:
            raise MStepError(f"parameter {name!r}, iteration {iteration}: {err}", name, iteration) from err
        if not np.all(np.isfinite(upd)):
            raise MStepError(f"parameter {name!r}, iteration {iteration}: non-finite update", name, iteration)
        new[name] = np.asarray(upd, dtype=float)
    return new


def q_value(model, params: Mapping, problems: Mapping) -> float:
    """Sum over parameters of the weighted log-loss objectives (the expected complete-data log-likelihood)."""
    return math.fsum(objective(spec.activation, params[name], problems[name]) for name, spec in model.parameters.items())


# ---------------------------------------------------------------------------
# driver


@dataclass
class FitReport:
    """Convergence trace of one EM run.

    ``loglik_trace[k]`` is the batch log-likelihood at the parameters that
    entered iteration ``k``; ``delta_trace[k]`` is the L1 parameter change
    made by that iteration.  ``final_loglik`` is evaluated at the returned
    parameters.
    """

    iterations: int = 0
    loglik_trace: list = field(default_factory=list)
    delta_trace: list = field(default_factory=list)
    converged: bool = False
    final_loglik: Optional[float] = None

    def records(self):
        for k, (ll, d) in enumerate(zip(self.loglik_trace, self.delta_trace)):
            yield {"iteration": k, "loglik": ll, "delta": d}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "loglik_trace": list(self.loglik_trace),
            "delta_trace": list(self.delta_trace),
            "converged": self.converged,
            "final_loglik": self.final_loglik,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class IterationInfo:
    """Passed to the ``callback`` of :func:`fit` after every M-step."""

    iteration: int
    params: dict
    new_params: dict
    problems: dict
    loglik: float
    delta: float


@dataclass
class FittedModel:
    """Fitted parameters together with the model they belong to."""

    model: object
    params: dict
    report: FitReport
    item_ids: list = field(default_factory=list)

    def probabilities(self, name: str) -> np.ndarray:
        """Parameter values as probabilities (tabular activations only)."""
        act = self.model.parameters[name].activation
        return act.probabilities(self.params[name])


def _flatten(model, params):
    return np.concatenate([np.ravel(np.asarray(params[name], dtype=float)) for name in model.parameters])


def fit(
    model,
    data,
    init: Optional[Mapping] = None,
    epsilon: float = 1e-4,
    max_iter: int = 200,
    *,
    seed: Optional[int] = None,
    threads: int = 1,
    chunk_size: int = 4096,
    settings: Optional[SolverSettings] = None,
    callback: Optional[Callable[[IterationInfo], None]] = None,
) -> FittedModel:
    """Estimate model parameters by EM.

    Iterates E-step, weight aggregation and per-parameter M-steps until the
    L1 change of the concatenated parameter vector is at most ``epsilon`` or
    ``max_iter`` iterations have run.

    Parameters
    ----------
    model : ModelDefinition
    data : SessionLog
    init : mapping, optional
        Starting weights per parameter.  Missing entries use the defaults
        (probability 0.5), or a random restart when ``seed`` is given.
    """
    rng = np.random.default_rng(seed) if seed is not None else None
    params = model.init_params(rng)
    if init:
        for name, w in init.items():
            if name not in params:
                from .errors import DefinitionError

                raise DefinitionError(f"init references undeclared parameter {name!r}")
            params[name] = np.array(w, dtype=float, copy=True).reshape(np.shape(params[name]))
    prepared = PreparedData.build(model, data)
    report = FitReport()
    for it in range(max_iter):
        est = e_step(prepared, params, chunk_size=chunk_size, threads=threads)
        ll = est.total_loglik
        problems = build_problems(prepared, est)
        new = m_step(model, params, problems, settings, iteration=it)
        delta = float(np.sum(np.abs(_flatten(model, new) - _flatten(model, params))))
        if not np.isfinite(delta):
            raise MStepError(f"iteration {it}: non-finite parameter change", iteration=it)
        report.loglik_trace.append(ll)
        report.delta_trace.append(delta)
        report.iterations = it + 1
        if callback is not None:
            callback(IterationInfo(it, params, new, problems, ll, delta))
        params = new
        if delta <= epsilon:
            report.converged = True
            break
    if data.n_sessions:
        report.final_loglik = e_step(prepared, params, chunk_size=chunk_size, threads=threads).total_loglik
    return FittedModel(model, params, report, list(data.item_ids))


def batch_loglik(model, params, data, chunk_size: int = 4096, threads: int = 1) -> float:
    """Observed-data log-likelihood of a session log."""
    prepared = PreparedData.build(model, data)
    return e_step(prepared, params, chunk_size=chunk_size, threads=threads).total_loglik
