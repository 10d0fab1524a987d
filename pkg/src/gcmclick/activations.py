"""Parameter activation functions and the two M-step solvers.

An activation maps a covariate row and a weight vector to a probability in
(0, 1).  The M-step for one parameter maximizes the weighted log-loss

    sum_r |w_r| * [ 1{w_r > 0} log f(x_r) + 1{w_r < 0} log(1 - f(x_r)) ]

either in closed form (tabular activations) or numerically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .errors import DimensionError, MStepError, NumericGuardError

PROB_EPS = 1e-12


def clamp(p):
    """Clamp probabilities into ``[1e-12, 1 - 1e-12]``."""
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


class Activation:
    """Interface for activation functions.

    Subclasses implement :meth:`value_u` and :meth:`grad_u` over an
    unconstrained parametrization ``u`` of the weights.  :meth:`to_u` and
    :meth:`from_u` convert between stored weights and ``u``.  :meth:`hess_u`
    is optional; when it returns None the numeric solver falls back to
    gradient ascent.
    """

    kind = "custom"
    closed_form = False

    def n_weights(self) -> int:
        raise NotImplementedError

    def init_weights(self, rng=None) -> np.ndarray:
        raise NotImplementedError

    def to_u(self, weights):
        return np.asarray(weights, dtype=float)

    def from_u(self, u):
        return np.asarray(u, dtype=float)

    def check_covariates(self, x):
        return x

    def value_u(self, u, x):
        raise NotImplementedError

    def grad_u(self, u, x):
        """Jacobian of the values w.r.t. ``u``, shape ``(n_rows, len(u))``."""
        raise NotImplementedError

    def hess_u(self, u, x, coef):
        """Hessian of ``sum_r g(f_r)`` given ``coef = (dg/df, d2g/df2)``; None if unavailable."""
        return None

    def value(self, weights, x):
        """Activation value for covariate rows ``x`` under stored ``weights``."""
        x = self.check_covariates(x)
        return self.value_u(self.to_u(weights), x)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class TableActivation(Activation):
    """One probability per group; the covariate is an integer group index.

    With ``squash=False`` the stored weights are the probabilities themselves;
    with ``squash=True`` they are logits and the value is ``sigmoid(theta)``.
    A group index of -1 (unseen item) evaluates to the mean probability.
    """

    size: int
    squash: bool = False

    kind = "constant"
    closed_form = True

    def n_weights(self):
        return self.size

    def init_weights(self, rng=None):
        if rng is None:
            p = np.full(self.size, 0.5)
        else:
            p = rng.uniform(0.05, 0.95, size=self.size)
        return logit(p) if self.squash else p

    def probabilities(self, weights):
        w = np.asarray(weights, dtype=float)
        return expit(w) if self.squash else w

    def from_probabilities(self, p):
        p = np.asarray(p, dtype=float)
        return logit(p) if self.squash else p

    def to_u(self, weights):
        return logit(clamp(self.probabilities(weights)))

    def from_u(self, u):
        return self.from_probabilities(clamp(expit(u)))

    def check_covariates(self, x):
        x = np.asarray(x)
        if x.ndim != 1 or not np.issubdtype(x.dtype, np.integer):
            raise DimensionError("table activation expects a 1-D integer group index")
        if x.size and x.max() >= self.size:
            raise DimensionError(f"group index {x.max()} out of range for table of size {self.size}")
        return x

    def value(self, weights, x):
        x = self.check_covariates(x)
        return self._lookup(self.probabilities(weights), x)

    @staticmethod
    def _lookup(p, x):
        out = p[np.maximum(x, 0)]
        unseen = x < 0
        if unseen.any():
            out = np.where(unseen, p.mean(), out)
        return out

    def value_u(self, u, x):
        return self._lookup(expit(u), x)

    def grad_u(self, u, x):
        p = expit(u)
        g = np.zeros((len(x), self.size))
        rows = np.flatnonzero(x >= 0)
        g[rows, x[rows]] = p[x[rows]] * (1 - p[x[rows]])
        return g

    def grad_objective_u(self, u, x, dg):
        """Gradient of ``sum_r g(f_r)`` without forming the Jacobian."""
        p = expit(u)
        keep = x >= 0
        return np.bincount(x[keep], weights=dg[keep], minlength=self.size) * p * (1 - p)

    def hess_u(self, u, x, coef):
        dg, d2g = coef
        p = expit(u)
        s = p * (1 - p)
        keep = x >= 0
        g1 = np.bincount(x[keep], weights=dg[keep], minlength=self.size)
        g2 = np.bincount(x[keep], weights=d2g[keep], minlength=self.size)
        # separable, so only the diagonal is returned
        return g2 * s**2 + g1 * s * (1 - 2 * p)

    def to_dict(self):
        return {"kind": "constant", "size": self.size, "squash": self.squash}


@dataclass(frozen=True)
class LogisticActivation(Activation):
    """``sigmoid(theta[:arity] . x + theta[arity])``; weights include a trailing bias."""

    arity: int
    bias: bool = True

    kind = "logistic_linear"

    def n_weights(self):
        return self.arity + int(self.bias)

    def init_weights(self, rng=None):
        if rng is None:
            return np.zeros(self.n_weights())
        return rng.normal(0.0, 0.5, size=self.n_weights())

    def check_covariates(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and self.arity == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != self.arity:
            raise DimensionError(f"logistic activation expects covariates of arity {self.arity}, got shape {x.shape}")
        return x

    def _design(self, x):
        if self.bias:
            return np.hstack([x, np.ones((len(x), 1))])
        return x

    def value_u(self, u, x):
        return expit(self._design(x) @ u)

    def grad_u(self, u, x):
        X = self._design(x)
        p = expit(X @ u)
        return X * (p * (1 - p))[:, None]

    def grad_objective_u(self, u, x, dg):
        X = self._design(x)
        p = expit(X @ u)
        return X.T @ (dg * p * (1 - p))

    def hess_u(self, u, x, coef):
        dg, d2g = coef
        X = self._design(x)
        p = expit(X @ u)
        s = p * (1 - p)
        r = d2g * s**2 + dg * s * (1 - 2 * p)
        return (X * r[:, None]).T @ X

    def to_dict(self):
        return {"kind": "logistic_linear", "arity": self.arity, "bias": self.bias}


def activation_from_dict(d: dict) -> Activation:
    kind = d["kind"]
    if kind == "constant":
        return TableActivation(size=int(d["size"]), squash=bool(d.get("squash", False)))
    if kind == "logistic_linear":
        return LogisticActivation(arity=int(d["arity"]), bias=bool(d.get("bias", True)))
    raise ValueError(f"unknown activation kind {kind!r}")


def evaluate(f: Activation, weights, x) -> np.ndarray:
    """Evaluate an activation, guarded into ``[1e-12, 1 - 1e-12]``.

    Values that are NaN or outside ``[0, 1]`` raise :class:`NumericGuardError`;
    values that saturate to exactly 0 or 1 are clamped.
    """
    out = np.asarray(f.value(weights, x), dtype=float)
    ok = (out >= 0) & (out <= 1)
    if not np.all(ok):
        raise NumericGuardError(f"activation output {out[~ok][:3]} outside (0, 1)")
    return clamp(out)


# ---------------------------------------------------------------------------
# M-step


@dataclass
class MStepProblem:
    """Rows of covariates and signed weights for one parameter.

    Positive weights pull the activation towards 1, negative weights towards
    0.  Zero-weight rows are dropped on construction.
    """

    x: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        keep = self.w != 0
        if not keep.all():
            self.x = np.asarray(self.x)[keep]
            self.w = self.w[keep]
        if not np.all(np.isfinite(self.w)):
            raise MStepError("non-finite M-step weights")

    def __len__(self):
        return len(self.w)

    @property
    def h_plus(self):
        return np.where(self.w > 0, self.w, 0.0)

    @property
    def h_minus(self):
        return np.where(self.w < 0, -self.w, 0.0)


def objective(f: Activation, weights, problem: MStepProblem) -> float:
    """Weighted log-loss in the sign form: ``sum |w| [s log f + (1 - s) log(1 - f)]``."""
    if len(problem) == 0:
        return 0.0
    p = clamp(f.value(weights, problem.x))
    s = (np.sign(problem.w) + 1) / 2
    return float(np.sum(np.abs(problem.w) * (s * np.log(p) + (1 - s) * np.log1p(-p))))


def _objective_u(f, u, x, hp, hm):
    p = clamp(f.value_u(u, x))
    return float(np.sum(hp * np.log(p) + hm * np.log1p(-p)))


def objective_gradient(f: Activation, weights, problem: MStepProblem) -> np.ndarray:
    """Gradient of :func:`objective` with respect to the unconstrained weights."""
    x = f.check_covariates(problem.x)
    u = f.to_u(weights)
    return _gradient_u(f, u, x, problem.h_plus, problem.h_minus)


def _gradient_u(f, u, x, hp, hm):
    p = clamp(f.value_u(u, x))
    dg = hp / p - hm / (1 - p)
    if hasattr(f, "grad_objective_u"):
        return f.grad_objective_u(u, x, dg)
    return f.grad_u(u, x).T @ dg


def solve_closed_form(h_plus, h_minus):
    """Closed-form M-step ``h+ / (h+ + h-)`` clamped into ``[1e-12, 1 - 1e-12]``.

    Works elementwise on arrays.  Entries where both totals are zero return
    NaN, signalling an inactive parameter to be left unchanged.
    """
    hp = np.asarray(h_plus, dtype=float)
    hm = np.asarray(h_minus, dtype=float)
    if np.any(hp < 0) or np.any(hm < 0):
        raise ValueError("expected non-negative totals")
    tot = hp + hm
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(tot > 0, clamp(hp / np.where(tot > 0, tot, 1.0)), np.nan)
    return out if out.ndim else float(out)


def table_totals(f: TableActivation, problem: MStepProblem):
    """Per-group totals ``(h+, h-)`` of a tabular problem."""
    x = f.check_covariates(problem.x)
    keep = x >= 0
    hp = np.bincount(x[keep], weights=problem.h_plus[keep], minlength=f.size)
    hm = np.bincount(x[keep], weights=problem.h_minus[keep], minlength=f.size)
    return hp, hm


def solve_table_closed_form(f: TableActivation, weights, problem: MStepProblem) -> np.ndarray:
    """Closed-form update of every group of a tabular activation."""
    hp, hm = table_totals(f, problem)
    p = solve_closed_form(hp, hm)
    old = f.probabilities(weights)
    p = np.where(np.isnan(p), old, p)
    return f.from_probabilities(p)


@dataclass(frozen=True)
class SolverSettings:
    """Numeric M-step settings."""

    max_iter: int = 100
    grad_tol: float = 1e-6
    step_tol: float = 1e-11
    max_backtracks: int = 60
    newton: bool = True
    # debug mode: compare analytic gradients with finite differences before solving
    check_gradients: bool = False
    gradient_rtol: float = 1e-5


def gradient_error(f: Activation, weights, problem: MStepProblem, h: float = 1e-6) -> float:
    """Relative error of :func:`objective_gradient` against central differences.

    Intended for checking custom activations; the differences are taken in
    the unconstrained parametrization used by the solver.
    """
    x = f.check_covariates(problem.x)
    hp, hm = problem.h_plus, problem.h_minus
    u = np.array(f.to_u(weights), dtype=float)
    g = _gradient_u(f, u, x, hp, hm)
    fd = np.empty_like(u)
    for k in range(len(u)):
        e = np.zeros_like(u)
        e[k] = h
        fd[k] = (_objective_u(f, u + e, x, hp, hm) - _objective_u(f, u - e, x, hp, hm)) / (2 * h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))


def _newton_direction(H, g, scale):
    ridge = 1e-10 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        if H.ndim == 1:
            d = -g / (H - ridge)
        else:
            try:
                d = -np.linalg.solve(H - ridge * np.eye(len(g)), g)
            except np.linalg.LinAlgError:
                return None
    return d if np.all(np.isfinite(d)) else None


def solve_numeric(f: Activation, weights, problem: MStepProblem, settings: Optional[SolverSettings] = None):
    """Maximize the weighted log-loss numerically.

    Uses Newton steps when the activation provides a Hessian (falling back to
    the gradient direction when the Newton direction is not an ascent
    direction) and plain gradient ascent otherwise.  Every accepted step
    passes a backtracking sufficient-increase test, so the objective never
    decreases.

    Returns
    -------
    ndarray
        Updated stored weights.
    """
    settings = settings or SolverSettings()
    if len(problem) == 0:
        return np.array(weights, dtype=float, copy=True)
    if settings.check_gradients:
        err = gradient_error(f, weights, problem)
        if err > settings.gradient_rtol:
            raise MStepError(f"{f.kind} activation: analytic gradient off by relative error {err:.2e}")
    x = f.check_covariates(problem.x)
    hp, hm = problem.h_plus, problem.h_minus
    scale = max(1.0, float(np.sum(hp + hm)))
    u = np.array(f.to_u(weights), dtype=float)
    lo, hi = logit(PROB_EPS), logit(1 - PROB_EPS)
    bounded = isinstance(f, TableActivation)
    obj = _objective_u(f, u, x, hp, hm)
    if not np.isfinite(obj):
        raise MStepError("non-finite objective at start of M-step")
    for _ in range(settings.max_iter):
        g = _gradient_u(f, u, x, hp, hm)
        if not np.all(np.isfinite(g)):
            raise MStepError("non-finite gradient in M-step")
        gnorm = np.linalg.norm(g) / scale
        if gnorm == 0.0:
            break
        direction, newton = g / scale, False
        if settings.newton:
            p = clamp(f.value_u(u, x))
            coef = (hp / p - hm / (1 - p), -hp / p**2 - hm / (1 - p) ** 2)
            H = f.hess_u(u, x, coef)
            if H is not None:
                d = _newton_direction(H, g, scale)
                if d is not None and d @ g > 0:
                    direction, newton = d, True
        if not newton and gnorm <= settings.grad_tol:
            break
        slope = float(direction @ g)
        step = 1.0
        for _ in range(settings.max_backtracks):
            cand = u + step * direction
            if bounded:
                cand = np.clip(cand, lo, hi)
            new_obj = _objective_u(f, cand, x, hp, hm)
            if np.isfinite(new_obj) and new_obj >= obj + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break
        if new_obj < obj:
            break
        moved = np.max(np.abs(cand - u))
        u, obj = cand, new_obj
        if moved <= settings.step_tol:
            break
    return f.from_u(u)
