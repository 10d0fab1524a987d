"""Symbolic transition factorizations and their compiled numeric form.

Every transition probability of a cascade model is a product of independent
Bernoulli factors.  A :class:`Factorization` lists, for each position ``t``
and each allowed transition ``(src, dst)``, the literals of that product: a
parameter term ``(name, slot)`` entering either as ``theta`` (positive
literal) or ``1 - theta`` (negative literal).  An entry with no literals is
the constant 1; transitions not listed are impossible.

From this one description the compiler derives both the transition matrices
used by the E-step and the signed activation matrices used by the M-step, so
the two can never disagree.
"""

from __future__ import annotations

import json
import re
from functools import cached_property
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .activations import Activation, activation_from_dict, evaluate
from .covariates import selector_from_dict
from .errors import DefinitionError, DimensionError


@dataclass(frozen=True)
class Literal:
    param: str
    positive: bool
    slot: Optional[int] = None

    @property
    def term(self):
        return (self.param, self.slot)

    def __str__(self):
        s = ("+" if self.positive else "-") + self.param
        return s if self.slot is None else f"{s}[{self.slot}]"


def pos(param, slot=None):
    return Literal(param, True, slot)


def neg(param, slot=None):
    return Literal(param, False, slot)


@dataclass(frozen=True)
class Entry:
    src: int
    dst: int
    literals: tuple = ()

    def __post_init__(self):
        seen = set()
        for lit in self.literals:
            if lit.param in seen:
                raise DefinitionError(f"parameter {lit.param!r} appears twice in transition {self.src}->{self.dst}")
            seen.add(lit.param)


@dataclass(frozen=True)
class ParameterSpec:
    """A model parameter: activation function plus covariate selector.

    ``solver`` is ``"auto"`` (closed form where available), ``"closed"`` or
    ``"numeric"``.
    """

    name: str
    activation: Activation
    selector: object
    solver: str = "auto"

    def to_dict(self):
        return {
            "activation": self.activation.to_dict(),
            "selector": self.selector.to_dict(),
            "solver": self.solver,
        }

    @classmethod
    def from_dict(cls, name, d):
        return cls(name, activation_from_dict(d["activation"]), selector_from_dict(d["selector"]), d.get("solver", "auto"))

    def use_closed_form(self):
        if self.solver == "numeric":
            return False
        if self.solver == "closed" and not self.activation.closed_form:
            raise DefinitionError(f"parameter {self.name!r} has no closed-form M-step")
        return self.activation.closed_form


@dataclass(frozen=True)
class Factorization:
    """Per-position transition entries over a ``n_states`` state space.

    ``entries[t]`` holds the entries used between positions ``t - 1`` and
    ``t`` for ``t = 1..n_positions``.
    """

    n_states: int
    n_positions: int
    entries: Mapping[int, tuple]

    def __post_init__(self):
        for t in range(1, self.n_positions + 1):
            ents = self.entries.get(t, ())
            seen = set()
            for e in ents:
                if not (0 <= e.src < self.n_states and 0 <= e.dst < self.n_states):
                    raise DefinitionError(f"entry {e.src}->{e.dst} at position {t} outside {self.n_states} states")
                if (e.src, e.dst) in seen:
                    raise DefinitionError(f"duplicate entry {e.src}->{e.dst} at position {t}")
                seen.add((e.src, e.dst))

    def at(self, t) -> tuple:
        return tuple(self.entries.get(t, ()))

    def parameter_names(self) -> set:
        return {lit.param for ents in self.entries.values() for e in ents for lit in e.literals}

    def terms(self, t) -> list:
        """Distinct ``(param, slot)`` terms used at position ``t``, in first-use order."""
        out = []
        for e in self.at(t):
            for lit in e.literals:
                if lit.term not in out:
                    out.append(lit.term)
        return out

    # text format -------------------------------------------------------

    def to_text(self) -> str:
        """One line per distinct entry: ``t=<pattern> <src> <dst> <literals or 1>``."""
        groups = {}
        for t in range(1, self.n_positions + 1):
            for e in self.at(t):
                groups.setdefault(e, []).append(t)
        lines = [f"states {self.n_states}", f"positions {self.n_positions}"]
        for e, ts in sorted(groups.items(), key=lambda kv: (kv[1][0], kv[0].src, kv[0].dst, str(kv[0].literals))):
            lits = " ".join(str(lit) for lit in e.literals) or "1"
            lines.append(f"t={format_positions(ts)} {e.src} {e.dst} {lits}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Factorization":
        n_states = n_positions = None
        pending = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, *rest = line.split()
            if head == "states":
                n_states = int(rest[0])
            elif head == "positions":
                n_positions = int(rest[0])
            elif head.startswith("t="):
                pending.append((lineno, head[2:], rest))
        if n_states is None or n_positions is None:
            raise DefinitionError("factorization text needs 'states' and 'positions' lines")
        entries = {t: [] for t in range(1, n_positions + 1)}
        for lineno, pattern, rest in pending:
            if len(rest) < 3:
                raise DefinitionError(f"line {lineno}: expected '<src> <dst> <literals>'")
            src, dst = int(rest[0]), int(rest[1])
            lits = rest[2:]
            if lits == ["0"]:
                continue
            literals = () if lits == ["1"] else tuple(parse_literal(s, lineno) for s in lits)
            for t in parse_positions(pattern, n_positions):
                entries[t].append(Entry(src, dst, literals))
        return cls(n_states, n_positions, {t: tuple(v) for t, v in entries.items()})


_LIT = re.compile(r"^([+-])([A-Za-z_][\w.]*)(?:\[(-?\d+)\])?$")


def parse_literal(s: str, lineno=None) -> Literal:
    m = _LIT.match(s)
    if not m:
        where = f"line {lineno}: " if lineno else ""
        raise DefinitionError(f"{where}bad literal {s!r}")
    slot = int(m.group(3)) if m.group(3) is not None else None
    return Literal(m.group(2), m.group(1) == "+", slot)


def format_positions(ts: Sequence[int]) -> str:
    """Compact range notation, e.g. ``[1, 2, 3, 5]`` -> ``"1..3,5"``."""
    ts = sorted(ts)
    parts, start, prev = [], ts[0], ts[0]
    for t in ts[1:] + [None]:
        if t is not None and t == prev + 1:
            prev = t
            continue
        parts.append(str(start) if start == prev else f"{start}..{prev}")
        if t is not None:
            start = prev = t
    return ",".join(parts)


def parse_positions(pattern: str, n_positions: int) -> list:
    if pattern == "*":
        return list(range(1, n_positions + 1))
    out = []
    for part in pattern.split(","):
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    for t in out:
        if not 1 <= t <= n_positions:
            raise DefinitionError(f"position {t} outside 1..{n_positions}")
    return out


# ---------------------------------------------------------------------------
# compilation


@dataclass
class CompiledPosition:
    """Numeric form of the entries at one position.

    ``lit_term``/``lit_sign`` are ``(E, L)`` arrays giving, per entry, the
    index of each literal's term and its sign (+1, -1, or 0 for padding).
    ``plus``/``minus`` are ``(E, J)`` incidence matrices of entries on which
    each term acts positively/negatively.
    """

    t: int
    src: np.ndarray
    dst: np.ndarray
    terms: list
    lit_term: np.ndarray
    lit_sign: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    src_onehot: np.ndarray = field(repr=False)
    dst_onehot: np.ndarray = field(repr=False)

    @property
    def n_entries(self):
        return len(self.src)

    @cached_property
    def literal_codes(self) -> np.ndarray:
        """Column of each literal in ``[theta, 1 - theta, 1]``, shape ``(E, L)``."""
        J = len(self.terms)
        return np.where(self.lit_sign > 0, self.lit_term, np.where(self.lit_sign < 0, J + self.lit_term, 2 * J))

    @cached_property
    def sparse(self):
        """CSC forms of ``(dst_onehot, src_onehot, plus, minus)`` for fast right-multiplication."""
        return tuple(sp.csc_matrix(m) for m in (self.dst_onehot, self.src_onehot, self.plus, self.minus))


def compile_position(entries, t, n_states) -> CompiledPosition:
    terms = []
    for e in entries:
        for lit in e.literals:
            if lit.term not in terms:
                terms.append(lit.term)
    index = {term: j for j, term in enumerate(terms)}
    E, J = len(entries), len(terms)
    L = max([len(e.literals) for e in entries] + [1])
    lit_term = np.zeros((E, L), dtype=np.int64)
    lit_sign = np.zeros((E, L), dtype=np.int8)
    plus = np.zeros((E, J))
    minus = np.zeros((E, J))
    for r, e in enumerate(entries):
        for l, lit in enumerate(e.literals):
            j = index[lit.term]
            lit_term[r, l] = j
            lit_sign[r, l] = 1 if lit.positive else -1
            (plus if lit.positive else minus)[r, j] = 1.0
    src = np.array([e.src for e in entries], dtype=np.int64)
    dst = np.array([e.dst for e in entries], dtype=np.int64)
    src_onehot = np.zeros((E, n_states))
    dst_onehot = np.zeros((E, n_states))
    src_onehot[np.arange(E), src] = 1.0
    dst_onehot[np.arange(E), dst] = 1.0
    return CompiledPosition(t, src, dst, terms, lit_term, lit_sign, plus, minus, src_onehot, dst_onehot)


def compile_factorization(f: Factorization, parameters: Optional[Mapping] = None) -> list:
    """Compile every position; checks that referenced parameters are declared."""
    if parameters is not None:
        unknown = f.parameter_names() - set(parameters)
        if unknown:
            raise DefinitionError(f"factorization references undeclared parameters {sorted(unknown)}")
    return [compile_position(f.at(t), t, f.n_states) for t in range(1, f.n_positions + 1)]


def compile_activation_matrices(f: Factorization, space=None, parameters=None) -> dict:
    """Signed activation matrices keyed by ``(t, param, slot)``.

    Entry ``[src, dst]`` is +1 where the term enters the transition as
    ``theta``, -1 where it enters as ``1 - theta`` and 0 elsewhere.
    """
    K = f.n_states if space is None else space.size
    if K != f.n_states:
        raise DimensionError(f"factorization has {f.n_states} states, state space {K}")
    out = {}
    for cp in compile_factorization(f, parameters):
        for j, (name, slot) in enumerate(cp.terms):
            I = np.zeros((K, K), dtype=np.int8)
            I[cp.src, cp.dst] = (cp.plus[:, j] - cp.minus[:, j]).astype(np.int8)
            out[(cp.t, name, slot)] = I
    return out


def entry_values(cp: CompiledPosition, theta: np.ndarray) -> np.ndarray:
    """Transition probabilities of every entry, shape ``(n, E)``, given term values ``(n, J)``."""
    n = theta.shape[0]
    if not cp.terms:
        return np.ones((n, cp.n_entries))
    ext = np.hstack([theta, 1.0 - theta, np.ones((n, 1))])
    codes = cp.literal_codes
    vals = ext[:, codes[:, 0]]
    for l in range(1, codes.shape[1]):
        vals *= ext[:, codes[:, l]]
    return vals


def dense_transitions(cp: CompiledPosition, vals: np.ndarray, n_states: int) -> np.ndarray:
    """Scatter entry values into dense ``(n, K, K)`` matrices."""
    M = np.zeros((vals.shape[0], n_states, n_states))
    M[:, cp.src, cp.dst] = vals
    return M


def term_values(cp: CompiledPosition, parameters: Mapping, params: Mapping, log, covariate_cache=None) -> np.ndarray:
    """Evaluate every term at position ``cp.t`` for all sessions of ``log``; shape ``(n, J)``."""
    theta = np.empty((log.n_sessions, len(cp.terms)))
    for j, (name, slot) in enumerate(cp.terms):
        spec = parameters[name]
        if covariate_cache is not None:
            x = covariate_cache[cp.t][j]
        else:
            x = spec.selector(log, cp.t, slot)
        theta[:, j] = evaluate(spec.activation, params[name], x)
    return theta


def evaluate_transitions(f: Factorization, parameters: Mapping, params: Mapping, log, t: int) -> np.ndarray:
    """Dense transition matrices between positions ``t - 1`` and ``t``, shape ``(n, K, K)``."""
    if not 1 <= t <= f.n_positions:
        raise DimensionError(f"position {t} outside 1..{f.n_positions}")
    cp = compile_position(f.at(t), t, f.n_states)
    missing = {name for name, _ in cp.terms} - set(parameters)
    if missing:
        raise DefinitionError(f"undeclared parameters {sorted(missing)}")
    theta = term_values(cp, parameters, params, log)
    return dense_transitions(cp, entry_values(cp, theta), f.n_states)


@dataclass
class ValidationReport:
    """Findings of :func:`validate_factorization`.

    ``bad_rows`` lists ``(t, src, max_abs_deviation)`` for rows whose
    probabilities do not sum to one; ``empty_rows`` lists ``(t, src)`` rows
    without outgoing transitions (unreachable or undeclared).
    """

    bad_rows: list
    empty_rows: list
    n_draws: int

    @property
    def ok(self):
        return not self.bad_rows


def validate_factorization(f: Factorization, space=None, n_draws: int = 100, seed: int = 0, tol: float = 1e-12):
    """Check row sums on random term values drawn uniformly from (0, 1).

    Each term ``(param, slot)`` at each position gets an independent draw,
    so the check covers every parameter value a model could take.
    """
    if space is not None and space.size != f.n_states:
        raise DimensionError(f"factorization has {f.n_states} states, state space {space.size}")
    rng = np.random.default_rng(seed)
    bad, empty = [], []
    for cp in compile_factorization(f):
        theta = rng.uniform(0.0, 1.0, size=(n_draws, len(cp.terms)))
        vals = entry_values(cp, theta)
        sums = vals @ cp.src_onehot  # (n_draws, K)
        has_out = cp.src_onehot.sum(axis=0) > 0
        for k in range(f.n_states):
            if not has_out[k]:
                empty.append((cp.t, k))
                continue
            dev = float(np.max(np.abs(sums[:, k] - 1.0)))
            if dev > tol:
                bad.append((cp.t, k, dev))
    return ValidationReport(bad, empty, n_draws)


def parameters_to_text(parameters: Mapping) -> str:
    return "".join(f"param {name} {json.dumps(spec.to_dict(), sort_keys=True)}\n" for name, spec in parameters.items())


def parameters_from_text(text: str) -> dict:
    out = {}
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("param "):
            _, name, payload = line.split(" ", 2)
            out[name] = ParameterSpec.from_dict(name, json.loads(payload))
    return out
