"""Built-in click models written as factorized transition chains.

CZM (a dynamic Bayesian network model with attraction, satisfaction and
continuation) and UBM (user browsing model, examination depending on the
distance to the last click) are provided as :class:`ModelDefinition` objects:
a state space, a symbolic transition factorization and parameter specs.
"""

from __future__ import annotations

import json

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .activations import LogisticActivation, TableActivation
from .covariates import ConstantSelector, ItemFeatureSelector, ItemSelector, SlotSelector
from .errors import DefinitionError
from .state_space import StateSpace, augment_for_emission, build_state_space
from .transitions import (
    Entry,
    Factorization,
    ParameterSpec,
    compile_factorization,
    neg,
    parameters_from_text,
    parameters_to_text,
    pos,
    validate_factorization,
)

# Eq.-style parameter symbols accepted as aliases of the canonical names.
ALIASES = {
    "phi_A": "attraction",
    "phi_R": "attraction",
    "relevance": "attraction",
    "phi_S": "satisfaction",
    "gamma": "continuation",
}


def canonical_name(name: str) -> str:
    return ALIASES.get(name, name)


@dataclass(frozen=True)
class ModelDefinition:
    """Everything the EM engine needs to fit one cascade model."""

    name: str
    space: StateSpace
    factorization: Factorization
    parameters: Mapping[str, ParameterSpec]
    options: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.space.size != self.factorization.n_states:
            raise DefinitionError(
                f"state space has {self.space.size} states, factorization {self.factorization.n_states}"
            )
        if self.space.n_positions != self.factorization.n_positions:
            raise DefinitionError("state space and factorization disagree on the list size")
        unknown = self.factorization.parameter_names() - set(self.parameters)
        if unknown:
            raise DefinitionError(f"factorization references undeclared parameters {sorted(unknown)}")
        for name, spec in self.parameters.items():
            if spec.name != name:
                raise DefinitionError(f"parameter key {name!r} does not match spec name {spec.name!r}")

    @property
    def n_states(self):
        return self.space.size

    @property
    def list_size(self):
        return self.factorization.n_positions

    def compiled(self):
        cache = self.__dict__.get("_compiled")
        if cache is None:
            cache = compile_factorization(self.factorization, self.parameters)
            object.__setattr__(self, "_compiled", cache)
        return cache

    def init_params(self, rng=None) -> dict:
        """Default starting weights (probability 0.5 everywhere) or a random restart."""
        return {name: spec.activation.init_weights(rng) for name, spec in self.parameters.items()}

    def validate(self, n_draws=100, seed=0):
        return validate_factorization(self.factorization, self.space, n_draws=n_draws, seed=seed)

    def to_text(self) -> str:
        """Declarative definition: state space, parameters and factorization."""
        sp = self.space
        lines = [
            "# gcm-model v1",
            f"name {self.name}",
            f"absorbing {'-' if sp.absorbing is None else sp.absorbing}",
            "click " + " ".join(str(c) for c in sp.click_states),
            "space " + json.dumps(sp.to_dict()),
        ]
        return "\n".join(lines) + "\n" + parameters_to_text(self.parameters) + self.factorization.to_text()

    @classmethod
    def from_text(cls, text: str) -> "ModelDefinition":
        name, absorbing, clicks, space = "custom", None, None, None
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if line.startswith("name "):
                name = line.split(None, 1)[1]
            elif line.startswith("absorbing "):
                v = line.split()[1]
                absorbing = None if v == "-" else int(v)
            elif raw.startswith("space "):
                space = StateSpace.from_dict(json.loads(raw.split(None, 1)[1]))
            elif line.startswith("click "):
                clicks = [int(c) for c in line.split()[1:]]
        f = Factorization.from_text(text)
        if clicks is None:
            raise DefinitionError("model text needs a 'click' line with T+1 click states")
        if len(clicks) != f.n_positions + 1:
            raise DefinitionError(f"'click' line lists {len(clicks)} states, expected {f.n_positions + 1}")
        if absorbing is not None and absorbing != f.n_states - 1:
            raise DefinitionError("absorbing state must be the last state")
        if space is None:
            space = StateSpace.plain(f.n_states, clicks, absorbing=absorbing is not None)
        return cls(name, space, f, parameters_from_text(text))


# ---------------------------------------------------------------------------
# CZM

CZM_BITS = ("attraction", "examination", "satisfied_prev")


def czm_state_space(list_size: int) -> StateSpace:
    """Seven states: index ``R + 2E + 4S`` for feasible ``(S, E)`` plus absorbing 6.

    States with ``S = 1, E = 1`` are infeasible; state 3 ``(R=1, E=1, S=0)`` is
    the click state at every position.
    """
    return build_state_space(
        n_bits=3,
        feasible=lambda v: not (v[1] and v[2]),
        click_state_rule=lambda t: (1, 1, 0),
        absorbing=True,
        n_positions=list_size,
        bit_names=CZM_BITS,
    )


def czm_factorization(list_size: int) -> Factorization:
    A, S, G = "attraction", "satisfaction", "continuation"
    O = 6
    entries = {}
    for t in range(1, list_size + 1):
        ents = [Entry(k, O) for k in (0, 1, 4, 5, 6)]
        if t == 1:
            # E_1 = 1 and no satisfaction before the first item
            for k in (2, 3):
                ents += [Entry(k, 2, (neg(A),)), Entry(k, 3, (pos(A),))]
        else:
            for a in (False, True):
                la = pos(A) if a else neg(A)
                ents.append(Entry(2, 0 + a, (neg(G), la)))
                ents.append(Entry(2, 2 + a, (pos(G), la)))
                ents.append(Entry(3, 0 + a, (neg(G), la, neg(S))))
                ents.append(Entry(3, 2 + a, (pos(G), la, neg(S))))
                ents.append(Entry(3, 4 + a, (la, pos(S))))
        entries[t] = tuple(ents)
    return Factorization(7, list_size, entries)


def build_czm(n_items: int, list_size: int = 10, sharing: Optional[Mapping] = None) -> ModelDefinition:
    """CZM with per-item attraction and satisfaction and a global continuation probability.

    Satisfaction enters transitions out of the click state at ``t - 1`` and is
    therefore looked up for the item at position ``t - 1``.
    """
    if n_items < 1:
        raise DefinitionError("n_items must be at least 1")
    params = {
        "attraction": ParameterSpec("attraction", TableActivation(n_items), ItemSelector(0)),
        "satisfaction": ParameterSpec("satisfaction", TableActivation(n_items), ItemSelector(-1)),
        "continuation": ParameterSpec("continuation", TableActivation(1), ConstantSelector()),
    }
    model = ModelDefinition(
        "czm",
        czm_state_space(list_size),
        czm_factorization(list_size),
        params,
        {"n_items": n_items, "list_size": list_size},
    )
    return parameter_sharing(model, sharing) if sharing else model


def czm_matrix(attraction: float, satisfaction: float, continuation: float) -> np.ndarray:
    """The 7x7 CZM transition matrix written out by hand (positions t >= 2)."""
    a, s, g = attraction, satisfaction, continuation
    ab, sb, gb = 1 - a, 1 - s, 1 - g
    M = np.zeros((7, 7))
    for k in (0, 1, 4, 5, 6):
        M[k, 6] = 1.0
    M[2, :4] = [gb * ab, gb * a, g * ab, g * a]
    M[3, :6] = [gb * ab * sb, gb * a * sb, g * ab * sb, g * a * sb, ab * s, a * s]
    return M


# ---------------------------------------------------------------------------
# UBM


def ubm_slot(last_click: int, t: int) -> int:
    """Index of examination parameter ``gamma[last_click, t]`` in the strict upper triangle."""
    if not 0 <= last_click < t:
        raise DefinitionError(f"examination needs last_click < t, got ({last_click}, {t})")
    return t * (t - 1) // 2 + last_click


def ubm_state_space(list_size: int) -> StateSpace:
    """Blocks of four states ``4 t' + E + 2R`` per last-click position ``t'`` plus absorbing.

    The last click is carried as a one-hot vector over ``0..T`` so every state
    is still a binary latent vector; infeasible (not one-hot) vectors are
    dropped, leaving ``4T + 5`` states.
    """
    T = list_size

    def feasible(v):
        return sum(v[2:]) == 1

    def click(t):
        onehot = [0] * (T + 1)
        onehot[t] = 1
        return (1, 1, *onehot)

    return build_state_space(
        n_bits=T + 3,
        feasible=feasible,
        click_state_rule=click,
        absorbing=True,
        n_positions=T,
        bit_names=("examination", "attraction") + tuple(f"last_click_{j}" for j in range(T + 1)),
    )


def ubm_factorization(list_size: int) -> Factorization:
    T = list_size
    A, G = "attraction", "examination"
    O = 4 * T + 4
    entries = {}
    for t in range(1, T + 1):
        ents = []
        for block in range(T + 1):
            for j in range(4):
                src = 4 * block + j
                if block >= t:
                    # block unreachable before position t
                    ents.append(Entry(src, O))
                    continue
                slot = ubm_slot(block, t)
                ents.append(Entry(src, 4 * block + 0, (neg(A), neg(G, slot))))
                ents.append(Entry(src, 4 * block + 1, (neg(A), pos(G, slot))))
                ents.append(Entry(src, 4 * block + 2, (pos(A), neg(G, slot))))
                ents.append(Entry(src, 4 * t + 3, (pos(A), pos(G, slot))))
        ents.append(Entry(O, O))
        entries[t] = tuple(ents)
    return Factorization(4 * T + 5, T, entries)


def build_ubm(list_size: int, n_items: int, sharing: Optional[Mapping] = None) -> ModelDefinition:
    """UBM with per-item attraction and one examination probability per (last click, position) pair."""
    if list_size < 1:
        raise DefinitionError("list_size must be at least 1")
    if n_items < 1:
        raise DefinitionError("n_items must be at least 1")
    T = list_size
    params = {
        "attraction": ParameterSpec("attraction", TableActivation(n_items), ItemSelector(0)),
        "examination": ParameterSpec("examination", TableActivation(T * (T + 1) // 2), SlotSelector()),
    }
    model = ModelDefinition(
        "ubm",
        ubm_state_space(T),
        ubm_factorization(T),
        params,
        {"n_items": n_items, "list_size": T},
    )
    return parameter_sharing(model, sharing) if sharing else model


def ubm_examination_table(values, list_size: int) -> np.ndarray:
    """Unpack examination weights into a ``(T+1, T+1)`` matrix ``G[last_click, t]`` (NaN below diagonal)."""
    T = list_size
    G = np.full((T + 1, T + 1), np.nan)
    for t in range(1, T + 1):
        for lc in range(t):
            G[lc, t] = values[ubm_slot(lc, t)]
    return G


# ---------------------------------------------------------------------------
# sharing and augmentation


def parameter_sharing(model: ModelDefinition, rule: Mapping) -> ModelDefinition:
    """Replace parameter specs, e.g. to tie slots together or switch to covariates.

    Parameters
    ----------
    rule : mapping
        Parameter name (or alias) to the replacement :class:`ParameterSpec`
        (or one of the shortcuts ``"global"`` and ``("location", features)``).
        The replacement keeps the name of the parameter it replaces.
    """
    params = dict(model.parameters)
    for key, spec in rule.items():
        name = canonical_name(key)
        if name not in params:
            raise DefinitionError(f"sharing rule references undeclared parameter {key!r}")
        if isinstance(spec, str) and spec == "global":
            spec = ParameterSpec(name, TableActivation(1), ConstantSelector())
        elif isinstance(spec, tuple) and spec and spec[0] == "location":
            features = np.asarray(spec[1], dtype=float)
            offset = getattr(params[name].selector, "offset", 0)
            spec = ParameterSpec(name, LogisticActivation(features.shape[1]), ItemFeatureSelector.from_array(features, offset))
        elif not isinstance(spec, ParameterSpec):
            raise DefinitionError(f"unsupported sharing rule for {key!r}: {spec!r}")
        params[name] = replace(spec, name=name)
    return replace(model, parameters=params)


def augment_model_for_emission(model: ModelDefinition, emission: Optional[ParameterSpec]) -> ModelDefinition:
    """Absorb a parameter-dependent emission probability into the transitions.

    The emission bit is appended to every state.  Transitions into the click
    state ``C_t`` are split into ``(C_t, 1)`` with the factor ``theta_y`` and
    ``(C_t, 0)`` with ``1 - theta_y``; all other targets keep bit 0.  With
    ``emission=None`` the model is returned unchanged.
    """
    if emission is None:
        return model
    aug = augment_for_emission(model.space, True)
    base = model.space
    entries = {}
    for t in range(1, model.list_size + 1):
        ct = base.click_states[t]
        ents = []
        for e in model.factorization.at(t):
            for bit in ((0, 1) if e.src != base.absorbing else (0,)):
                src = aug.lift(e.src, bit)
                if e.dst == ct:
                    ents.append(Entry(src, aug.lift(e.dst, 1), e.literals + (pos(emission.name),)))
                    ents.append(Entry(src, aug.lift(e.dst, 0), e.literals + (neg(emission.name),)))
                else:
                    ents.append(Entry(src, aug.lift(e.dst, 0), e.literals))
        entries[t] = tuple(ents)
    params = dict(model.parameters)
    if emission.name in params:
        raise DefinitionError(f"emission parameter name {emission.name!r} already in use")
    params[emission.name] = emission
    return ModelDefinition(
        model.name + "+emission",
        aug.space,
        Factorization(aug.size, model.list_size, entries),
        params,
        dict(model.options),
    )


def resolve_model(name: str, list_size: int, n_items: int, **options) -> ModelDefinition:
    """Look up a built-in model by name (``"czm"`` or ``"ubm"``)."""
    key = name.lower()
    if key == "czm":
        return build_czm(n_items, list_size, **options)
    if key == "ubm":
        return build_ubm(list_size, n_items, **options)
    raise DefinitionError(f"unknown model {name!r}; expected 'czm', 'ubm' or a definition file")
