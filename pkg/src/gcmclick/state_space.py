"""Discrete latent state spaces built from binary latent-variable vectors.

A state of a cascade model at one list position is a vector of ``P`` binary
latent variables.  The vector is compressed to a single integer key with
:func:`bin_compress` (``sum_p 2**(p-1) * v_p + 1``), infeasible vectors are
dropped, and the surviving keys are renumbered to contiguous 0-based indices
so transition matrices can be stored densely.  An optional absorbing state is
appended last and carries no latent vector.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .errors import DefinitionError, DimensionError

LatentVector = tuple[int, ...]


def bin_compress(v: Sequence[int], n_bits: Optional[int] = None) -> int:
    """Map a binary latent vector to its 1-based key.

    Parameters
    ----------
    v : sequence of {0, 1}
        Latent vector; ``v[0]`` is the least significant bit.
    n_bits : int, optional
        Expected length of ``v``.

    Returns
    -------
    int
        ``sum_p 2**(p-1) * v_p + 1``.
    """
    if n_bits is not None and len(v) != n_bits:
        raise DimensionError(f"latent vector has length {len(v)}, expected {n_bits}")
    key = 1
    for p, bit in enumerate(v):
        if bit not in (0, 1):
            raise ValueError(f"latent vector entries must be 0 or 1, got {bit!r}")
        key += bit << p
    return key


def bin_decompress(key: int, n_bits: int) -> LatentVector:
    """Inverse of :func:`bin_compress`."""
    code = key - 1
    if code < 0 or code >= 1 << n_bits:
        raise DimensionError(f"key {key} out of range for {n_bits} bits")
    return tuple((code >> p) & 1 for p in range(n_bits))


@dataclass(frozen=True)
class StateSpace:
    """Finite latent state space of a cascade click model.

    Attributes
    ----------
    n_bits : int
        Number of binary latent variables ``P``.
    vectors : tuple of LatentVector
        Latent vector of every non-absorbing state, ordered by state index.
    absorbing : int or None
        Index of the absorbing state (always the last index) or None.
    click_states : tuple of int
        Click state for positions ``0..T``; position 0 is the virtual click
        that starts every session.
    bit_names : tuple of str
        Optional human-readable names of the latent bits.
    """

    n_bits: int
    vectors: tuple[LatentVector, ...]
    absorbing: Optional[int]
    click_states: tuple[int, ...]
    bit_names: tuple[str, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, v in enumerate(self.vectors):
            key = bin_compress(v, self.n_bits)
            if key in index:
                raise DefinitionError(f"duplicate latent vector {v}")
            index[key] = i
        object.__setattr__(self, "_index", index)
        if self.absorbing is not None and self.absorbing != len(self.vectors):
            raise DefinitionError("absorbing state must be the last index")
        for t, c in enumerate(self.click_states):
            if not 0 <= c < self.size:
                raise DefinitionError(f"click state {c} at position {t} out of range")

    @property
    def size(self) -> int:
        """Number of states ``K`` including the absorbing state."""
        return len(self.vectors) + (self.absorbing is not None)

    @property
    def n_positions(self) -> int:
        return len(self.click_states) - 1

    @property
    def keys(self) -> tuple[int, ...]:
        return tuple(bin_compress(v) for v in self.vectors)

    def index_of(self, v: Sequence[int]) -> int:
        """Contiguous index of a feasible latent vector."""
        key = bin_compress(v, self.n_bits)
        try:
            return self._index[key]
        except KeyError:
            raise DefinitionError(f"latent vector {tuple(v)} is not a feasible state") from None

    def index_of_key(self, key: int) -> int:
        return self._index[key]

    def decode(self, index: int) -> Optional[LatentVector]:
        """Latent vector of a state, or None for the absorbing state."""
        if index == self.absorbing:
            return None
        return self.vectors[index]

    def click_state(self, t: int) -> int:
        return self.click_states[t]

    def click_indicator(self):
        """Click-state indicator table ``D`` of shape ``(K, T+1)``."""
        import numpy as np

        D = np.zeros((self.size, len(self.click_states)))
        D[list(self.click_states), np.arange(len(self.click_states))] = 1.0
        return D

    def to_dict(self) -> dict:
        return {
            "n_bits": self.n_bits,
            "vectors": [list(v) for v in self.vectors],
            "absorbing": self.absorbing,
            "click_states": list(self.click_states),
            "bit_names": list(self.bit_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpace":
        return cls(
            n_bits=d["n_bits"],
            vectors=tuple(tuple(v) for v in d["vectors"]),
            absorbing=d["absorbing"],
            click_states=tuple(d["click_states"]),
            bit_names=tuple(d.get("bit_names", ())),
        )

    @classmethod
    def plain(cls, n_states: int, click_states: Sequence[int], absorbing: bool = False) -> "StateSpace":
        """State space without latent structure: state ``k`` is the binary code of ``k``."""
        n_vec = n_states - absorbing
        n_bits = max(1, (n_vec - 1).bit_length())
        vectors = tuple(bin_decompress(k + 1, n_bits) for k in range(n_vec))
        return cls(n_bits, vectors, n_vec if absorbing else None, tuple(click_states))


def build_state_space(
    n_bits: int,
    feasible: Optional[Callable[[LatentVector], bool]],
    click_state_rule: Callable[[int], Sequence[int]],
    absorbing: bool,
    n_positions: int,
    bit_names: Sequence[str] = (),
) -> StateSpace:
    """Enumerate all ``2**n_bits`` latent vectors and build a state space.

    Parameters
    ----------
    n_bits : int
        Number of binary latent variables.
    feasible : callable or None
        Predicate on latent vectors; vectors for which it is false are removed.
        None keeps every vector.
    click_state_rule : callable
        Maps a position ``t`` in ``0..n_positions`` to the latent vector of its
        click state.
    absorbing : bool
        Append an absorbing state after the feasible states.
    n_positions : int
        List size ``T``.
    """
    vectors = []
    for code in range(1 << n_bits):
        v = tuple((code >> p) & 1 for p in range(n_bits))
        if feasible is None or feasible(v):
            vectors.append(v)
    index = {bin_compress(v): i for i, v in enumerate(vectors)}
    clicks = []
    for t in range(n_positions + 1):
        cv = tuple(click_state_rule(t))
        key = bin_compress(cv, n_bits)
        if key not in index:
            raise DefinitionError(f"click state {cv} at position {t} is infeasible")
        clicks.append(index[key])
    return StateSpace(
        n_bits=n_bits,
        vectors=tuple(vectors),
        absorbing=len(vectors) if absorbing else None,
        click_states=tuple(clicks),
        bit_names=tuple(bit_names),
    )


@dataclass(frozen=True)
class AugmentedStateSpace:
    """State space optionally extended by the emission bit.

    When ``has_emission_bit`` is true the emission bit is appended as the most
    significant latent variable: states ``0..n-1`` carry bit 0 and states
    ``n..2n-1`` the same vectors with bit 1, followed by the absorbing state.
    The click state at position ``t`` becomes ``(C_t, 1)``.
    """

    base: StateSpace
    has_emission_bit: bool
    space: StateSpace

    @property
    def size(self) -> int:
        return self.space.size

    def lift(self, index: int, bit: int) -> int:
        """Augmented index of base state ``index`` with emission bit ``bit``."""
        if not self.has_emission_bit:
            return index
        if index == self.base.absorbing:
            return self.space.absorbing
        return index + bit * len(self.base.vectors)


def augment_for_emission(space, emission_nontrivial: bool) -> AugmentedStateSpace:
    """Append the emission bit when the emission probability depends on parameters.

    Augmenting an already augmented space with ``emission_nontrivial=False``
    returns it unchanged.
    """
    if isinstance(space, AugmentedStateSpace):
        if not emission_nontrivial:
            return space
        space = space.space
    if not emission_nontrivial:
        return AugmentedStateSpace(space, False, space)
    n = len(space.vectors)
    vectors = tuple(v + (0,) for v in space.vectors) + tuple(v + (1,) for v in space.vectors)
    clicks = tuple(c + n if c != space.absorbing else c for c in space.click_states)
    absorbing = 2 * n if space.absorbing is not None else None
    clicks = tuple(absorbing if c == space.absorbing else c for c in clicks)
    aug = StateSpace(
        n_bits=space.n_bits + 1,
        vectors=vectors,
        absorbing=absorbing,
        click_states=clicks,
        bit_names=tuple(space.bit_names) + ("emission",) if space.bit_names else (),
    )
    return AugmentedStateSpace(space, True, aug)


def enumerate_vectors(n_bits: int):
    """All binary vectors of length ``n_bits`` in key order."""
    return [tuple(reversed(bits)) for bits in itertools.product((0, 1), repeat=n_bits)]
