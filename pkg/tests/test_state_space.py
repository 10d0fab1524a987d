import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcmclick.errors import DefinitionError, DimensionError
from gcmclick.models import czm_state_space, ubm_state_space
from gcmclick.state_space import (
    StateSpace,
    augment_for_emission,
    bin_compress,
    bin_decompress,
    build_state_space,
)


class TestBinCompression:
    def test_known_keys(self):
        assert bin_compress((0, 0, 0)) == 1
        assert bin_compress((1, 0, 0)) == 2
        assert bin_compress((0, 1, 1)) == 7
        assert bin_compress((1, 1, 1)) == 8

    def test_bijective_over_all_vectors(self):
        keys = [bin_compress(v) for v in itertools.product((0, 1), repeat=4)]
        assert sorted(keys) == list(range(1, 17))

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=20))
    def test_roundtrip(self, v):
        assert bin_decompress(bin_compress(v), len(v)) == tuple(v)

    def test_wrong_length(self):
        with pytest.raises(DimensionError):
            bin_compress((0, 1), n_bits=3)

    def test_non_binary_entry(self):
        with pytest.raises(ValueError):
            bin_compress((0, 2))

    def test_key_out_of_range(self):
        with pytest.raises(DimensionError):
            bin_decompress(9, 3)


class TestStateSpace:
    def test_infeasible_states_removed_and_indices_contiguous(self):
        sp = build_state_space(3, lambda v: not (v[1] and v[2]), lambda t: (1, 1, 0), True, 2)
        assert sp.size == 7
        assert sp.absorbing == 6
        assert [sp.index_of(v) for v in sp.vectors] == list(range(6))
        with pytest.raises(DefinitionError):
            sp.index_of((0, 1, 1))

    def test_infeasible_click_state(self):
        with pytest.raises(DefinitionError):
            build_state_space(2, lambda v: v != (1, 1), lambda t: (1, 1), False, 1)

    def test_click_indicator(self):
        sp = build_state_space(2, None, lambda t: (t % 2, 1), False, 3)
        D = sp.click_indicator()
        assert D.shape == (4, 4)
        np.testing.assert_array_equal(D.sum(axis=0), 1)
        assert [int(np.argmax(D[:, t])) for t in range(4)] == [2, 3, 2, 3]

    def test_decode_absorbing(self):
        sp = czm_state_space(3)
        assert sp.decode(6) is None
        assert sp.decode(3) == (1, 1, 0)

    def test_dict_roundtrip(self):
        sp = ubm_state_space(3)
        assert StateSpace.from_dict(sp.to_dict()) == sp

    def test_absorbing_must_be_last(self):
        with pytest.raises(DefinitionError):
            StateSpace(1, ((0,), (1,)), 0, (1,))


class TestModelStateSpaces:
    def test_czm_layout(self):
        sp = czm_state_space(10)
        # (R, E, S) with S=1, E=1 infeasible; click state R=1, E=1, S=0
        assert sp.vectors == ((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1), (1, 0, 1))
        assert set(sp.click_states) == {3}
        assert sp.size == 7

    @pytest.mark.parametrize("T", [1, 2, 3, 5, 10])
    def test_ubm_size(self, T):
        sp = ubm_state_space(T)
        assert sp.size == 4 * T + 5
        assert list(sp.click_states) == [4 * t + 3 for t in range(T + 1)]


class TestEmissionAugmentation:
    def test_doubles_non_absorbing_states(self):
        base = czm_state_space(3)
        aug = augment_for_emission(base, True)
        assert aug.size == 2 * 6 + 1
        assert aug.space.absorbing == 12
        assert aug.space.click_states == (9, 9, 9, 9)
        assert aug.space.vectors[9] == (1, 1, 0, 1)

    def test_lift(self):
        aug = augment_for_emission(czm_state_space(2), True)
        assert aug.lift(3, 0) == 3
        assert aug.lift(3, 1) == 9
        assert aug.lift(6, 1) == 12

    def test_trivial_emission_is_identity(self):
        base = czm_state_space(2)
        aug = augment_for_emission(base, False)
        assert aug.space is base
        assert augment_for_emission(aug, False) is aug
