import math

import numpy as np
import pytest

from gcmclick import em
from gcmclick.activations import LogisticActivation, TableActivation
from gcmclick.covariates import ConstantSelector, ItemFeatureSelector
from gcmclick.data import SessionLog
from gcmclick.errors import DefinitionError
from gcmclick.evaluation import predict_click_probs
from gcmclick.models import (
    ModelDefinition,
    augment_model_for_emission,
    build_czm,
    build_ubm,
    canonical_name,
    czm_matrix,
    parameter_sharing,
    resolve_model,
    ubm_examination_table,
    ubm_slot,
)
from gcmclick.transitions import ParameterSpec, evaluate_transitions

from oracles import all_click_patterns, czm_direct_likelihood, czm_reference, ubm_direct_likelihood


def _session_loglik(model, params, items, clicks):
    log = SessionLog(np.atleast_2d(items), np.atleast_2d(clicks))
    return em.batch_loglik(model, params, log)


class TestCZM:
    def test_compiled_matrix_matches_reference(self):
        rng = np.random.default_rng(0)
        model = build_czm(3, 3)
        for _ in range(20):
            a, s = rng.uniform(0.01, 0.99, 3), rng.uniform(0.01, 0.99, 3)
            g = rng.uniform(0.01, 0.99)
            params = {"attraction": a, "satisfaction": s, "continuation": np.array([g])}
            log = SessionLog(np.array([[0, 1, 2]]), np.zeros((1, 3), dtype=int))
            for t in (2, 3):
                M = evaluate_transitions(model.factorization, model.parameters, params, log, t)[0]
                ref = czm_reference(a[t - 1], s[t - 2], g)
                np.testing.assert_allclose(M, ref, rtol=0, atol=1e-14)
                np.testing.assert_allclose(czm_matrix(a[t - 1], s[t - 2], g), ref, rtol=0, atol=1e-14)

    def test_first_position_starts_examined(self):
        model = build_czm(2, 2)
        params = {"attraction": np.array([0.3, 0.6]), "satisfaction": np.array([0.5, 0.5]), "continuation": np.array([0.9])}
        log = SessionLog(np.array([[0, 1]]), np.zeros((1, 2), dtype=int))
        M = evaluate_transitions(model.factorization, model.parameters, params, log, 1)[0]
        np.testing.assert_allclose(M[3, :4], [0, 0, 0.7, 0.3])

    @pytest.mark.parametrize("T", [1, 2, 3])
    def test_likelihood_matches_definition(self, T):
        rng = np.random.default_rng(T)
        V = 4
        model = build_czm(V, T)
        for _ in range(5):
            a, s = rng.uniform(0.05, 0.95, V), rng.uniform(0.05, 0.95, V)
            g = rng.uniform(0.05, 0.95)
            params = {"attraction": a, "satisfaction": s, "continuation": np.array([g])}
            items = rng.permutation(V)[:T]
            for y in all_click_patterns(T):
                direct = czm_direct_likelihood(y, a[items], s[items], g)
                if direct == 0:
                    continue
                got = _session_loglik(model, params, items, y)
                assert math.isclose(got, math.log(direct), rel_tol=1e-10, abs_tol=1e-12)

    def test_continuation_zero_click_probs(self):
        # only position 1 can be examined, so later click probabilities vanish
        model = build_czm(2, 2)
        params = {"attraction": np.array([0.4, 0.7]), "satisfaction": np.array([0.2, 0.2]), "continuation": np.array([0.0])}
        log = SessionLog(np.array([[0, 1], [0, 1]]), np.array([[0, 0], [1, 0]]))
        q = predict_click_probs(model, log, params)
        np.testing.assert_allclose(q[:, 0], 0.4)
        np.testing.assert_allclose(q[:, 1], 0.0, atol=1e-11)


class TestUBM:
    def test_slots(self):
        slots = [ubm_slot(lc, t) for t in range(1, 5) for lc in range(t)]
        assert slots == list(range(10))
        with pytest.raises(DefinitionError):
            ubm_slot(3, 3)

    @pytest.mark.parametrize("T", [1, 2, 3])
    def test_likelihood_matches_definition(self, T):
        rng = np.random.default_rng(10 + T)
        V = 4
        model = build_ubm(T, V)
        for _ in range(20):
            a = rng.uniform(0.05, 0.95, V)
            ex = rng.uniform(0.05, 0.95, T * (T + 1) // 2)
            params = {"attraction": a, "examination": ex}
            gamma = ubm_examination_table(ex, T)
            items = rng.permutation(V)[:T]
            for y in all_click_patterns(T):
                direct = ubm_direct_likelihood(y, a[items], gamma)
                got = _session_loglik(model, params, items, y)
                assert math.isclose(got, math.log(direct), rel_tol=1e-10, abs_tol=1e-12)

    def test_validates(self):
        assert build_ubm(4, 3).validate().ok


class TestSharingAndAliases:
    def test_aliases(self):
        assert canonical_name("phi_A") == "attraction"
        assert canonical_name("gamma") == "continuation"

    def test_global_attraction(self):
        model = parameter_sharing(build_czm(5, 3), {"phi_A": "global"})
        assert model.parameters["attraction"].activation == TableActivation(1)
        assert model.parameters["attraction"].selector == ConstantSelector()

    def test_location_features(self):
        features = np.arange(10.0).reshape(5, 2)
        model = parameter_sharing(build_czm(5, 3), {"satisfaction": ("location", features)})
        spec = model.parameters["satisfaction"]
        assert spec.activation == LogisticActivation(2)
        assert isinstance(spec.selector, ItemFeatureSelector) and spec.selector.offset == -1

    def test_unknown_parameter(self):
        with pytest.raises(DefinitionError):
            parameter_sharing(build_czm(5, 3), {"novelty": "global"})

    def test_resolve(self):
        assert resolve_model("CZM", 4, 3).n_states == 7
        assert resolve_model("ubm", 4, 3).n_states == 21
        with pytest.raises(DefinitionError):
            resolve_model("dbn", 4, 3)


class TestEmissionAugmentation:
    def _czm_params(self):
        return {"attraction": np.array([0.3, 0.8, 0.5]), "satisfaction": np.array([0.4, 0.4, 0.4]), "continuation": np.array([0.7])}

    def test_validates_and_sizes(self):
        spec = ParameterSpec("emit", TableActivation(1), ConstantSelector())
        model = augment_model_for_emission(build_czm(3, 3), spec)
        assert model.n_states == 13
        assert model.validate().ok

    def test_first_click_probability(self):
        spec = ParameterSpec("emit", TableActivation(1), ConstantSelector())
        model = augment_model_for_emission(build_czm(3, 3), spec)
        params = dict(self._czm_params(), emit=np.array([0.6]))
        log = SessionLog(np.array([[0, 1, 2]]), np.zeros((1, 3), dtype=int))
        q = predict_click_probs(model, log, params)
        assert math.isclose(q[0, 0], 0.3 * 0.6, rel_tol=1e-12)

    def test_certain_emission_recovers_base_model(self):
        spec = ParameterSpec("emit", TableActivation(1), ConstantSelector())
        base = build_czm(3, 3)
        aug = augment_model_for_emission(base, spec)
        params = self._czm_params()
        log = SessionLog(np.array([[0, 1, 2], [2, 1, 0]]), np.array([[0, 1, 0], [1, 0, 1]]))
        a = em.batch_loglik(base, params, log)
        b = em.batch_loglik(aug, dict(params, emit=np.array([1.0])), log)
        assert math.isclose(a, b, rel_tol=1e-9)

    def test_none_is_identity(self):
        model = build_czm(3, 3)
        assert augment_model_for_emission(model, None) is model


class TestTextDefinition:
    @pytest.mark.parametrize("builder", [lambda: build_czm(4, 3), lambda: build_ubm(3, 4)])
    def test_roundtrip_preserves_likelihood(self, builder):
        model = builder()
        again = ModelDefinition.from_text(model.to_text())
        assert again.space == model.space
        assert again.parameters == model.parameters
        rng = np.random.default_rng(0)
        params = {k: s.activation.init_weights(rng) for k, s in model.parameters.items()}
        items = np.array([rng.permutation(4)[:3] for _ in range(20)])
        clicks = rng.integers(0, 2, (20, 3))
        log = SessionLog(items, clicks)
        assert em.batch_loglik(model, params, log) == em.batch_loglik(again, params, log)

    def test_minimal_custom_model(self):
        text = """
        name coin
        click 1 1 1
        param a {"activation": {"kind": "constant", "size": 1}, "selector": {"kind": "constant"}}
        states 2
        positions 2
        t=* 0 1 +a
        t=* 0 0 -a
        t=* 1 1 +a
        t=* 1 0 -a
        """
        model = ModelDefinition.from_text(text)
        assert model.name == "coin"
        log = SessionLog(np.zeros((1, 2), dtype=int), np.array([[1, 0]]))
        got = em.batch_loglik(model, {"a": np.array([0.25])}, log)
        assert math.isclose(got, math.log(0.25 * 0.75))

    def test_missing_click_line(self):
        with pytest.raises(DefinitionError):
            ModelDefinition.from_text("states 1\npositions 1\nt=1 0 0 1\n")
