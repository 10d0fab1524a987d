import numpy as np
import pytest
from scipy import stats

from gcmclick.data import SessionLog
from gcmclick.models import build_czm, build_ubm
from gcmclick.simulator import (
    GroundTruth,
    SimulationConfig,
    popularity_warmup,
    sample_clicks,
    simulate,
    ubm_examination_values,
)
from gcmclick.transitions import evaluate_transitions

from oracles import all_click_patterns, enumerate_paths

SMALL = SimulationConfig(items=20, users=300, warmup_sessions=20, list_size=5, seed=3)


def _pattern_distribution(model, params, items):
    log = SessionLog(items[None, :], np.zeros((1, len(items)), dtype=int))
    M = np.stack(
        [evaluate_transitions(model.factorization, model.parameters, params, log, t)[0] for t in range(1, model.list_size + 1)]
    )
    D = model.space.click_indicator()
    patterns = all_click_patterns(model.list_size)
    return patterns, np.array([enumerate_paths(M, y, D)[0] for y in patterns])


class TestConfig:
    def test_defaults(self):
        c = SimulationConfig()
        assert (c.items, c.users, c.list_size, c.continuation_probability) == (100, 20000, 10, 0.9)

    @pytest.mark.parametrize(
        "kw",
        [
            {"users": 0},
            {"items": 3, "list_size": 4},
            {"continuation_probability": 1.5},
            {"lifetime_geometric_p": 0.0},
            {"attraction_salience": -1.0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimulationConfig(**kw)


class TestSampling:
    @pytest.mark.parametrize("kind", ["czm", "ubm"])
    def test_pattern_frequencies_match_exact_distribution(self, kind):
        rng = np.random.default_rng(0)
        if kind == "czm":
            model = build_czm(3, 3)
            params = {"attraction": np.array([0.7, 0.4, 0.2]), "satisfaction": np.array([0.3, 0.6, 0.5]), "continuation": np.array([0.8])}
        else:
            model = build_ubm(3, 3)
            params = {"attraction": np.array([0.7, 0.4, 0.2]), "examination": np.array([0.9, 0.7, 0.5, 0.6, 0.4, 0.3])}
        order = np.array([2, 0, 1])
        patterns, probs = _pattern_distribution(model, params, order)
        np.testing.assert_allclose(probs.sum(), 1.0, atol=1e-12)
        n = 100_000
        clicks = sample_clicks(model, params, np.tile(order, (n, 1)), rng)
        codes = clicks @ (1 << np.arange(3))
        observed = np.bincount(codes, minlength=8)
        expected = np.array([probs[[int(y @ (1 << np.arange(3))) for y in patterns].index(c)] for c in range(8)]) * n
        keep = expected > 0
        assert observed[~keep].sum() == 0
        _, p = stats.chisquare(observed[keep], expected[keep])
        assert p > 1e-3

    def test_continuation_zero_stops_after_first_position(self):
        model = build_czm(4, 4)
        params = {"attraction": np.full(4, 0.9), "satisfaction": np.full(4, 0.1), "continuation": np.array([0.0])}
        rng = np.random.default_rng(1)
        clicks = sample_clicks(model, params, np.tile(np.arange(4), (2000, 1)), rng)
        assert clicks[:, 1:].sum() == 0
        assert abs(clicks[:, 0].mean() - 0.9) < 0.03

    def test_marginal_click_rate(self):
        model = build_czm(3, 3)
        params = {"attraction": np.array([0.5, 0.5, 0.5]), "satisfaction": np.array([0.5, 0.5, 0.5]), "continuation": np.array([1.0])}
        rng = np.random.default_rng(2)
        n = 50_000
        clicks = sample_clicks(model, params, np.tile(np.arange(3), (n, 1)), rng)
        # with g = 1 the user leaves only when satisfied: P(examine t) = (1 - a s)^(t-1)
        expected = 0.5 * 0.75 ** np.arange(3)
        se = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(clicks.mean(axis=0) - expected) < 3 * se)


class TestSimulate:
    def test_deterministic(self):
        a, ta = simulate(SMALL)
        b, tb = simulate(SMALL)
        assert a.equals(b)
        np.testing.assert_array_equal(ta.attraction, tb.attraction)

    def test_seed_changes_log(self):
        a, _ = simulate(SMALL)
        b, _ = simulate(SimulationConfig(**dict(SMALL.to_dict(), seed=4)))
        assert not a.equals(b)

    def test_shapes_and_truth(self):
        log, truth = simulate(SMALL)
        assert log.list_size == 5
        assert len(truth.session_users) == log.n_sessions
        assert truth.attraction.shape == (300, 20)
        np.testing.assert_array_equal(truth.impressions, log.impressions())
        # sessions show distinct items
        assert all(len(set(row)) == 5 for row in log.items)
        assert np.all((truth.item_attraction > 0) & (truth.item_attraction < 1))

    def test_truth_parameters(self):
        _, truth = simulate(SMALL, model_kind="ubm")
        p = truth.parameters(5)
        assert set(p) == {"attraction", "examination"}
        np.testing.assert_allclose(p["examination"], ubm_examination_values(0.9, 5))

    def test_ubm_examination_values(self):
        np.testing.assert_allclose(ubm_examination_values(0.5, 2), [0.5, 0.25, 0.5])

    def test_warmup_fallback_is_uniform(self):
        # nobody is attracted to anything, so the warm-up has no clicks
        cfg = SimulationConfig(items=4, users=2, warmup_sessions=10, list_size=2, seed=0)
        truth = GroundTruth(
            "czm", np.zeros((4, 2)), np.zeros((2, 2)), np.full((2, 4), 1e-12), np.full((2, 4), 0.5), 0.9
        )
        np.testing.assert_array_equal(popularity_warmup(cfg, truth), np.full(4, 0.25))

    def test_popularity_is_distribution(self):
        _, truth = simulate(SMALL)
        np.testing.assert_allclose(truth.popularity.sum(), 1.0)

    def test_truth_save_load(self, tmp_path):
        _, truth = simulate(SMALL)
        path = tmp_path / "truth.npz"
        truth.save(path)
        again = GroundTruth.load(path)
        assert again.model_kind == "czm" and again.continuation == 0.9
        np.testing.assert_array_equal(again.satisfaction, truth.satisfaction)
        np.testing.assert_array_equal(again.item_ids, truth.item_ids)
