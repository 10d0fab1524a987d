import json

import numpy as np
import pytest

from gcmclick import em, io
from gcmclick.cli import main
from gcmclick.data import SessionLog
from gcmclick.errors import SchemaError
from gcmclick.evaluation import perplexity
from gcmclick.models import build_czm, build_ubm
from gcmclick.simulator import GroundTruth, SimulationConfig, simulate

TINY = SimulationConfig(items=8, users=150, warmup_sessions=10, list_size=3, seed=2)


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def sim_file(tmp_path):
    log, truth = simulate(TINY)
    path = tmp_path / "s.jsonl"
    io.write_sessions(log, path)
    truth.save(tmp_path / "s.jsonl.truth.npz")
    return path


class TestSessionFiles:
    def test_roundtrip(self, tmp_path):
        log, _ = simulate(TINY)
        io.write_sessions(log, tmp_path / "a.jsonl")
        again = io.read_sessions(tmp_path / "a.jsonl")
        assert again.equals(log.reindex(again.item_ids))
        assert set(again.item_ids) <= set(log.item_ids)

    def test_roundtrip_with_covariates(self, tmp_path):
        log = SessionLog(
            np.array([[0, 1], [1, 0]]),
            np.array([[1, 0], [0, 0]]),
            item_ids=["x", "y"],
            session_ids=["q1", "q2"],
            covariates={"price": np.array([[1.5, 2.0], [2.0, 1.5]])},
        )
        io.write_sessions(log, tmp_path / "c.jsonl")
        again = io.read_sessions(tmp_path / "c.jsonl")
        assert again.equals(log)
        assert again.session_ids == ["q1", "q2"]

    def test_corrupt_line_is_named(self, tmp_path):
        log, _ = simulate(TINY)
        path = tmp_path / "bad.jsonl"
        io.write_sessions(log.subset(range(20)), path)
        lines = path.read_text().splitlines()
        lines[16] = lines[16][:-5]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match="line 17"):
            io.read_sessions(path)

    def test_inconsistent_list_size(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text(
            '{"format": "gcm-sessions", "version": 1, "list_size": 2, "covariates": []}\n'
            '{"id": "a", "items": ["x", "y"], "clicks": [0, 1]}\n'
            '{"id": "b", "items": ["x", "y", "z"], "clicks": [0, 1, 0]}\n'
        )
        with pytest.raises(SchemaError, match="line 3"):
            io.read_sessions(path)

    def test_bad_click_value(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text(
            '{"format": "gcm-sessions", "version": 1, "list_size": 1, "covariates": []}\n'
            '{"id": "a", "items": ["x"], "clicks": [2]}\n'
        )
        with pytest.raises(SchemaError, match="line 2"):
            io.read_sessions(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text('{"id": "a", "items": ["x"], "clicks": [1]}\n')
        with pytest.raises(SchemaError, match="line 1"):
            io.read_sessions(path)

    def test_fixed_vocabulary_marks_unknown_items(self, tmp_path):
        log = SessionLog(np.array([[0, 1]]), np.array([[0, 0]]), item_ids=["x", "y"])
        io.write_sessions(log, tmp_path / "v.jsonl")
        again = io.read_sessions(tmp_path / "v.jsonl", item_ids=["y"])
        np.testing.assert_array_equal(again.items, [[-1, 0]])


class TestFittedModelFiles:
    @pytest.mark.parametrize("builder", [lambda V: build_czm(V, 3), lambda V: build_ubm(3, V)])
    def test_roundtrip_bit_exact(self, tmp_path, builder):
        log, _ = simulate(TINY)
        fitted = em.fit(builder(log.n_items), log, max_iter=5, seed=1)
        io.save_fitted(fitted, tmp_path / "m.json")
        again = io.load_fitted(tmp_path / "m.json")
        for name in fitted.params:
            np.testing.assert_array_equal(again.params[name], fitted.params[name])
        assert again.report.loglik_trace == fitted.report.loglik_trace
        assert again.item_ids == fitted.item_ids
        a = perplexity(fitted, log)
        b = perplexity(again, log)
        np.testing.assert_array_equal(a.per_rank, b.per_rank)

    def test_not_a_model_file(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(SchemaError):
            io.load_fitted(tmp_path / "x.json")

    def test_wrong_weight_shape(self, tmp_path):
        log, _ = simulate(TINY)
        fitted = em.fit(build_czm(log.n_items, 3), log, max_iter=1)
        d = io.fitted_to_dict(fitted)
        d["params"]["continuation"] = [0.5, 0.5]
        with pytest.raises(SchemaError):
            io.fitted_from_dict(d)


class TestCLI:
    def test_simulate_is_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert _run("simulate", "--users", 1, "--seed", 7, "--out", tmp_path / f"{name}.jsonl") == 0
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert (tmp_path / "a.jsonl.truth.npz").exists()

    def test_tiny_log_for_oracles(self, tmp_path):
        out = tmp_path / "tiny.jsonl"
        assert _run("simulate", "--list-size", 3, "--items", 3, "--users", 20, "--out", out) == 0
        log = io.read_sessions(out)
        assert log.list_size == 3 and log.n_items <= 3

    def test_simulate_invalid_range(self, tmp_path):
        assert _run("simulate", "--users", 0, "--out", tmp_path / "x.jsonl") == 1
        assert _run("simulate", "--continuation-probability", 2, "--out", tmp_path / "x.jsonl") == 1

    def test_usage_errors(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 1
        with pytest.raises(SystemExit) as err:
            main(["fit", "--model", "czm"])
        assert err.value.code == 1

    def test_fit_evaluate_predict(self, tmp_path, sim_file):
        model = tmp_path / "m.json"
        assert _run("fit", "--model", "czm", "--data", sim_file, "--out", model) == 0
        trace = [json.loads(l) for l in (tmp_path / "m.json.trace.jsonl").read_text().splitlines()]
        ll = [r["loglik"] for r in trace]
        assert all(b >= a - 1e-9 for a, b in zip(ll, ll[1:]))
        report = tmp_path / "r.jsonl"
        plot = tmp_path / "p.tsv"
        truth = f"{sim_file}.truth.npz"
        assert _run("evaluate", "--model", model, "--data", sim_file, "--truth", truth, "--out", report, "--plot", plot) == 0
        recs = [json.loads(l) for l in report.read_text().splitlines()]
        ranks = [r for r in recs if isinstance(r.get("rank"), int)]
        assert [r["rank"] for r in ranks] == [1, 2, 3]
        assert all(r["perplexity"] < 2 for r in ranks)
        assert {r["parameter"] for r in recs if "parameter" in r} == {"attraction", "satisfaction", "continuation"}
        assert len(plot.read_text().splitlines()) == 3
        pred = tmp_path / "q.jsonl"
        assert _run("predict", "--model", model, "--data", sim_file, "--out", pred) == 0
        rows = [json.loads(l) for l in pred.read_text().splitlines()]
        assert len(rows) == io.read_sessions(sim_file).n_sessions
        assert all(0 <= q <= 1 for r in rows for q in r["click_probs"])

    def test_plot_files_for_two_models(self, tmp_path, sim_file):
        rows = []
        for kind in ("czm", "ubm"):
            m = tmp_path / f"{kind}.json"
            _run("fit", "--model", kind, "--data", sim_file, "--out", m, "--max-iter", 30)
            assert _run("evaluate", "--model", m, "--data", sim_file, "--out", tmp_path / "r", "--plot", tmp_path / f"{kind}.tsv") == 0
            rows += (tmp_path / f"{kind}.tsv").read_text().splitlines()
        series = {}
        for line in rows:
            rank, value, name = line.split("\t")
            series.setdefault(name, []).append(int(rank))
        assert series == {"czm": [1, 2, 3], "ubm": [1, 2, 3]}

    def test_max_iter_zero(self, tmp_path, sim_file):
        out = tmp_path / "m.json"
        assert _run("fit", "--model", "czm", "--data", sim_file, "--out", out, "--max-iter", 0) == 3
        fitted = io.load_fitted(out)
        np.testing.assert_array_equal(fitted.params["continuation"], [0.5])

    def test_corrupt_data_exit_code(self, tmp_path, sim_file, capsys):
        lines = sim_file.read_text().splitlines()
        lines[16] = "{not json"
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        assert _run("fit", "--model", "czm", "--data", bad, "--out", tmp_path / "m.json") == 2
        assert "line 17" in capsys.readouterr().err

    def test_evaluate_empty_data(self, tmp_path, sim_file):
        model = tmp_path / "m.json"
        _run("fit", "--model", "czm", "--data", sim_file, "--out", model, "--max-iter", 2)
        empty = tmp_path / "e.jsonl"
        empty.write_text(sim_file.read_text().splitlines()[0] + "\n")
        assert _run("evaluate", "--model", model, "--data", empty) == 1

    def test_evaluate_schema_mismatch(self, tmp_path, sim_file):
        model = tmp_path / "m.json"
        _run("fit", "--model", "czm", "--data", sim_file, "--out", model, "--max-iter", 2)
        other = tmp_path / "o.jsonl"
        _run("simulate", "--items", 8, "--list-size", 4, "--users", 20, "--out", other)
        assert _run("evaluate", "--model", model, "--data", other) == 2

    def test_custom_model_file(self, tmp_path, sim_file):
        definition = tmp_path / "czm.txt"
        definition.write_text(build_czm(8, 3).to_text())
        assert _run("fit", "--model", definition, "--data", sim_file, "--out", tmp_path / "m.json", "--max-iter", 3) in (0, 3)

    def test_unknown_model(self, tmp_path, sim_file):
        assert _run("fit", "--model", "dbn", "--data", sim_file, "--out", tmp_path / "m.json") == 1

    def test_fit_is_deterministic(self, tmp_path, sim_file):
        for name in ("a", "b"):
            assert _run("fit", "--model", "czm", "--data", sim_file, "--seed", 4, "--threads", 1, "--out", tmp_path / f"{name}.json") == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
