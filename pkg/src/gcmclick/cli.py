"""Command-line interface: ``gcmclick {fit,simulate,evaluate,predict}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 EM stopped at
``--max-iter`` without converging.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import em, evaluation, io
from .errors import DefinitionError, GCMError, SchemaError
from .models import ModelDefinition, resolve_model
from .simulator import GroundTruth, SimulationConfig, simulate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_model(spec: str, data):
    path = Path(spec)
    if path.is_file():
        return ModelDefinition.from_text(path.read_text(encoding="utf-8"))
    return resolve_model(spec, data.list_size, max(data.n_items, 1))


def _load_init(path, model):
    if path is None:
        return None
    text = Path(path).read_text(encoding="utf-8")
    d = json.loads(text)
    if d.get("format") == io.MODEL_FORMAT:
        return io.fitted_from_dict(d).params
    return {k: np.asarray(v, dtype=float) for k, v in d.items()}


def cmd_fit(args) -> int:
    data = io.read_sessions(args.data)
    if data.n_sessions == 0:
        raise UsageError("no sessions in --data")
    model = _load_model(args.model, data)
    init = _load_init(args.init, model)
    fitted = em.fit(
        model,
        data,
        init=init,
        epsilon=args.epsilon,
        max_iter=args.max_iter,
        seed=args.seed,
        threads=args.threads,
    )
    io.save_fitted(fitted, args.out)
    trace = args.trace or f"{args.out}.trace.jsonl"
    Path(trace).write_text(fitted.report.to_jsonl(), encoding="utf-8")
    rep = fitted.report
    print(f"{model.name}: {rep.iterations} iterations, loglik {rep.final_loglik!r}, converged={rep.converged}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def _config_from_args(args) -> SimulationConfig:
    try:
        return SimulationConfig(
            items=args.items,
            users=args.users,
            warmup_sessions=args.warmup_sessions,
            list_size=args.list_size,
            distance_sensitivity=args.distance_sensitivity,
            attraction_salience=args.attraction_salience,
            satisfaction_salience=args.satisfaction_salience,
            lifetime_geometric_p=args.lifetime_geometric_p,
            continuation_probability=args.continuation_probability,
            seed=args.seed,
        )
    except ValueError as err:
        raise UsageError(str(err)) from None


def cmd_simulate(args) -> int:
    config = _config_from_args(args)
    log, truth = simulate(config, args.model_kind)
    io.write_sessions(log, args.out)
    with open(args.truth or f"{args.out}.truth.npz", "wb") as fh:
        truth.save(fh)
    print(f"{log.n_sessions} sessions written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    fitted = io.load_fitted(args.model)
    data = io.read_sessions(args.data, item_ids=fitted.item_ids or None)
    if data.n_sessions == 0:
        raise UsageError("no sessions in --data")
    if data.list_size != fitted.model.list_size:
        raise SchemaError(f"data has list size {data.list_size}, model expects {fitted.model.list_size}")
    report = evaluation.perplexity(fitted, data)
    records = list(report.records())
    records.append({"model": fitted.model.name, "loglik": evaluation.log_likelihood(fitted, data)})
    if args.truth:
        with open(args.truth, "rb") as fh:
            truth = GroundTruth.load(fh)
        rec = evaluation.recovery_error(fitted, truth, args.min_impressions)
        records += list(rec.records())
    text = "".join(json.dumps(r) + "\n" for r in records)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.plot:
        Path(args.plot).write_text(report.plot_rows(), encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    fitted = io.load_fitted(args.model)
    data = io.read_sessions(args.data, item_ids=fitted.item_ids or None)
    q = evaluation.predict_click_probs(fitted, data)
    lines = [json.dumps({"id": sid, "click_probs": row}) + "\n" for sid, row in zip(data.session_ids, q.tolist())]
    if args.out:
        Path(args.out).write_text("".join(lines), encoding="utf-8")
    else:
        sys.stdout.writelines(lines)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gcmclick", description="Fit, simulate and evaluate cascade click models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="estimate model parameters by EM")
    f.add_argument("--model", required=True, help="czm, ubm or a model definition file")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--trace", help="fit trace output (default: <out>.trace.jsonl)")
    f.add_argument("--init", help="starting weights: fitted model file or JSON {name: weights}")
    f.add_argument("--epsilon", type=float, default=1e-4)
    f.add_argument("--max-iter", type=int, default=200)
    f.add_argument("--seed", type=int, default=None, help="random restart seed (default: all probabilities 0.5)")
    f.add_argument("--threads", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="generate a synthetic click log")
    d = SimulationConfig()
    s.add_argument("--model-kind", choices=("czm", "ubm"), default="czm")
    s.add_argument("--items", type=int, default=d.items)
    s.add_argument("--users", type=int, default=d.users)
    s.add_argument("--warmup-sessions", type=int, default=d.warmup_sessions)
    s.add_argument("--list-size", type=int, default=d.list_size)
    s.add_argument("--distance-sensitivity", type=float, default=d.distance_sensitivity)
    s.add_argument("--attraction-salience", type=float, default=d.attraction_salience)
    s.add_argument("--satisfaction-salience", type=float, default=d.satisfaction_salience)
    s.add_argument("--lifetime-geometric-p", type=float, default=d.lifetime_geometric_p)
    s.add_argument("--continuation-probability", type=float, default=d.continuation_probability)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--truth", help="ground truth output (default: <out>.truth.npz)")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="perplexity, log-likelihood and recovery error")
    e.add_argument("--model", required=True, help="fitted model file")
    e.add_argument("--data", required=True)
    e.add_argument("--truth", help="ground truth from 'simulate'")
    e.add_argument("--min-impressions", type=int, default=100)
    e.add_argument("--out")
    e.add_argument("--plot", help="tab-separated rank/perplexity/model file")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict", help="per-position click probabilities")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"gcmclick: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DefinitionError as err:
        print(f"gcmclick: model error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (GCMError, OSError, json.JSONDecodeError) as err:
        print(f"gcmclick: data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
