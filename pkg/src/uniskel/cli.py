"""Command-line entry point: ``uniskel <command> [options]``.

Every command takes ``--seed`` (default from ``UNISKEL_SEED``, else 0) and
writes plain text, JSON or CSV that depends only on its inputs and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .config import apply, default_seed, load_config, section
from .errors import RepairFailed, RetryExhausted, UniskelError


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args) -> int:
    from .generate import GenConfig, generate_corpus

    cfg = apply(GenConfig(), load_config(args.config))
    if args.max_ops is not None:
        cfg = apply(cfg, {"max_operators": args.max_ops})
    corpus = generate_corpus(args.size, cfg, args.seed)
    _write(args.out, corpus.dumps())
    _log(f"wrote {corpus.count} skeletons")
    return 0


def cmd_gen_records(args) -> int:
    from .generate import load_corpus
    from .sets import format_record, generate_sets

    corpus = load_corpus(args.corpus)
    skeletons = corpus.skeletons()
    if args.limit:
        skeletons = skeletons[: args.limit]
    lines, failed = [], 0
    for i, skel in enumerate(skeletons):
        rng = np.random.default_rng([args.seed, i])
        try:
            lines.append(format_record(generate_sets(skel, args.n_sets, args.n, rng)))
        except RepairFailed:
            failed += 1
    _write(args.out, "".join(line + "\n" for line in lines))
    _log(f"wrote {len(lines)} records, {failed} skeletons failed")
    return 0


def cmd_train_nn(args) -> int:
    from .benchmarks import get_problem
    from .pipeline import make_observed_data
    from .regressor import MLPConfig, save_mlp, train_mlp

    values = load_config(args.config)
    cfg = apply(MLPConfig(), {**section(values, "mlp"), "seed": args.seed})
    if args.data:
        table = np.loadtxt(args.data, delimiter=",", skiprows=1, ndmin=2)
        X, y = table[:, :-1], table[:, -1]
        source = str(args.data)
    else:
        problem = get_problem(args.problem)
        X, y = make_observed_data(problem, args.samples, np.random.default_rng([args.seed, 1]))
        source = problem.id
    model, report = train_mlp(X, y, cfg)
    save_mlp(model, args.out)
    summary = {
        "source": source,
        "samples": len(y),
        "seed": args.seed,
        "train_mse": report.train_mse,
        "val_mse": report.val_mse,
        "val_r2": report.val_r2,
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
    }
    _write(args.report, _json(summary))
    _log(f"validation R^2 {report.val_r2:.4f}")
    return 0


def cmd_train_mst(args) -> int:
    import torch

    from .mst import MSTConfig, build_model, save_model, train_mst
    from .sets import read_records

    torch.set_num_threads(1)
    values = load_config(args.config)
    cfg = apply(MSTConfig(), {**{k: v for k, v in values.items() if "." not in k and k not in ("batch_size",)}, "seed": args.seed})
    batch_size = args.batch_size or int(values.get("batch_size", 16))
    records = read_records(args.records)
    model = build_model(cfg)
    losses = train_mst(model, records, args.steps, batch_size=batch_size, seed=args.seed, log=_log)
    save_model(model, args.out)
    _write(args.report, _json({"steps": args.steps, "records": len(records), "seed": args.seed, "losses": losses}))
    return 0


def _decode_line(pred) -> str:
    from .skeleton import Skeleton

    if isinstance(pred, Skeleton):
        return " ".join(pred.tokens)
    return f"invalid\t{pred.reason}\t{' '.join(pred.tokens)}"


def cmd_predict(args) -> int:
    from .mst import load_model, predict_skeleton
    from .sets import read_records

    model = load_model(args.model)
    lines = [_decode_line(predict_skeleton(model, c)) for c in read_records(args.collection)]
    _write(args.out, "".join(line + "\n" for line in lines))
    return 0


def _eval_config(values: dict, seed: int):
    from .evaluation import EvalConfig

    return apply(EvalConfig(), {**section(values, "eval"), **{f"ga.{k}": v for k, v in section(values, "ga").items()}, "seed": seed})


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_skeleton
    from .skeleton import as_skeleton

    low, high = (float(v) for v in args.domain.split(","))
    cfg = _eval_config(load_config(args.config), args.seed)
    est, target = as_skeleton(args.est), as_skeleton(args.target)
    result = evaluate_skeleton(est, target, (low, high), cfg)
    report = OrderedDict(est=" ".join(est.tokens), target=" ".join(target.tokens), domain=[low, high], seed=args.seed)
    report.update(result.to_dict())
    _write(args.out, _json(report))
    _log(f"mean r {result.mean:.6g} (normalized {result.mean_normalized:.3g})")
    return 0


def cmd_bench(args) -> int:
    from .pipeline import PipelineConfig, run_benchmark
    from .regressor import MLPConfig

    values = load_config(args.config)
    cfg = PipelineConfig(
        seed=args.seed,
        solver=args.solver,
        model_path=args.model or "",
        regressor=apply(MLPConfig(), section(values, "mlp")),
        evaluation=_eval_config(values, args.seed),
    )
    cfg = apply(cfg, {k: v for k, v in values.items() if "." not in k})
    if args.problems:
        cfg = apply(cfg, {"problems": tuple(p.strip() for p in args.problems.split(",") if p.strip())})
    report = run_benchmark(cfg, log=_log)
    _write(args.out, report.to_json())
    if args.csv:
        _write(args.csv, report.to_csv())
    return 0


def read_curves(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """CSV with columns ``curve,x,y``; rows of one curve need not be contiguous."""
    groups: dict[str, tuple[list, list]] = OrderedDict()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            xs, ys = groups.setdefault(row["curve"], ([], []))
            xs.append(float(row["x"]))
            ys.append(float(row["y"]))
    return [(np.array(x), np.array(y)) for x, y in groups.values()]


def cmd_curves(args) -> int:
    from .pipeline import MSTSolver, mssp_on_curves

    solver = MSTSolver.from_path(args.model)
    pred = mssp_on_curves(read_curves(args.curves), solver)
    _write(args.out, _decode_line(pred) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uniskel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    seed = default_seed()

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=seed)
        p.set_defaults(func=func)
        return p

    p = add("gen-corpus", cmd_gen_corpus, "generate a skeleton corpus")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-ops", type=int)
    p.add_argument("--config")

    p = add("gen-records", cmd_gen_records, "synthesize multi-set training records from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-sets", "--Ns", dest="n_sets", type=int, default=10)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--limit", type=int)

    p = add("train-nn", cmd_train_nn, "fit the regressor on a CSV file or a benchmark problem")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", help="CSV whose last column is the response")
    source.add_argument("--problem", help="benchmark id; observed data is sampled")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--config")

    p = add("train-mst", cmd_train_mst, "train the multi-set transformer on records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--report")
    p.add_argument("--config")

    p = add("predict", cmd_predict, "decode a skeleton for each record of a file")
    p.add_argument("--model", required=True)
    p.add_argument("--collection", required=True)
    p.add_argument("--out")

    p = add("evaluate", cmd_evaluate, "score an estimated skeleton against a target skeleton")
    p.add_argument("--est", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--domain", required=True, help="low,high")
    p.add_argument("--out")
    p.add_argument("--config")

    p = add("bench", cmd_bench, "run the benchmark problems end to end")
    p.add_argument("--solver", choices=("oracle", "mst"), default="oracle")
    p.add_argument("--model")
    p.add_argument("--problems", help="comma-separated ids, default all")
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--config")

    p = add("curves", cmd_curves, "predict the skeleton shared by response curves (CSV curve,x,y)")
    p.add_argument("--model", required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UniskelError, RetryExhausted, ValueError, FileNotFoundError) as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
