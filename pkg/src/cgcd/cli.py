"""Command-line interface: gen-data, train, report, sweep.

Exit codes: 0 success, 2 validation failure, 3 capacity shortfall,
4 I/O or file-format failure. Relative output paths resolve under
$CGCD_OUTPUT_ROOT when it is set.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from .clustering import clustering_acc, kmeans, split_acc, write_confusion_csv
from .config import SWEEPABLE, build_config
from .data import gen_gaussian_mixture, load_dataset, save_dataset
from .errors import CapacityError, DatasetFormatError, ValidationError
from .model import features, save_checkpoint
from .protocol import write_manifest
from .trainer import RunReport, run_pipeline

OUTPUT_ROOT_ENV = "CGCD_OUTPUT_ROOT"


def _resolve(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_gen_data(args) -> int:
    cfg = build_config(args.config, args.set)
    spec = cfg.synthetic_spec()
    data = gen_gaussian_mixture(spec)
    path = _resolve(cfg.dataset)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_dataset(path, data, seed=spec.seed)
    print(f"wrote {data.n} samples ({spec.num_classes} classes, dim {spec.dim}) to {path}")
    return 0


def _run_one(cfg, dataset, seed: int) -> tuple[RunReport, object, object]:
    train_cfg = replace(cfg.train_config())
    report, params = run_pipeline(dataset, cfg.stream_config(), train_cfg, seed)
    return report, params, train_cfg


def cmd_train(args) -> int:
    cfg = build_config(args.config, args.set)
    dataset, _header = load_dataset(_resolve(cfg.dataset))
    out = _ensure_dir(_resolve(cfg.out_dir))

    report, params, train_cfg = _run_one(cfg, dataset, cfg.seed)
    report.write_json(os.path.join(out, "report.json"))
    report.write_csv(os.path.join(out, "metrics.csv"))
    save_checkpoint(params, os.path.join(out, "checkpoint.bin"))

    # rebuild the stream for the manifest + final confusion matrix
    from .autodiff import spawn_rngs
    from .protocol import CumulativeTestSet, accumulate, make_benchmark_stream

    stream_rng, _, _, km_rng = spawn_rngs(cfg.seed, 4)
    stream = make_benchmark_stream(dataset, cfg.stream_config(), stream_rng)
    write_manifest(stream, os.path.join(out, "manifest.txt"))
    pool = accumulate(CumulativeTestSet.empty(stream.offline.dim), stream.offline_test)
    for sess in stream.sessions:
        pool = accumulate(pool, sess.test)
    if stream.sessions:
        feats = features(params, pool.x).data
        km = kmeans(feats, len(stream.classes_at(stream.n_sessions)), km_rng, restarts=train_cfg.kmeans_restarts)
        match = clustering_acc(pool.y, km.assignment)
        write_confusion_csv(match, os.path.join(out, "confusion_final.csv"))

    for row in report.sessions:
        print(
            f"session {row.session}: k={row.k} "
            f"all={row.acc_all:.4f} old={row.acc_old:.4f} new={row.acc_new:.4f}"
        )
    print(f"outputs in {out}")
    return 0


def cmd_report(args) -> int:
    reports = [RunReport.load_json(p) for p in args.reports]
    if not reports:
        raise ValidationError("report needs at least one report.json")
    ref = reports[0].config
    for i, rep in enumerate(reports[1:], 2):
        if rep.config != ref:
            raise ValidationError(f"report {i} was produced by an incompatible config")
        if len(rep.sessions) != len(reports[0].sessions):
            raise ValidationError(f"report {i} has a different session count")
    out_path = _resolve(args.out)
    parent = os.path.dirname(out_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["session", "n_runs"]
            + [f"{m}_{s}" for m in ("acc_all", "acc_old", "acc_new") for s in ("mean", "std")]
        )
        n_sessions = len(reports[0].sessions)
        for t in range(n_sessions):
            cells = [reports[0].sessions[t].session, len(reports)]
            for metric in ("acc_all", "acc_old", "acc_new"):
                vals = np.array([getattr(r.sessions[t], metric) for r in reports])
                cells += [format(vals.mean(), ".17g"), format(vals.std(), ".17g")]
            w.writerow(cells)
        cells = ["mean", len(reports)]
        for metric in ("acc_all", "acc_old", "acc_new"):
            per_seed = np.array([r.mean_of(metric) for r in reports])
            cells += [format(per_seed.mean(), ".17g"), format(per_seed.std(), ".17g")]
        w.writerow(cells)
    print(f"wrote {out_path} ({len(reports)} runs, {n_sessions} sessions)")
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args.config, args.set)
    if args.param not in SWEEPABLE:
        raise ValidationError(f"sweep parameter must be one of {SWEEPABLE}, got {args.param!r}")
    try:
        caster = float if args.param == "epsilon" else int
        values = [caster(v) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise ValidationError(f"bad sweep values {args.values!r}: {e}") from e
    if not values:
        raise ValidationError("sweep needs at least one value")
    seeds = list(cfg.seeds) if cfg.seeds else [cfg.seed]

    # validate every arm before running anything
    arms = []
    for v in values:
        arm = build_config(args.config, list(args.set or ()) + [f"{args.param}={v}"])
        arms.append((v, arm))

    dataset, _header = load_dataset(_resolve(cfg.dataset))
    out = _ensure_dir(_resolve(args.out))
    rows = []
    for v, arm in arms:
        finals, nbrs = [], []
        for seed in seeds:
            report, _, _ = _run_one(arm, dataset, seed)
            rows.append(
                [
                    args.param,
                    v,
                    seed,
                    format(report.final.acc_all, ".17g"),
                    format(report.final.acc_old, ".17g"),
                    format(report.final.acc_new, ".17g"),
                    format(report.final.mean_neighbors, ".17g"),
                ]
            )
            finals.append(report.final.acc_all)
            nbrs.append(report.final.mean_neighbors)
        rows.append(
            [
                args.param,
                v,
                "mean",
                format(float(np.mean(finals)), ".17g"),
                "",
                "",
                format(float(np.mean(nbrs)), ".17g"),
            ]
        )
    path = os.path.join(out, "sweep.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "seed", "final_acc_all", "final_acc_old", "final_acc_new", "mean_neighbors"])
        w.writerows(rows)
    print(f"wrote {path} ({len(values)} values x {len(seeds)} seeds)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgcd", description="continual category discovery lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train and evaluate one run")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("report", help="aggregate run reports into a CSV table")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("sweep", help="run one arm per parameter value")
    common(p)
    p.add_argument("--param", required=True, help=f"one of {SWEEPABLE}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CapacityError as e:
        print(f"capacity error: {e}", file=sys.stderr)
        return 3
    except (OSError, DatasetFormatError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
