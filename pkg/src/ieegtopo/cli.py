"""Command-line surface: synth, inspect, featurize, run, ablate, report.

Every subcommand is deterministic given its inputs and ``--seed``; outputs
land under ``--out`` with fixed filenames. Errors print to stderr and exit
nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ingest import Dataset, SynthConfig, load_manifest, write_synth_dataset
from .pipeline import ExperimentConfig, ablate, featurize_dataset, run_experiment
from .report import results_to_csv, results_from_csv, write_report


def _load_dataset(args) -> Dataset:
    if getattr(args, "manifest", None):
        manifest = Path(args.manifest)
    elif getattr(args, "data", None):
        manifest = Path(args.data) / "manifest.json"
    else:
        raise SystemExit("need --data DIR or --manifest FILE")
    recordings, segments = load_manifest(manifest)
    return Dataset(recordings, segments)


def _load_configs(path) -> list[ExperimentConfig]:
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        raw = [raw]
    return [ExperimentConfig.from_dict(entry) for entry in raw]


def _cmd_synth(args) -> int:
    config = SynthConfig(
        n_per_class=args.n_per_class,
        channels=args.channels,
        length=args.length,
        sample_rate=args.sample_rate,
        seed=args.seed,
    )
    manifest = write_synth_dataset(args.out, config)
    print(f"wrote synthetic dataset: {manifest}")
    return 0


def _cmd_inspect(args) -> int:
    dataset = _load_dataset(args)
    for i, rec in enumerate(dataset.recordings):
        n_segs = sum(1 for s in dataset.segments if s.recording == i)
        print(
            f"recording {i}: patient={rec.patient_id} rate={rec.sample_rate:g} Hz "
            f"channels={len(rec.channels)} samples={rec.n_samples} segments={n_segs}"
        )
        print(f"  channels: {', '.join(rec.channels)}")
    labels = dataset.labels()
    counts = {name: int((labels == code).sum()) for name, code in
              (("interictal", 0), ("preictal", 1), ("ictal", 2))}
    print(f"segments: {len(labels)} total, per class {counts}")
    return 0


def _cmd_featurize(args) -> int:
    dataset = _load_dataset(args)
    configs = _load_configs(args.config)
    if len(configs) != 1:
        raise SystemExit("featurize expects exactly one config")
    matrix, labels = featurize_dataset(configs[0], dataset, global_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "features.csv"
    matrix.to_csv(path, labels=labels)
    print(f"wrote {matrix.values.shape[0]}x{matrix.values.shape[1]} feature matrix: {path}")
    return 0


def _cmd_run(args) -> int:
    dataset = _load_dataset(args)
    configs = _load_configs(args.config)
    if len(configs) != 1:
        raise SystemExit("run expects exactly one config")
    result = run_experiment(configs[0], dataset, global_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results_to_csv([result], out / "results.csv")
    if result.status != "ok":
        print(f"error: {result.error}", file=sys.stderr)
        return 1
    print(
        f"train BA {result.train_ba:.4f}  test BA {result.test_ba:.4f}  "
        f"gap {result.gap:+.4f}  gate {'pass' if result.gate_passed else 'FAIL'}"
    )
    return 0


def _cmd_ablate(args) -> int:
    dataset = _load_dataset(args)
    grid = _load_configs(args.grid)
    results = ablate(grid, dataset, global_seed=args.seed, jobs=args.jobs)
    write_report(results, args.out, top_k=args.top_k)
    n_ok = sum(1 for r in results if r.status == "ok")
    n_gate = sum(1 for r in results if r.status == "ok" and r.gate_passed)
    print(f"ran {len(results)} configs: {n_ok} ok, {n_gate} gate-passing; report in {args.out}")
    for r in results:
        if r.status != "ok":
            print(f"  failed: {r.config.canonical_json()[:100]}... {r.error}", file=sys.stderr)
    return 0


def _cmd_report(args) -> int:
    results = results_from_csv(args.input)
    out = Path(args.out) if args.out else Path(args.input).parent
    write_report(results, out, top_k=args.top_k)
    print(f"report regenerated in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ieegtopo",
        description="Topological seizure-state classification pipelines for iEEG.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset (EDF + manifest)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-per-class", type=int, default=10)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--length", type=int, default=1024)
    p.add_argument("--sample-rate", type=float, default=256.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("inspect", help="print recording/channel/segment summaries")
    p.add_argument("--data", help="dataset directory containing manifest.json")
    p.add_argument("--manifest", help="manifest path (alternative to --data)")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("featurize", help="write the feature matrix for one config")
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("run", help="run a single experiment config")
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ablate", help="run a grid of configs and write the report")
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--grid", required=True, help="JSON list of experiment configs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="regenerate tables and plots from results.csv")
    p.add_argument("--in", dest="input", required=True, help="path to results.csv")
    p.add_argument("--out", help="output directory (default: alongside the input)")
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
