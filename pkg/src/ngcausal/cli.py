"""Command-line entry point: ``ngcausal <command> [options]``.

Errors are printed to standard error as one JSON object and the process
exits non-zero. The worker-thread count comes from ``--threads``, else the
``NGCAUSAL_THREADS`` environment variable, else 1; it never changes results.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigurationError, InputError, NGCError, TrainingError
from .model import load_bank
from .ngc import (
    NgcMatrix,
    aggregate_matrix,
    extract_tensor,
    lag_matrix,
    ngc_threshold,
    read_matrix_csv,
    write_lag_csv,
    write_matrix_csv,
    write_square_csv,
    write_tensor_json,
)
from .pipeline import SWEEP_AXES, emit_graph, load_run_config, run_cohort, run_pair, run_sweep
from .preprocess import load_dataset, save_dataset
from .synth import gen_coupled_agents, gen_var, linear_gc_oracle, load_spec

THREADS_ENV = "NGCAUSAL_THREADS"

EXIT_CODES = {ConfigurationError: 2, InputError: 3, TrainingError: 4}


def resolve_threads(flag):
    """``--threads`` wins over the environment; the default is 1."""
    if flag is not None:
        value, source = flag, "--threads"
    elif os.environ.get(THREADS_ENV):
        value, source = os.environ[THREADS_ENV], THREADS_ENV
    else:
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise ConfigurationError(f"{source} must be an integer, got {value!r}") from None
    if threads < 1:
        raise ConfigurationError(f"{source} must be >= 1, got {threads}")
    return threads


def _config(args, **overrides):
    if not args.config:
        raise ConfigurationError(f"'{args.command}' needs --config")
    return load_run_config(args.config, seed=args.seed, **overrides)


def _out(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print(doc):
    print(json.dumps(doc, sort_keys=True))


# --- commands ------------------------------------------------------------------------


def cmd_preprocess(args):
    """Manifest of raw trials -> normalized velocity CSVs plus a new manifest."""
    if not args.config:
        raise ConfigurationError("'preprocess' needs --config <dataset manifest>")
    dataset = load_dataset(args.config)
    out = _out(args, "preprocessed")
    manifest = save_dataset(dataset, out)
    _print({"manifest": str(manifest), "shape": list(dataset.shape), "agent_split": dataset.agent_split})


def cmd_train(args):
    """Train and analyse one pair of a run config; weights are saved too."""
    config = _config(args)
    threads = resolve_threads(args.threads)
    out = _out(args, config.out)
    result = run_pair(config, pair_index=args.pair, out=out, threads=threads)
    _print({"pair": result.name, "out": str(out / result.name), "r2_mean": float(np.nanmean(result.r2)),
            "usage_rate": result.usage_rate})


def cmd_extract(args):
    """Recompute tensor, matrix, lags and graph from saved weights."""
    if not args.bank:
        raise ConfigurationError("'extract' needs --bank <path to bank.json>")
    bank = load_bank(args.bank)
    manifest = json.loads(Path(args.bank).with_suffix(".json").read_text(encoding="utf-8"))
    fs = args.sampling_rate or manifest.get("sampling_rate", 1.0)
    tensor = extract_tensor(bank, fs, manifest.get("agent_split"), manifest.get("labels"), args.norm)
    matrix = aggregate_matrix(tensor)
    threshold = ngc_threshold(matrix) if args.threshold is None else args.threshold
    out = _out(args, Path(args.bank).parent)
    write_matrix_csv(out / "ngc_matrix.csv", matrix)
    write_tensor_json(out / "ngc_tensor.json", tensor)
    write_lag_csv(out / "lag_matrix.csv", lag_matrix(tensor, threshold))
    emit_graph(matrix, threshold, out / "graph.dot")
    _print({"out": str(out), "threshold": threshold})


def cmd_cohort(args):
    config = _config(args)
    threads = resolve_threads(args.threads)
    report = run_cohort(config, out=_out(args, config.out), threads=threads, save_weights=args.save_weights)
    _print({"n_pairs": report["n_pairs"], "summary": report["summary"]["causal_indexes"]})


def cmd_sweep(args):
    if not args.axis or not args.values:
        raise ConfigurationError(f"'sweep' needs --axis (one of {', '.join(SWEEP_AXES)}) and --values")
    config = _config(args)
    threads = resolve_threads(args.threads)
    values = [v for v in args.values.split(",") if v.strip()]
    rows = run_sweep(config, args.axis, values, out=_out(args, config.out), threads=threads)
    _print({"axis": args.axis, "rows": len(rows), "failed": sum(1 for r in rows if r["error"])})


def cmd_synth(args):
    """Generate a synthetic pair in the velocity-CSV ingress format."""
    if not args.config:
        raise ConfigurationError("'synth' needs --config <spec JSON>")
    spec = load_spec(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    data = gen_var(spec) if hasattr(spec, "coef") else gen_coupled_agents(spec)
    out = _out(args, "synthetic")
    manifest = save_dataset(data.dataset, out)
    truth = {"adjacency": data.truth.astype(int).tolist(), "labels": data.dataset.labels}
    if data.truth_lags is not None:
        truth["lags_s"] = [[None if not np.isfinite(v) else float(v) for v in row] for row in data.truth_lags]
    (out / "truth.json").write_text(json.dumps(truth, sort_keys=True) + "\n", encoding="utf-8")
    _print({"manifest": str(manifest), "shape": list(data.dataset.shape)})


def cmd_oracle(args):
    """Linear Granger-causality F tests on a dataset manifest."""
    if not args.config:
        raise ConfigurationError("'oracle' needs --config <dataset manifest>")
    dataset = load_dataset(args.config)
    pvalues, adjacency = linear_gc_oracle(dataset.data, args.max_lag, alpha=args.alpha,
                                          conditioning=args.conditioning)
    out = _out(args, "oracle")
    write_square_csv(out / "oracle_pvalues.csv", pvalues, dataset.labels)
    write_matrix_csv(out / "oracle_adjacency.csv", NgcMatrix(adjacency.astype(float), dataset.labels))
    _print({"out": str(out), "edges": int(adjacency.sum())})


def cmd_graph(args):
    if not args.matrix:
        raise ConfigurationError("'graph' needs --matrix <ngc_matrix.csv>")
    matrix = read_matrix_csv(args.matrix, agent_split=args.agent_split)
    threshold = ngc_threshold(matrix) if args.threshold is None else args.threshold
    target = Path(args.out) if args.out else Path(args.matrix).with_name("graph.dot")
    if target.suffix != ".dot":
        target.mkdir(parents=True, exist_ok=True)
        target = target / "graph.dot"
    emit_graph(matrix, threshold, target)
    _print({"graph": str(target), "threshold": threshold})


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "extract": cmd_extract,
    "cohort": cmd_cohort,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
    "oracle": cmd_oracle,
    "graph": cmd_graph,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ngcausal", description="Neural Granger causality for two-agent motion data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config (run config, dataset manifest or generator spec)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        return p

    add("preprocess", "build a normalized dataset from raw trials")
    p = add("train", "train and analyse one pair")
    p.add_argument("--pair", type=int, default=0, help="index of the pair in the config")
    p = add("extract", "derive NGC outputs from saved weights")
    p.add_argument("--bank", help="bank.json written by 'train'")
    p.add_argument("--threshold", type=float)
    p.add_argument("--sampling-rate", type=float)
    p.add_argument("--norm", choices=("l2", "l1"), default="l2")
    p = add("cohort", "run every pair and the cohort statistics")
    p.add_argument("--save-weights", action="store_true")
    p = add("sweep", "repeat the cohort run over one hyperparameter")
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--values", help="comma-separated values")
    add("synth", "generate a synthetic dataset from a spec")
    p = add("oracle", "linear Granger-causality baseline")
    p.add_argument("--max-lag", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--conditioning", choices=("pairwise", "full"), default="pairwise")
    p = add("graph", "DOT graph from a matrix CSV")
    p.add_argument("--matrix", help="ngc_matrix.csv")
    p.add_argument("--threshold", type=float)
    p.add_argument("--agent-split", type=int)
    return parser


def _error_json(exc):
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, TrainingError):
        doc["failures"] = {str(k): str(v) for k, v in exc.failures.items()}
    return json.dumps(doc, sort_keys=True)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except NGCError as exc:
        print(_error_json(exc), file=sys.stderr)
        return next((code for cls, code in EXIT_CODES.items() if isinstance(exc, cls)), 1)
    except (OSError, ValueError) as exc:
        print(_error_json(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
