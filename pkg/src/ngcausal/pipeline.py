"""Per-pair runs, cohort statistics, hyperparameter sweeps and graph export.

A run is described by a :class:`RunConfig` (a JSON file on disk). Pairs come
either from dataset manifests or from the coupled-agent generator. Every
output is a pure function of the config and its seed, so reruns, and runs
with different thread counts, produce byte-identical files.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigurationError, InputError, NGCError
from .model import TrainConfig, save_bank, train_bank
from .ngc import (
    INDEX_NAMES,
    aggregate_matrix,
    causal_indexes,
    extract_tensor,
    interpersonal_sets,
    lag_indexes,
    lag_matrix,
    ngc_threshold,
    variable_usage_rate,
    write_lag_csv,
    write_matrix_csv,
    write_tensor_json,
)
from .preprocess import JointPanel, PreprocessConfig, build_dataset, load_manifest
from .stats import benjamini_hochberg, holm_bonferroni, one_sample_t, paired_t, rm_anova
from .synth import CoupledAgentSpec, gen_coupled_agents

__all__ = [
    "RunConfig",
    "PairResult",
    "load_run_config",
    "prepare_pairs",
    "run_pair",
    "run_cohort",
    "run_sweep",
    "emit_graph",
    "SWEEP_AXES",
]

SWEEP_AXES = ("lambda", "sampling_rate", "max_lag", "hidden_units", "learning_rate", "input_type")
SINGLE_PAIR_REASON = "n<2 conditions comparison requires ≥2 subjects"

_AGENT_COLORS = ("#1f77b4", "#d62728")


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.

    Exactly one of ``pairs`` (manifest paths) or ``synthetic`` (generator
    options plus ``n_pairs``) must be set. ``max_lag_s`` and
    ``sampling_rate``, when given, override ``train.max_lag`` and
    ``downsample``: the lag is converted to frames at the working rate.
    ``threshold`` is ``"pair"``, ``"cohort"`` or a fixed number.
    """

    pairs: list = field(default_factory=list)
    synthetic: dict | None = None
    train: dict = field(default_factory=dict)
    window: list | None = None
    downsample: int | None = None
    sampling_rate: float | None = None
    max_lag_s: float | None = None
    reference_channel: str | None = None
    input_type: str | None = None
    normalize: str | None = None
    threshold: str | float = "pair"
    ngc_norm: str = "l2"
    seed: int = 0
    out: str = "ngc_out"
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if bool(self.pairs) == bool(self.synthetic):
            raise ConfigurationError("the run config needs exactly one of 'pairs' or 'synthetic'")
        if isinstance(self.threshold, str):
            if self.threshold not in ("pair", "cohort"):
                raise ConfigurationError(f"threshold must be 'pair', 'cohort' or a number, got {self.threshold!r}")
        elif not (isinstance(self.threshold, (int, float)) and math.isfinite(self.threshold) and self.threshold >= 0):
            raise ConfigurationError(f"fixed threshold must be a finite number >= 0, got {self.threshold!r}")
        if self.ngc_norm not in ("l2", "l1"):
            raise ConfigurationError(f"ngc_norm must be 'l2' or 'l1', got {self.ngc_norm!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.input_type not in (None, "velocity", "acceleration"):
            raise ConfigurationError(f"input_type must be 'velocity' or 'acceleration', got {self.input_type!r}")
        # validate the training block early so a bad key fails before any work
        self.train_config()

    def train_config(self, max_lag=None):
        options = dict(self.train)
        options["seed"] = self.seed
        if max_lag is not None:
            options["max_lag"] = max_lag
        return TrainConfig.from_dict(options)

    def snapshot(self):
        """JSON-ready config; feeding it back to :func:`load_run_config` reruns the run."""
        d = asdict(self)
        d.pop("base_dir")
        d["pairs"] = [str(self._resolve(p)) for p in self.pairs]
        return d

    def _resolve(self, path):
        path = Path(path)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @classmethod
    def from_dict(cls, d, base_dir="."):
        unknown = set(d) - (set(cls.__dataclass_fields__) - {"base_dir"})
        if unknown:
            raise ConfigurationError(f"unknown run option(s): {sorted(unknown)}")
        return cls(**copy.deepcopy(d), base_dir=str(base_dir))


def load_run_config(path, **overrides):
    """Read a run config JSON; relative manifest paths resolve against its folder."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read run config {path}: {exc}") from exc
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(doc, base_dir=path.parent)


# --- data --------------------------------------------------------------------------


@dataclass
class PairData:
    name: str
    dataset: object
    truth: dict | None = None


def _preprocess_config(config, base, native_fs):
    pre = copy.copy(base)
    if config.window is not None:
        pre.window = tuple(config.window)
    if config.reference_channel is not None:
        pre.reference_channel = config.reference_channel
    if config.input_type is not None:
        pre.input_type = config.input_type
    if config.normalize is not None:
        pre.normalize = config.normalize
    if config.downsample is not None:
        pre.factor = config.downsample
    if config.sampling_rate is not None:
        ratio = native_fs / float(config.sampling_rate)
        factor = int(round(ratio))
        if factor < 1 or abs(ratio - factor) > 1e-9:
            raise ConfigurationError(
                f"sampling rate {config.sampling_rate} Hz is not an integer fraction of {native_fs} Hz"
            )
        pre.factor = factor
    pre.__post_init__()
    return pre


def _synthetic_pairs(config):
    options = dict(config.synthetic)
    n_pairs = options.pop("n_pairs", 1)
    if isinstance(n_pairs, bool) or not isinstance(n_pairs, int) or n_pairs < 1:
        raise ConfigurationError(f"synthetic.n_pairs must be a positive integer, got {n_pairs!r}")
    base_seed = options.pop("seed", config.seed)
    pairs = []
    for k in range(n_pairs):
        spec = CoupledAgentSpec.from_dict({**options, "seed": base_seed + k})
        synth = gen_coupled_agents(spec)
        ds = synth.dataset
        panels = [JointPanel(ds.sampling_rate, ds.channels, trial, name=f"trial {n}")
                  for n, trial in enumerate(ds.data)]
        pre = _preprocess_config(config, PreprocessConfig(window=None, factor=1), ds.sampling_rate)
        if pre.window is not None and pre.reference_channel is None:
            pre.window = None
        dataset = build_dataset(panels, pre)
        truth = {"adjacency": synth.truth.astype(int).tolist(),
                 "coupling_delay_s": spec.delay_frames / spec.fs}
        pairs.append(PairData(f"pair_{k:02d}", dataset, truth))
    return pairs


def _manifest_pairs(config):
    pairs = []
    for k, path in enumerate(config.pairs):
        path = config._resolve(path)
        trials, base = load_manifest(path)
        fs = trials[0].sampling_rate
        dataset = build_dataset(trials, _preprocess_config(config, base, fs))
        pairs.append(PairData(f"pair_{k:02d}", dataset))
    return pairs


def prepare_pairs(config):
    """Load or generate every pair's dataset and check they share channels."""
    pairs = _synthetic_pairs(config) if config.synthetic else _manifest_pairs(config)
    first = pairs[0].dataset
    for pair in pairs[1:]:
        if pair.dataset.channels != first.channels:
            raise InputError(f"{pair.name}: channel set differs from {pairs[0].name}")
    return pairs


def _max_lag_frames(config, fs):
    if config.max_lag_s is None:
        return None
    frames = int(round(config.max_lag_s * fs))
    if frames < 1:
        raise ConfigurationError(f"max lag of {config.max_lag_s} s is shorter than one frame at {fs} Hz")
    return frames


# --- per pair ----------------------------------------------------------------------


@dataclass
class PairResult:
    name: str
    dataset: object
    bank: object
    tensor: object
    matrix: object
    indexes: object
    usage_rate: float
    pair_threshold: float
    threshold: float | None = None
    lags: object = None
    lag_idx: object = None
    truth: dict | None = None

    @property
    def r2(self):
        return self.bank.r2


def _train_pair(pair, index, config, executor=None, threads=1):
    ds = pair.dataset
    tc = config.train_config(_max_lag_frames(config, ds.sampling_rate))
    if ds.T <= tc.max_lag:
        raise ConfigurationError(f"{pair.name}: max lag {tc.max_lag} frames does not fit {ds.T} frames per trial")
    bank = train_bank(ds.data, tc, threads=threads, seed_key=(index,), executor=executor)
    tensor = extract_tensor(bank, ds.sampling_rate, ds.agent_split, ds.labels, config.ngc_norm)
    matrix = aggregate_matrix(tensor)
    return PairResult(pair.name, ds, bank, tensor, matrix, causal_indexes(matrix),
                      variable_usage_rate(matrix), ngc_threshold(matrix), truth=pair.truth)


def _apply_threshold(result, threshold):
    result.threshold = float(threshold)
    result.lags = lag_matrix(result.tensor, threshold)
    result.lag_idx = lag_indexes(result.lags)


def _num(x):
    """float for JSON; NaN and infinities become null."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _dump(path, doc):
    text = json.dumps(_clean(doc), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def pair_report(result, config):
    ds = result.dataset
    r2 = result.r2
    finite = r2[np.isfinite(r2)]
    doc = {
        "pair": result.name,
        "version": __version__,
        "shape": {"n_trials": ds.n_trials, "T": ds.T, "p": ds.p},
        "sampling_rate": ds.sampling_rate,
        "agent_split": ds.agent_split,
        "labels": ds.labels,
        "causal_indexes": result.indexes.as_dict(),
        "ratios": result.indexes.ratios,
        "threshold": result.threshold,
        "pair_threshold": result.pair_threshold,
        "lag_indexes": result.lag_idx.as_dict(),
        "lag_excluded": result.lag_idx.excluded,
        "usage_rate": result.usage_rate,
        "r2": {"per_model": r2, "mean": float(finite.mean()) if finite.size else None},
        "final_objective": result.bank.final_loss,
        "config": config.snapshot(),
    }
    if result.truth is not None:
        doc["truth"] = result.truth
    return doc


def _write_pair(result, config, out_dir, save_weights=False):
    out = Path(out_dir) / result.name
    out.mkdir(parents=True, exist_ok=True)
    snap = config.snapshot()
    write_matrix_csv(out / "ngc_matrix.csv", result.matrix)
    write_tensor_json(out / "ngc_tensor.json", result.tensor, extra={"config": _clean(snap)})
    write_lag_csv(out / "lag_matrix.csv", result.lags)
    emit_graph(result.matrix, result.threshold, out / "graph.dot", config=snap)
    _dump(out / "report.json", pair_report(result, config))
    if save_weights:
        ds = result.dataset
        save_bank(result.bank, out / "bank", extra={
            "sampling_rate": ds.sampling_rate, "agent_split": ds.agent_split, "labels": ds.labels,
            "pair": result.name, "config_snapshot": _clean(snap)})
    return out


def _threshold_for(config, results):
    if config.threshold == "pair":
        return [r.pair_threshold for r in results]
    if config.threshold == "cohort":
        # the mean off-diagonal entry of the cohort-mean matrix
        value = float(np.mean([r.pair_threshold for r in results]))
        return [value] * len(results)
    return [float(config.threshold)] * len(results)


def _train_all(config, threads, pairs=None):
    pairs = prepare_pairs(config) if pairs is None else pairs
    threads = max(1, int(threads))
    if threads == 1:
        results = [_train_pair(pair, k, config) for k, pair in enumerate(pairs)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = [_train_pair(pair, k, config, executor=pool) for k, pair in enumerate(pairs)]
    for result, thr in zip(results, _threshold_for(config, results)):
        _apply_threshold(result, thr)
    return results


def run_pair(config, pair_index=0, out=None, threads=1, save_weights=True):
    """Train and analyse one pair and write its five artifacts (plus weights).

    Returns the :class:`PairResult`. A cohort-wide threshold falls back to
    the pair's own threshold because there is only one pair in view.
    """
    pairs = prepare_pairs(config)
    if not 0 <= pair_index < len(pairs):
        raise ConfigurationError(f"pair index {pair_index} outside [0, {len(pairs)})")
    pair = pairs[pair_index]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            result = _train_pair(pair, pair_index, config, executor=pool)
    else:
        result = _train_pair(pair, pair_index, config)
    thr = float(config.threshold) if not isinstance(config.threshold, str) else result.pair_threshold
    _apply_threshold(result, thr)
    _write_pair(result, config, out or config.out, save_weights=save_weights)
    return result


# --- cohort ------------------------------------------------------------------------


def _mean_sd(values):
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    n = int(v.size)
    mean = float(v.mean()) if n else float("nan")
    sd = float(v.std(ddof=1)) if n > 1 else float("nan")
    return {"mean": mean, "sd": sd, "n": n}


def _condition_tests(table, names):
    """RM-ANOVA over the columns, then all pairwise paired t-tests with Holm."""
    out = {"conditions": list(names)}
    if table.shape[0] < 2:
        out["skipped"] = SINGLE_PAIR_REASON
        return out
    if table.shape[1] < 2:
        out["skipped"] = "fewer than two conditions remain"
        return out
    out["rm_anova"] = rm_anova(table).to_dict()
    tests = []
    for a, b in combinations(range(len(names)), 2):
        res = paired_t(table[:, a], table[:, b])
        tests.append((f"{names[a]}-{names[b]}", res))
    adjusted = holm_bonferroni([t.p_raw for _, t in tests])
    out["pairwise"] = []
    for (label, res), adj in zip(tests, adjusted):
        res.p_adjusted, res.method = float(adj), "holm"
        out["pairwise"].append({"comparison": label, **res.to_dict()})
    return out


def _interpersonal_tests(results, threshold):
    a_to_b, b_to_a = interpersonal_sets([r.matrix for r in results])
    ds = results[0].dataset
    split = ds.agent_split
    labels = ds.labels
    stack = np.array([r.matrix.values for r in results])
    sets = {}
    for name, block, targets, sources in (
        ("a_to_b", a_to_b, range(split, ds.p), range(split)),
        ("b_to_a", b_to_a, range(split), range(split, ds.p)),
    ):
        entries = [{"target": labels[i], "source": labels[j], "mean": float(stack[:, i, j].mean())}
                   for i in targets for j in sources]
        doc = {"mean_of_set": float(block.mean()), "n_entries": len(entries)}
        if len(results) < 2:
            doc["skipped"] = SINGLE_PAIR_REASON
        else:
            tests = [one_sample_t(stack[:, labels.index(e["target"]), labels.index(e["source"])],
                                  mu=threshold, tail="greater") for e in entries]
            adjusted = benjamini_hochberg([t.p_raw for t in tests])
            for e, t, adj in zip(entries, tests, adjusted):
                t.p_adjusted, t.method = float(adj), "bh"
                e.update(t.to_dict())
            doc["significant"] = [
                {k: e[k] for k in ("source", "target", "mean", "statistic", "p_adjusted", "effect_size")}
                for e in sorted(entries, key=lambda e: (-e["mean"], e["source"], e["target"]))
                if e["p_adjusted"] is not None and np.isfinite(e["p_adjusted"]) and e["p_adjusted"] < 0.05
            ]
        doc["entries"] = entries
        sets[name] = doc
    return {"threshold": threshold, "tail": "greater", "correction": "bh per set", "sets": sets}


def _lag_analysis(results):
    excluded = sorted({name for r in results for name in r.lag_idx.excluded})
    kept = [n for n in INDEX_NAMES if n not in excluded]
    table = np.array([[getattr(r.lag_idx, n) for n in kept] for r in results]).reshape(len(results), len(kept))
    doc = {
        "per_pair": {r.name: r.lag_idx.as_dict() for r in results},
        "excluded": {n: sorted({f"{r.name}: {r.lag_idx.excluded[n]}" for r in results if n in r.lag_idx.excluded})
                     for n in excluded},
        "summary": {n: _mean_sd(table[:, c]) for c, n in enumerate(kept)},
    }
    doc["tests"] = _condition_tests(table, kept)
    return doc


def cohort_report(results, config):
    idx = np.array([r.indexes.as_array() for r in results])
    ratios = np.array([[r.indexes.ratios[n] for n in INDEX_NAMES] for r in results])
    usage = [r.usage_rate for r in results]
    r2 = [float(np.nanmean(r.r2)) for r in results]
    thresholds = [r.threshold for r in results]
    cohort_thr = float(np.mean([r.pair_threshold for r in results]))
    test_thr = cohort_thr if isinstance(config.threshold, str) else float(config.threshold)
    return {
        "version": __version__,
        "n_pairs": len(results),
        "pairs": [
            {"pair": r.name, "causal_indexes": r.indexes.as_dict(), "ratios": r.indexes.ratios,
             "lag_indexes": r.lag_idx.as_dict(), "usage_rate": r.usage_rate,
             "r2_mean": float(np.nanmean(r.r2)), "threshold": r.threshold}
            for r in results
        ],
        "summary": {
            "causal_indexes": {n: _mean_sd(idx[:, c]) for c, n in enumerate(INDEX_NAMES)},
            "ratios": {n: _mean_sd(ratios[:, c]) for c, n in enumerate(INDEX_NAMES)},
            "usage_rate": _mean_sd(usage),
            "r2": _mean_sd(r2),
            "threshold": _mean_sd(thresholds),
        },
        "analysis_indexes": _condition_tests(idx, list(INDEX_NAMES)),
        "analysis_interpersonal": _interpersonal_tests(results, test_thr),
        "analysis_lags": _lag_analysis(results),
        "config": config.snapshot(),
    }


def _fmt_ms(stat, digits=4):
    if stat["mean"] is None or not np.isfinite(stat["mean"]):
        return "n/a"
    sd = stat["sd"]
    sd_text = "n/a" if sd is None or not np.isfinite(sd) else f"{sd:.{digits}f}"
    return f"{stat['mean']:.{digits}f} ± {sd_text}"


def _fmt_p(p):
    return "n/a" if p is None or not np.isfinite(p) else f"{p:.4g}"


def cohort_summary(report):
    s = report["summary"]
    lines = [f"cohort of {report['n_pairs']} pair(s)", "", f"{'index':<8}{'mean ± sd':>24}{'ratio':>24}"]
    for n in INDEX_NAMES:
        lines.append(f"{n:<8}{_fmt_ms(s['causal_indexes'][n]):>24}{_fmt_ms(s['ratios'][n], 3):>24}")
    lines += [
        "",
        f"usage rate  {_fmt_ms(s['usage_rate'], 3)}",
        f"mean R^2    {_fmt_ms(s['r2'], 3)}",
        f"threshold   {_fmt_ms(s['threshold'], 5)}",
        "",
    ]
    a1 = report["analysis_indexes"]
    if "skipped" in a1:
        lines.append(f"index tests skipped: {a1['skipped']}")
    else:
        aov = a1["rm_anova"]
        lines.append(f"RM-ANOVA F({aov['df'][0]}, {aov['df'][1]}) = {_fmt_p(aov['statistic'])}, "
                     f"p = {_fmt_p(aov['p_raw'])}, partial eta^2 = {_fmt_p(aov['effect_size'])}")
        for t in a1["pairwise"]:
            lines.append(f"  {t['comparison']:<8} t({t['df'][0]}) = {_fmt_p(t['statistic']):>9}  "
                         f"p_holm = {_fmt_p(t['p_adjusted']):>9}  d = {_fmt_p(t['effect_size'])}")
    a2 = report["analysis_interpersonal"]
    lines.append("")
    for name, doc in a2["sets"].items():
        if "skipped" in doc:
            lines.append(f"{name}: tests skipped: {doc['skipped']}")
        else:
            lines.append(f"{name}: {len(doc['significant'])} of {doc['n_entries']} entries above threshold "
                         f"{a2['threshold']:.5f} (BH < 0.05)")
            for e in doc["significant"][:10]:
                lines.append(f"  {e['source']} -> {e['target']}  mean {e['mean']:.4f}  "
                             f"p_bh {_fmt_p(e['p_adjusted'])}")
    a3 = report["analysis_lags"]
    lines.append("")
    lines.append("lag indexes (s): " + ", ".join(f"{n} {_fmt_ms(v, 3)}" for n, v in a3["summary"].items()))
    if a3["excluded"]:
        lines.append("excluded: " + ", ".join(sorted(a3["excluded"])))
    if "skipped" in a3["tests"]:
        lines.append(f"lag tests skipped: {a3['tests']['skipped']}")
    else:
        aov = a3["tests"]["rm_anova"]
        lines.append(f"lag RM-ANOVA F({aov['df'][0]}, {aov['df'][1]}) = {_fmt_p(aov['statistic'])}, "
                     f"p = {_fmt_p(aov['p_raw'])}")
    return "\n".join(lines) + "\n"


def run_cohort(config, out=None, threads=1, pairs=None, save_weights=False):
    """Run every pair, then the cohort statistics.

    Writes each pair's artifacts under ``<out>/<pair>/`` plus
    ``cohort_report.json`` and ``cohort_summary.txt``. Returns the report.
    """
    out = Path(out or config.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _train_all(config, threads, pairs)
    for r in results:
        _write_pair(r, config, out, save_weights=save_weights)
    report = cohort_report(results, config)
    _dump(out / "cohort_report.json", report)
    (out / "cohort_summary.txt").write_text(cohort_summary(_clean(report)), encoding="utf-8")
    return _clean(report)


# --- sweeps ------------------------------------------------------------------------


def _parse_value(axis, value):
    if axis == "input_type":
        return str(value)
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{axis} value {value!r} is not a number") from None
    if axis == "hidden_units":
        if v != int(v):
            raise ConfigurationError(f"hidden_units value {value!r} is not an integer")
        return int(v)
    return v


def _with_axis(config, axis, value):
    d = config.snapshot()
    d["train"] = dict(d["train"])
    if axis == "lambda":
        d["train"]["lam"] = value
    elif axis == "hidden_units":
        d["train"]["hidden_units"] = value
    elif axis == "learning_rate":
        d["train"]["learning_rate"] = value
    elif axis == "max_lag":
        d["max_lag_s"] = value
    elif axis == "sampling_rate":
        d["sampling_rate"] = value
    elif axis == "input_type":
        d["input_type"] = value
    return RunConfig.from_dict(d, base_dir=config.base_dir)


SWEEP_COLUMNS = ["value", "usage_mean", "usage_sd"] + [
    f"{n}_{s}" for n in INDEX_NAMES for s in ("ratio_mean", "ratio_sd")] + ["n_pairs", "error"]


def run_sweep(config, axis, values, out=None, threads=1):
    """One full cohort run per axis value.

    Writes ``sweep_<axis>.csv`` and ``sweep_<axis>.txt``; a value that fails
    keeps its row with the error message. Returns the list of row dicts.
    """
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}; got {axis!r}")
    values = [_parse_value(axis, v) for v in values]
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    out = Path(out or config.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        row = {"value": value, "error": ""}
        try:
            cfg = _with_axis(config, axis, value)
            report = run_cohort(cfg, out=out / f"{axis}={value}", threads=threads)
            s = report["summary"]
            row["usage_mean"], row["usage_sd"] = s["usage_rate"]["mean"], s["usage_rate"]["sd"]
            for n in INDEX_NAMES:
                row[f"{n}_ratio_mean"] = s["ratios"][n]["mean"]
                row[f"{n}_ratio_sd"] = s["ratios"][n]["sd"]
            row["n_pairs"] = report["n_pairs"]
        except NGCError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    _write_sweep(rows, axis, out)
    return rows


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _write_sweep(rows, axis, out):
    with (out / f"sweep_{axis}.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([axis if c == "value" else c for c in SWEEP_COLUMNS])
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in SWEEP_COLUMNS])
    header = [axis, "usage rate"] + [f"{n} ratio" for n in INDEX_NAMES]
    table = []
    for row in rows:
        if row["error"]:
            table.append([str(row["value"]), f"failed ({row['error']})"])
            continue
        cells = [str(row["value"]), _fmt_ms({"mean": row["usage_mean"], "sd": row["usage_sd"]}, 2)]
        cells += [_fmt_ms({"mean": row[f"{n}_ratio_mean"], "sd": row[f"{n}_ratio_sd"]}, 2) for n in INDEX_NAMES]
        table.append(cells)
    widths = [max(len(r[c]) for r in [header] + table if c < len(r)) for c in range(len(header))]
    lines = ["  ".join(cell.rjust(widths[c]) for c, cell in enumerate(r)) for r in [header] + table]
    (out / f"sweep_{axis}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- graph -------------------------------------------------------------------------


def _dot_id(label):
    return '"' + str(label).replace("\\", "\\\\").replace('"', '\\"') + '"'


def emit_graph(matrix, threshold, path=None, config=None, max_width=5.0):
    """DOT digraph with an edge ``source -> target`` for every entry above ``threshold``.

    Edge ``penwidth`` is proportional to the strength (the strongest edge gets
    ``max_width``). Nodes are coloured by agent when the split is known.
    Returns the text; writes it to ``path`` when given.
    """
    values = np.asarray(matrix.values, dtype=np.float64)
    labels = list(matrix.labels)
    split = matrix.agent_split
    threshold = float(threshold)
    p = values.shape[0]
    edges = [(labels[j], labels[i], float(values[i, j])) for i in range(p) for j in range(p)
             if i != j and values[i, j] > threshold]
    edges.sort(key=lambda e: (e[0], e[1]))
    top = max((w for _, _, w in edges), default=0.0)
    lines = [f"// threshold = {threshold!r}"]
    if config is not None:
        lines.append("// config = " + json.dumps(_clean(config), sort_keys=True, ensure_ascii=False))
    lines += ["digraph ngc {", "  rankdir=LR;"]
    for n in sorted(range(p), key=lambda n: labels[n]):
        color = _AGENT_COLORS[0 if split is None or n < split else 1]
        lines.append(f"  {_dot_id(labels[n])} [color={_dot_id(color)}];")
    for src, dst, w in edges:
        width = max_width * w / top
        lines.append(f"  {_dot_id(src)} -> {_dot_id(dst)} [penwidth={width:.6f}, ngc={w!r}];")
    lines.append("}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
