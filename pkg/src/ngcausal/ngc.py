"""Causal quantities read off a trained bank.

``tensor[i, j, k-1]`` is the strength of the influence of source ``j`` on
target ``i`` at lag ``k``: the norm of the first-layer weights of model ``i``
that touch ``x[t-k, j]``. Everything else (the lag-summed matrix, the block
indexes, lags, usage rate) is derived from it.

Channels ``[0, split)`` belong to agent A (the pitcher, ``p``) and
``[split, p)`` to agent B (the batter, ``b``). Block names read as
source -> target: ``pp`` and ``bb`` are intra-agent, ``pb`` is A -> B
(targets in B, sources in A) and ``bp`` is B -> A.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_positive
from .exceptions import ConfigurationError, InputError

__all__ = [
    "NgcTensor",
    "NgcMatrix",
    "CausalIndexes",
    "LagMatrix",
    "LagIndexes",
    "extract_tensor",
    "aggregate_matrix",
    "causal_indexes",
    "ngc_threshold",
    "lag_matrix",
    "lag_indexes",
    "variable_usage_rate",
    "interpersonal_sets",
    "off_diagonal",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_tensor_json",
    "read_tensor_json",
    "write_lag_csv",
    "read_lag_csv",
    "write_square_csv",
    "read_square_csv",
]

INDEX_NAMES = ("pp", "bb", "pb", "bp")


def _default_labels(p):
    return [f"ch{j}" for j in range(p)]


@dataclass
class NgcTensor:
    values: np.ndarray
    sampling_rate: float = 1.0
    agent_split: int | None = None
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[0] != self.values.shape[1]:
            raise InputError(f"tensor must have shape (p, p, K), got {self.values.shape}")
        if np.any(self.values < 0):
            raise InputError("causal strengths must be non-negative")
        if not self.labels:
            self.labels = _default_labels(self.p)

    @property
    def p(self):
        return self.values.shape[0]

    @property
    def max_lag(self):
        return self.values.shape[2]


@dataclass
class NgcMatrix:
    values: np.ndarray
    labels: list = field(default_factory=list)
    agent_split: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise InputError(f"matrix must be square, got {self.values.shape}")
        if np.any(self.values < 0):
            raise InputError("causal strengths must be non-negative")
        if not self.labels:
            self.labels = _default_labels(self.p)
        if len(self.labels) != self.p:
            raise InputError(f"{len(self.labels)} labels for a {self.p}x{self.p} matrix")

    @property
    def p(self):
        return self.values.shape[0]


@dataclass
class CausalIndexes:
    """Block means of the causal matrix; NaN marks an undefined block."""

    pp: float
    bb: float
    pb: float
    bp: float

    def as_dict(self):
        return {name: getattr(self, name) for name in INDEX_NAMES}

    def as_array(self):
        return np.array([self.pp, self.bb, self.pb, self.bp])

    @property
    def ratios(self):
        """Each index divided by the sum of the four (NaN when the sum is 0)."""
        values = self.as_array()
        total = np.nansum(values)
        if not total > 0:
            return dict.fromkeys(INDEX_NAMES, float("nan"))
        return {name: float(v / total) for name, v in zip(INDEX_NAMES, values)}


@dataclass
class LagMatrix:
    """Lag in seconds of the strongest influence; NaN where below threshold."""

    values: np.ndarray
    threshold: float
    labels: list = field(default_factory=list)
    agent_split: int | None = None

    @property
    def present(self):
        return np.isfinite(self.values)


@dataclass
class LagIndexes:
    pp: float
    bb: float
    pb: float
    bp: float
    excluded: dict = field(default_factory=dict)

    def as_dict(self):
        return {name: getattr(self, name) for name in INDEX_NAMES}


def off_diagonal(a):
    """Boolean mask selecting the off-diagonal entries of a square array."""
    return ~np.eye(a.shape[0], dtype=bool)


# --- extraction ------------------------------------------------------------------


def extract_tensor(bank, sampling_rate=1.0, agent_split=None, labels=None, norm="l2"):
    """Group norms of each model's first-layer weights over hidden units.

    ``norm="l1"`` sums absolute values instead of the Euclidean norm.
    """
    sampling_rate = check_positive(sampling_rate, "sampling_rate")
    W = bank.first_layer()  # (targets, H, p, K)
    if norm == "l2":
        values = np.sqrt(np.einsum("ihjk,ihjk->ijk", W, W))
    elif norm == "l1":
        values = np.abs(W).sum(axis=1)
    else:
        raise ConfigurationError(f"norm must be 'l2' or 'l1', got {norm!r}")
    return NgcTensor(values, sampling_rate, agent_split, list(labels) if labels else [])


def aggregate_matrix(tensor):
    """Sum the tensor over lags."""
    return NgcMatrix(tensor.values.sum(axis=2), list(tensor.labels), tensor.agent_split)


def _values(matrix):
    return matrix.values if isinstance(matrix, (NgcMatrix, LagMatrix)) else np.asarray(matrix, float)


def _split(matrix, agent_split):
    split = agent_split if agent_split is not None else getattr(matrix, "agent_split", None)
    if split is None:
        raise ConfigurationError("agent_split is required")
    return int(split)


def _blocks(values, split):
    """Off-diagonal entries of the four agent blocks, in INDEX_NAMES order."""
    p = values.shape[0]
    if not 0 < split < p:
        raise ConfigurationError(f"agent_split must lie in (0, {p}), got {split}")
    a, b = slice(0, split), slice(split, p)
    intra_a = values[a, a][off_diagonal(values[a, a])]
    intra_b = values[b, b][off_diagonal(values[b, b])]
    return intra_a, intra_b, values[b, a].ravel(), values[a, b].ravel()


def causal_indexes(matrix, agent_split=None):
    """Mean causal strength inside each agent and in each cross direction.

    The diagonal (a channel's own past) is left out of the intra-agent
    blocks. An agent with fewer than two channels has no intra-agent pairs
    and gets NaN.
    """
    values = _values(matrix)
    split = _split(matrix, agent_split)
    means = [float(block.mean()) if block.size else float("nan") for block in _blocks(values, split)]
    return CausalIndexes(*means)


def ngc_threshold(matrix):
    """Mean of the off-diagonal entries."""
    values = _values(matrix)
    if values.shape[0] < 2:
        return 0.0
    return float(values[off_diagonal(values)].mean())


def lag_matrix(tensor, threshold):
    """Lag (seconds) of the strongest lag of every above-threshold pair.

    Entries whose lag-summed strength is ``<= threshold`` are NaN. Among
    equal maxima the smallest lag wins.
    """
    threshold = float(threshold)
    if not np.isfinite(threshold) or threshold < 0:
        raise ConfigurationError(f"threshold must be a finite value >= 0, got {threshold!r}")
    lags = (np.argmax(tensor.values, axis=2) + 1) / tensor.sampling_rate
    total = tensor.values.sum(axis=2)
    values = np.where(total > threshold, lags, np.nan)
    return LagMatrix(values, threshold, list(tensor.labels), tensor.agent_split)


def lag_indexes(lags, agent_split=None, max_missing=0.9):
    """Block means of present lags.

    A block is excluded (NaN, with a reason in ``excluded``) when more than
    ``max_missing`` of its candidate pairs are below threshold.
    """
    split = _split(lags, agent_split)
    means, excluded = [], {}
    for name, block in zip(INDEX_NAMES, _blocks(_values(lags), split)):
        if block.size == 0:
            means.append(float("nan"))
            excluded[name] = "no candidate channel pairs"
            continue
        present = np.isfinite(block)
        missing = 1.0 - present.mean()
        if missing > max_missing:
            means.append(float("nan"))
            excluded[name] = f"{missing:.0%} of candidate pairs below threshold"
        else:
            means.append(float(block[present].mean()))
    return LagIndexes(*means, excluded=excluded)


def variable_usage_rate(matrix):
    """Fraction of off-diagonal entries strictly greater than zero."""
    values = _values(matrix)
    if values.shape[0] < 2:
        return 0.0
    return float((values[off_diagonal(values)] > 0).mean())


def interpersonal_sets(matrices, agent_split=None):
    """Cohort-mean matrix sliced into its two cross-agent blocks.

    Returns ``(a_to_b, b_to_a)``: targets in B with sources in A, and
    targets in A with sources in B.
    """
    matrices = list(matrices)
    if not matrices:
        raise InputError("at least one matrix is required")
    first = matrices[0]
    labels = getattr(first, "labels", None)
    for n, m in enumerate(matrices[1:], start=1):
        if _values(m).shape != _values(first).shape:
            raise InputError(f"matrix {n} has shape {_values(m).shape}, expected {_values(first).shape}")
        if labels is not None and getattr(m, "labels", labels) != labels:
            raise InputError(f"matrix {n} has channel labels inconsistent with matrix 0")
    split = _split(first, agent_split)
    mean = np.mean([_values(m) for m in matrices], axis=0)
    return mean[split:, :split], mean[:split, split:]


# --- files ------------------------------------------------------------------------


def _fmt(x):
    return "" if not np.isfinite(x) else repr(float(x))


def write_square_csv(path, values, labels, corner="target\\source"):
    """Labelled square table; NaN cells are left empty."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([corner] + list(labels))
        for label, row in zip(labels, values):
            writer.writerow([label] + [_fmt(v) for v in row])
    return path


def read_square_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    values = np.array([[float(c) if c != "" else np.nan for c in r[1:]] for r in rows[1:]])
    if [r[0] for r in rows[1:]] != labels or values.shape != (len(labels), len(labels)):
        raise InputError(f"{path}: row and column labels do not match")
    return values, labels


def write_matrix_csv(path, matrix):
    """Rows are targets and columns are sources, each headed by its channel label."""
    return write_square_csv(path, matrix.values, matrix.labels)


def read_matrix_csv(path, agent_split=None):
    values, labels = read_square_csv(path)
    return NgcMatrix(values, labels, agent_split)


def write_lag_csv(path, lags):
    """Like the matrix CSV; cells below threshold are left empty."""
    return write_square_csv(path, lags.values, lags.labels)


def read_lag_csv(path, threshold=float("nan"), agent_split=None):
    values, labels = read_square_csv(path)
    return LagMatrix(values, threshold, labels, agent_split)


def write_tensor_json(path, tensor, extra=None):
    doc = {
        "dims": list(tensor.values.shape),
        "order": "target, source, lag (row-major); lag k stored at position k-1",
        "sampling_rate": tensor.sampling_rate,
        "agent_split": tensor.agent_split,
        "labels": list(tensor.labels),
        "values": [float(v) for v in tensor.values.ravel()],
    }
    if extra:
        doc.update(extra)
    path = Path(path)
    path.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_tensor_json(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    values = np.array(doc["values"], dtype=np.float64).reshape(doc["dims"])
    return NgcTensor(values, doc["sampling_rate"], doc.get("agent_split"), doc.get("labels") or [])
