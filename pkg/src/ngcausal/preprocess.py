"""Kinematic preprocessing: raw marker trajectories to normalized trial stacks.

The pipeline for one pair of agents is

    low-pass filter -> resultant velocity -> release detection on a reference
    channel -> clip a window around the release -> stride decimation ->
    min-max normalization pooled over all trials

and produces a :class:`TrialDataset` of shape (n_trials, T, p).
"""

from __future__ import annotations

import csv
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_positive_int, check_trials
from .exceptions import ConfigurationError, InputError

__all__ = [
    "MarkerPanel",
    "JointPanel",
    "TrialDataset",
    "PreprocessConfig",
    "PooledMinMaxScaler",
    "lowpass_filter",
    "resultant_velocity",
    "resultant_acceleration",
    "speed_derivative",
    "detect_release",
    "clip_window",
    "downsample",
    "normalize_minmax",
    "relabel_handedness",
    "build_dataset",
    "read_marker_csv",
    "read_velocity_csv",
    "write_velocity_csv",
    "load_manifest",
    "load_dataset",
    "save_dataset",
]

AXES = ("x", "y", "z")


def _label(agent, joint):
    return f"{agent}_{joint}"


@dataclass
class MarkerPanel:
    """Raw 3-D marker trajectories of one trial.

    ``positions`` has shape (n_frames, n_markers, 3), in meters.
    """

    sampling_rate: float
    markers: list
    positions: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.sampling_rate = check_positive(self.sampling_rate, "sampling_rate")
        self.markers = [tuple(m) for m in self.markers]
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise InputError(f"positions must have shape (frames, markers, 3); got {self.positions.shape}")
        if self.positions.shape[1] != len(self.markers):
            raise InputError(
                f"{len(self.markers)} markers declared but positions hold {self.positions.shape[1]}"
            )
        _check_unique(self.markers)

    @property
    def labels(self):
        return [_label(a, j) for a, j in self.markers]


@dataclass
class JointPanel:
    """Scalar per-joint series of one trial, shape (n_frames, n_channels)."""

    sampling_rate: float
    channels: list
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.sampling_rate = check_positive(self.sampling_rate, "sampling_rate")
        self.channels = [tuple(c) for c in self.channels]
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.channels):
            raise InputError(
                f"values must have shape (frames, {len(self.channels)}); got {self.values.shape}"
            )
        _check_unique(self.channels)

    @property
    def labels(self):
        return [_label(a, j) for a, j in self.channels]

    @property
    def n_frames(self):
        return self.values.shape[0]

    def channel_index(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise InputError(
                f"reference channel {label!r} not found in trial {self.name or '<unnamed>'}"
            ) from None


@dataclass
class TrialDataset:
    """Normalized stack of trials with channel metadata.

    ``data`` has shape (n_trials, T, p); channels ``[0, agent_split)`` belong
    to the first agent and ``[agent_split, p)`` to the second.
    """

    data: np.ndarray
    channels: list
    agent_split: int
    sampling_rate: float
    norm_min: np.ndarray | None = None
    norm_max: np.ndarray | None = None
    trial_names: list = field(default_factory=list)

    def __post_init__(self):
        self.data = check_trials(self.data, name="data")
        self.channels = [tuple(c) for c in self.channels]
        if len(self.channels) != self.data.shape[2]:
            raise InputError(f"{len(self.channels)} channels declared but data has {self.data.shape[2]}")
        if not 0 < int(self.agent_split) < self.p:
            raise ConfigurationError(f"agent_split must lie in (0, {self.p}); got {self.agent_split}")
        self.agent_split = int(self.agent_split)
        self.sampling_rate = check_positive(self.sampling_rate, "sampling_rate")

    @property
    def n_trials(self):
        return self.data.shape[0]

    @property
    def T(self):
        return self.data.shape[1]

    @property
    def p(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    @property
    def labels(self):
        return [_label(a, j) for a, j in self.channels]


def _check_unique(channels):
    seen = set()
    for ch in channels:
        if ch in seen:
            raise InputError(f"duplicate joint label {ch[1]!r} within agent {ch[0]!r}")
        seen.add(ch)


# --- signal operations -------------------------------------------------------


def _filter_padlen(sos):
    return 3 * (2 * len(sos) + 1)


def lowpass_filter(x, cutoff, fs, order=4):
    """Zero-phase Butterworth low-pass along axis 0.

    The filter is run forward and backward, so the effective magnitude
    response is the square of the designed one and there is no phase lag.
    """
    cutoff = check_positive(cutoff, "cutoff")
    fs = check_positive(fs, "fs")
    order = check_positive_int(order, "order")
    if cutoff >= fs / 2:
        raise ConfigurationError(f"cutoff {cutoff} Hz must be below the Nyquist frequency {fs / 2} Hz")
    x = np.asarray(x, dtype=np.float64)
    sos = signal.butter(order, cutoff, btype="low", fs=fs, output="sos")
    padlen = _filter_padlen(sos)
    if x.shape[0] <= padlen:
        raise InputError(f"series of length {x.shape[0]} is too short for filter padding ({padlen})")
    return signal.sosfiltfilt(sos, x, axis=0, padlen=padlen)


def resultant_velocity(positions, fs):
    """Speed (m/s) of a marker from its (n_frames, 3) positions.

    Central differences on interior frames, one-sided at the two edges.
    Extra leading axes after the first are allowed, e.g. (frames, markers, 3).
    """
    fs = check_positive(fs, "fs")
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 2:
        raise InputError("resultant velocity needs at least 2 frames")
    vel = np.gradient(positions, 1.0 / fs, axis=0)
    return np.linalg.norm(vel, axis=-1)


def resultant_acceleration(positions, fs):
    """Magnitude of the second time derivative of marker positions."""
    fs = check_positive(fs, "fs")
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 3:
        raise InputError("resultant acceleration needs at least 3 frames")
    vel = np.gradient(positions, 1.0 / fs, axis=0)
    acc = np.gradient(vel, 1.0 / fs, axis=0)
    return np.linalg.norm(acc, axis=-1)


def speed_derivative(values, fs):
    """Absolute time derivative of scalar speed series (frames along axis 0)."""
    fs = check_positive(fs, "fs")
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        raise InputError("differentiation needs at least 2 frames")
    return np.abs(np.gradient(values, 1.0 / fs, axis=0))


def detect_release(reference):
    """Frame index of the global maximum; the earliest one wins ties."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim != 1 or reference.size == 0:
        raise InputError("reference channel must be a non-empty 1-D series")
    return int(np.argmax(reference))


def clip_window(panel, event_idx, pre_s, post_s):
    """Cut ``[event - round(pre_s*fs), event + round(post_s*fs))`` from a panel."""
    fs = panel.sampling_rate
    pre = int(round(pre_s * fs))
    post = int(round(post_s * fs))
    if pre < 0 or post < 0 or pre + post <= 0:
        raise ConfigurationError(f"window ({pre_s}, {post_s}) s must be non-negative and non-empty")
    start, stop = event_idx - pre, event_idx + post
    if start < 0 or stop > panel.n_frames:
        raise InputError(
            f"trial {panel.name or '<unnamed>'}: window [{start}, {stop}) around event {event_idx} "
            f"exceeds the recording of {panel.n_frames} frames"
        )
    return JointPanel(fs, panel.channels, panel.values[start:stop].copy(), name=panel.name)


def downsample(panel, factor):
    """Keep every ``factor``-th frame starting at frame 0."""
    if isinstance(factor, bool) or not isinstance(factor, (int, np.integer)) or factor <= 0:
        raise ConfigurationError(f"downsample factor must be a positive integer, got {factor!r}")
    return JointPanel(panel.sampling_rate / factor, panel.channels,
                      panel.values[::factor].copy(), name=panel.name)


def normalize_minmax(values, scope="pair"):
    """Min-max scale each channel of an (n_trials, T, p) stack to [0, 1].

    With ``scope="pair"`` the extrema are pooled over all trials; with
    ``scope="trial"`` every trial is scaled on its own. Constant channels map
    to zeros and emit a warning.

    Returns
    -------
    normalized : ndarray
    (min, max) : tuple of ndarrays
        Shape (p,) for pair scope, (n_trials, p) for trial scope.
    """
    values = check_trials(values, name="values")
    if scope == "pair":
        lo = values.min(axis=(0, 1))
        hi = values.max(axis=(0, 1))
        out = _scale(values, lo, hi)
    elif scope == "trial":
        lo = values.min(axis=1)
        hi = values.max(axis=1)
        out = np.stack([_scale(v[np.newaxis], a, b)[0] for v, a, b in zip(values, lo, hi)])
    else:
        raise ConfigurationError(f"normalization scope must be 'pair' or 'trial', got {scope!r}")
    return out, (lo, hi)


def _scale(values, lo, hi):
    span = hi - lo
    constant = span <= 0
    if np.any(constant):
        warnings.warn(
            f"constant channel(s) {np.flatnonzero(constant).tolist()} mapped to zeros",
            RuntimeWarning,
            stacklevel=3,
        )
    safe = np.where(constant, 1.0, span)
    out = (values - lo) / safe
    out[..., constant] = 0.0
    return out


class PooledMinMaxScaler(TransformerMixin, BaseEstimator):
    """Per-channel min-max scaling with extrema pooled over trials and time.

    Accepts (n_trials, T, p) or (T, p) input; ``transform`` returns the same
    rank as it was given.
    """

    def fit(self, X, y=None):
        arr = check_trials(X)
        self.data_min_ = arr.min(axis=(0, 1))
        self.data_max_ = arr.max(axis=(0, 1))
        self.n_features_in_ = arr.shape[2]
        return self

    def transform(self, X):
        check_is_fitted(self)
        squeeze = np.ndim(X) == 2
        arr = check_trials(X)
        if arr.shape[2] != self.n_features_in_:
            raise InputError(f"expected {self.n_features_in_} channels, got {arr.shape[2]}")
        out = _scale(arr, self.data_min_, self.data_max_)
        return out[0] if squeeze else out

    def inverse_transform(self, X):
        check_is_fitted(self)
        squeeze = np.ndim(X) == 2
        arr = check_trials(X)
        out = arr * (self.data_max_ - self.data_min_) + self.data_min_
        return out[0] if squeeze else out


# --- labels --------------------------------------------------------------------

_SIDE = re.compile(r"(?<![a-z])(right|left|r|l)(?![a-z])", re.IGNORECASE)


def relabel_handedness(joint, handedness):
    """Rename the side token of a joint label to back/front.

    For a right-handed agent the right side is the back side; for a
    left-handed agent it is the left side. Labels without a side token are
    returned unchanged.
    """
    if handedness is None:
        return joint
    hand = str(handedness).lower()
    if hand not in ("right", "left"):
        raise ConfigurationError(f"handedness must be 'right' or 'left', got {handedness!r}")

    def swap(match):
        side = "right" if match.group(1).lower() in ("right", "r") else "left"
        return "back" if side == hand else "front"

    return _SIDE.sub(swap, joint, count=1)


# --- pipeline --------------------------------------------------------------------


@dataclass
class PreprocessConfig:
    """How one pair's trials become a :class:`TrialDataset`."""

    reference_channel: str | None = None
    window: tuple | None = (2.0, 0.5)
    factor: int = 5
    cutoff: float = 10.0
    filter_order: int = 4
    input_type: str = "velocity"
    normalize: str = "pair"
    agents: list | None = None
    handedness: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.window is not None:
            self.window = tuple(float(w) for w in self.window)
            if len(self.window) != 2:
                raise ConfigurationError(f"window must be (pre_s, post_s), got {self.window}")
        self.factor = check_positive_int(self.factor, "factor")
        if self.input_type not in ("velocity", "acceleration"):
            raise ConfigurationError(f"input_type must be 'velocity' or 'acceleration', got {self.input_type!r}")
        if self.normalize not in ("pair", "trial"):
            raise ConfigurationError(f"normalize must be 'pair' or 'trial', got {self.normalize!r}")


def _joint_panel_from_markers(trial, config):
    positions = trial.positions
    fs = trial.sampling_rate
    if config.cutoff is not None:
        positions = lowpass_filter(positions, config.cutoff, fs, config.filter_order)
    if config.input_type == "acceleration":
        values = resultant_acceleration(positions, fs)
    else:
        values = resultant_velocity(positions, fs)
    return JointPanel(fs, trial.markers, values, name=trial.name)


def _order_channels(panel, config):
    channels = [(a, relabel_handedness(j, config.handedness.get(a))) for a, j in panel.channels]
    agents = list(config.agents) if config.agents else list(dict.fromkeys(a for a, _ in channels))
    unknown = {a for a, _ in channels} - set(agents)
    if unknown:
        raise InputError(f"trial {panel.name or '<unnamed>'}: channels of undeclared agent(s) {sorted(unknown)}")
    if len(agents) != 2:
        raise InputError(f"exactly two agents are required, got {agents}")
    order = sorted(range(len(channels)), key=lambda c: (agents.index(channels[c][0]), c))
    ordered = [channels[c] for c in order]
    split = sum(1 for a, _ in ordered if a == agents[0])
    return JointPanel(panel.sampling_rate, ordered, panel.values[:, order], name=panel.name), split


def build_dataset(trials, config=None):
    """Turn a pair's trials into a normalized :class:`TrialDataset`.

    ``trials`` holds :class:`MarkerPanel` objects (filtered, differentiated)
    or :class:`JointPanel` objects that already carry speeds (velocity CSV
    ingress; the filter and velocity steps are skipped).
    """
    config = config or PreprocessConfig()
    if not trials:
        raise InputError("no trials given")
    panels, channels, split, fs = [], None, None, None
    for n, trial in enumerate(trials):
        name = trial.name or f"trial {n}"
        try:
            if isinstance(trial, MarkerPanel):
                panel = _joint_panel_from_markers(trial, config)
            else:
                panel = trial
                if config.input_type == "acceleration":
                    panel = JointPanel(panel.sampling_rate, panel.channels,
                                       speed_derivative(panel.values, panel.sampling_rate), name=panel.name)
            panel.name = name
            panel, trial_split = _order_channels(panel, config)
            if config.window is not None:
                if config.reference_channel is None:
                    raise ConfigurationError("a reference channel is required to clip around the release")
                ref = panel.channel_index(config.reference_channel)
                event = detect_release(panel.values[:, ref])
                panel = clip_window(panel, event, *config.window)
            panel = downsample(panel, config.factor)
        except InputError as exc:
            if name in str(exc):
                raise
            raise InputError(f"{name}: {exc}") from exc
        if channels is None:
            channels, split, fs = panel.channels, trial_split, panel.sampling_rate
        elif panel.channels != channels:
            raise InputError(f"{name}: channel set differs from the first trial")
        elif panel.values.shape[0] != panels[0].shape[0]:
            raise InputError(f"{name}: {panel.values.shape[0]} frames, expected {panels[0].shape[0]}")
        panels.append(panel.values)
    data, (lo, hi) = normalize_minmax(np.stack(panels), scope=config.normalize)
    return TrialDataset(data, channels, split, fs, norm_min=lo, norm_max=hi,
                        trial_names=[t.name or f"trial {n}" for n, t in enumerate(trials)])


# --- file formats ------------------------------------------------------------------


def _split_label(label):
    if "_" not in label:
        raise InputError(f"column {label!r} is not of the form <agent>_<joint>")
    agent, joint = label.split("_", 1)
    return agent, joint


def _read_csv(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if not header or header[0].strip().lower() != "time":
        raise InputError(f"{path}: first column must be 'time'")
    try:
        table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    except ValueError as exc:
        raise InputError(f"{path}: malformed numeric data ({exc})") from exc
    return [h.strip() for h in header], table


def _infer_fs(time, path):
    if time.size < 2:
        raise InputError(f"{path}: cannot infer the sampling rate from fewer than 2 rows")
    dt = np.diff(time)
    return float(1.0 / np.median(dt))


def read_marker_csv(path, fs=None):
    """Read a wide marker CSV: ``time,<agent>_<joint>_x,<agent>_<joint>_y,...``."""
    header, table = _read_csv(path)
    markers, columns = [], {}
    for col, name in enumerate(header[1:], start=1):
        base, _, axis = name.rpartition("_")
        if axis.lower() not in AXES or not base:
            raise InputError(f"{path}: column {name!r} does not end in _x, _y or _z")
        if base not in columns:
            columns[base] = {}
            markers.append(_split_label(base))
        columns[base][axis.lower()] = col
    positions = np.empty((table.shape[0], len(markers), 3))
    for m, (agent, joint) in enumerate(markers):
        cols = columns[_label(agent, joint)]
        missing = [a for a in AXES if a not in cols]
        if missing:
            raise InputError(f"{path}: marker {_label(agent, joint)} lacks axes {missing}")
        positions[:, m] = table[:, [cols[a] for a in AXES]]
    fs = fs if fs is not None else _infer_fs(table[:, 0], path)
    return MarkerPanel(fs, markers, positions, name=Path(path).stem)


def read_velocity_csv(path, fs=None):
    """Read a velocity CSV: ``time,<agent>_<joint>,...``."""
    header, table = _read_csv(path)
    channels = [_split_label(h) for h in header[1:]]
    fs = fs if fs is not None else _infer_fs(table[:, 0], path)
    return JointPanel(fs, channels, table[:, 1:], name=Path(path).stem)


def _fmt(x):
    return repr(float(x))


def write_velocity_csv(path, panel):
    """Write a :class:`JointPanel` losslessly (shortest round-trip floats)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time"] + panel.labels)
        for f, row in enumerate(panel.values):
            writer.writerow([_fmt(f / panel.sampling_rate)] + [_fmt(v) for v in row])
    return path


def load_manifest(path):
    """Parse a dataset manifest JSON.

    Returns the trial panels and a :class:`PreprocessConfig`. Trial paths are
    resolved relative to the manifest's directory.
    """
    path = Path(path)
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    fmt = spec.get("format", "marker")
    if fmt not in ("marker", "velocity"):
        raise ConfigurationError(f"manifest format must be 'marker' or 'velocity', got {fmt!r}")
    files = spec.get("trials") or []
    if not files:
        raise InputError(f"manifest {path} lists no trials")
    reader = read_marker_csv if fmt == "marker" else read_velocity_csv
    fs = spec.get("fs")
    trials = []
    for f in files:
        trial_path = (path.parent / f) if not Path(f).is_absolute() else Path(f)
        if not trial_path.exists():
            raise InputError(f"trial file {trial_path} does not exist")
        trials.append(reader(trial_path, fs=fs))
    window = spec.get("window", (2.0, 0.5))
    config = PreprocessConfig(
        reference_channel=spec.get("reference_channel"),
        window=tuple(window) if window is not None else None,
        factor=spec.get("factor", 5),
        cutoff=spec.get("cutoff", 10.0 if fmt == "marker" else None),
        filter_order=spec.get("filter_order", 4),
        input_type=spec.get("input_type", "velocity"),
        normalize=spec.get("normalize", "pair"),
        agents=spec.get("agents"),
        handedness=spec.get("handedness") or {},
    )
    return trials, config


def save_dataset(dataset, directory, prefix="trial"):
    """Write a dataset as velocity CSVs plus a manifest that reloads it as-is."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for n in range(dataset.n_trials):
        name = f"{prefix}_{n:03d}.csv"
        write_velocity_csv(directory / name,
                           JointPanel(dataset.sampling_rate, dataset.channels, dataset.data[n]))
        files.append(name)
    agents = list(dict.fromkeys(a for a, _ in dataset.channels))
    manifest = {
        "format": "velocity",
        "trials": files,
        "fs": dataset.sampling_rate,
        "window": None,
        "factor": 1,
        "agents": agents,
        "reference_channel": None,
    }
    out = directory / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_dataset(path, **overrides):
    """Load a manifest and run :func:`build_dataset` on its trials."""
    trials, config = load_manifest(path)
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    config.__post_init__()
    return build_dataset(trials, config)
