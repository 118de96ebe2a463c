"""Synthetic data with known causal structure, and a linear reference test.

Two generators:

* :func:`gen_var` simulates a stable vector autoregression.
* :func:`gen_coupled_agents` simulates two interacting agents. Agent A is a
  driven chain, and agent B is a chain that also receives agent A's motion
  after a fixed delay. Nothing flows from B to A.

Both return a normalized :class:`~ngcausal.preprocess.TrialDataset` and a
boolean truth adjacency ``truth[target, source]`` with the diagonal cleared.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as _signal
from scipy import stats as _dist
from sklearn.metrics import roc_auc_score

from ._validation import check_nonnegative, check_positive, check_positive_int, check_trials
from .exceptions import ConfigurationError, InputError
from .model import lagged_design
from .preprocess import TrialDataset, normalize_minmax

__all__ = [
    "VarSpec",
    "CoupledAgentSpec",
    "SyntheticData",
    "random_var_spec",
    "spectral_radius",
    "gen_var",
    "gen_coupled_agents",
    "linear_gc_oracle",
    "support_metrics",
    "load_spec",
]


@dataclass
class SyntheticData:
    dataset: TrialDataset
    truth: np.ndarray
    truth_lags: np.ndarray | None = None


def _trial_rng(seed, trial):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(trial),)))


# --- VAR ------------------------------------------------------------------------


@dataclass
class VarSpec:
    """``coef[l-1, i, j]`` is the effect of ``x[t-l, j]`` on ``x[t, i]``."""

    coef: np.ndarray
    noise_sd: float = 1.0
    T: int = 1000
    n_trials: int = 1
    seed: int = 0
    agent_split: int | None = None

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=np.float64)
        if self.coef.ndim != 3 or self.coef.shape[1] != self.coef.shape[2]:
            raise ConfigurationError(f"coef must have shape (lag_order, p, p), got {self.coef.shape}")
        self.noise_sd = check_positive(self.noise_sd, "noise_sd")
        self.T = check_positive_int(self.T, "T", minimum=2)
        self.n_trials = check_positive_int(self.n_trials, "n_trials")

    @property
    def p(self):
        return self.coef.shape[1]

    @property
    def lag_order(self):
        return self.coef.shape[0]

    def adjacency(self):
        truth = np.any(self.coef != 0, axis=0)
        np.fill_diagonal(truth, False)
        return truth


def spectral_radius(coef):
    """Largest eigenvalue modulus of the VAR companion matrix."""
    L, p, _ = coef.shape
    companion = np.zeros((L * p, L * p))
    companion[:p] = np.concatenate(list(coef), axis=1)
    if L > 1:
        companion[p:, :-p] = np.eye((L - 1) * p)
    return float(np.max(np.abs(np.linalg.eigvals(companion))))


def random_var_spec(p=10, lag_order=3, density=0.2, seed=0, coef_range=(0.3, 0.5),
                    self_coef=0.4, max_radius=0.95, **kwargs):
    """A random stable VAR with a fixed fraction of off-diagonal edges.

    Each edge acts at one lag drawn uniformly from ``1..lag_order``, with a
    random sign and a magnitude in ``coef_range``. Every channel also depends
    on its own previous frame with ``self_coef``. Coefficients are shrunk
    uniformly until the spectral radius is at most ``max_radius``.
    """
    rng = np.random.default_rng(seed)
    coef = np.zeros((lag_order, p, p))
    off = [(i, j) for i in range(p) for j in range(p) if i != j]
    n_edges = int(round(density * len(off)))
    for e in rng.choice(len(off), size=n_edges, replace=False):
        i, j = off[e]
        lag = rng.integers(lag_order)
        coef[lag, i, j] = rng.choice([-1.0, 1.0]) * rng.uniform(*coef_range)
    coef[0][np.diag_indices(p)] = self_coef
    while spectral_radius(coef) > max_radius:
        coef *= 0.95
    return VarSpec(coef, seed=seed, **kwargs)


def gen_var(spec):
    """Simulate ``spec.n_trials`` independent trials of the VAR.

    The first ``10 * lag_order`` frames of every trial are discarded as
    burn-in. Channels are min-max normalized over all trials.
    """
    radius = spectral_radius(spec.coef)
    if radius >= 1.0:
        raise ConfigurationError(f"VAR is not stable: companion spectral radius {radius:.4f} >= 1")
    L, p = spec.lag_order, spec.p
    burn = 10 * L
    trials = []
    for trial in range(spec.n_trials):
        rng = _trial_rng(spec.seed, trial)
        noise = rng.normal(0.0, spec.noise_sd, size=(burn + spec.T, p))
        x = np.zeros((burn + spec.T + L, p))
        for t in range(burn + spec.T):
            acc = noise[t].copy()
            for lag in range(L):
                acc += spec.coef[lag] @ x[t + L - 1 - lag]
            x[t + L] = acc
        trials.append(x[L + burn:])
    data, (lo, hi) = normalize_minmax(np.stack(trials))
    split = spec.agent_split if spec.agent_split is not None else max(1, p // 2)
    channels = [("A" if j < split else "B", f"x{j}") for j in range(p)]
    dataset = TrialDataset(data, channels, split, 1.0, norm_min=lo, norm_max=hi)
    return SyntheticData(dataset, spec.adjacency())


# --- two coupled agents ---------------------------------------------------------


@dataclass
class CoupledAgentSpec:
    """Two agents: chains within each, delayed one-way coupling from A to B.

    Every channel is ``s[t] = persistence * s[t-1] + drive[t] + e[t]``. Here
    ``e`` is white noise smoothed by a first-order filter with coefficient
    ``noise_smoothing``, and ``drive`` is the gain-weighted, standardized
    parent signal at the parent's lag. Chain lags are in frames; the
    coupling delay is in seconds.

    The head of A's chain is additionally driven by Gaussian bursts arriving
    at ``pulse_rate`` per second (``pulse_width`` seconds wide, random
    amplitude). The bursts travel down both chains, giving the large, smooth
    excursions typical of joint speeds. ``pulse_gain=0`` leaves stationary
    Gaussian signals. Gains are in units of the noise scale.

    ``coupling`` lists ``(b_channel, a_channel)`` local indices. By default B
    channel ``m`` listens to A channel ``n_a - n_coupled + m``, the downstream
    end of A's chain. With ``nonlinear`` the driver passes through
    ``tanh(nonlinear_scale * u) ** 2``, which is even in the standardized
    driver ``u`` and so leaves no linear trace.
    """

    n_a: int = 13
    n_b: int = 14
    intra_lag_a: int = 6
    intra_lag_b: int = 3
    coupling_delay: float = 0.5
    coupling_gain: float = 4.0
    intra_gain_a: float = 4.0
    intra_gain_b: float = 2.0
    n_coupled: int | None = None
    coupling: list | None = None
    persistence: float = 0.8
    noise_smoothing: float = 0.5
    noise_sd: float = 0.1
    pulse_rate: float = 1.5
    pulse_gain: float = 20.0
    pulse_width: float = 0.08
    nonlinear: bool = False
    nonlinear_scale: float = 1.5
    fs: float = 50.0
    T: int = 125
    n_trials: int = 10
    seed: int = 0
    labels_a: list = field(default_factory=list)
    labels_b: list = field(default_factory=list)

    def __post_init__(self):
        self.n_a = check_positive_int(self.n_a, "n_a")
        self.n_b = check_positive_int(self.n_b, "n_b")
        self.intra_lag_a = check_positive_int(self.intra_lag_a, "intra_lag_a")
        self.intra_lag_b = check_positive_int(self.intra_lag_b, "intra_lag_b")
        self.fs = check_positive(self.fs, "fs")
        self.T = check_positive_int(self.T, "T", minimum=2)
        self.n_trials = check_positive_int(self.n_trials, "n_trials")
        self.noise_sd = check_positive(self.noise_sd, "noise_sd")
        self.coupling_delay = check_positive(self.coupling_delay, "coupling_delay")
        self.pulse_rate = check_nonnegative(self.pulse_rate, "pulse_rate")
        self.pulse_width = check_positive(self.pulse_width, "pulse_width")
        for name in ("coupling_gain", "intra_gain_a", "intra_gain_b", "nonlinear_scale", "pulse_gain"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ConfigurationError(f"{name} must be finite, got {value!r}")
            setattr(self, name, value)
        for name in ("persistence", "noise_smoothing"):
            value = check_nonnegative(getattr(self, name), name)
            if value >= 1:
                raise ConfigurationError(f"{name} must be < 1 for a stable filter, got {value}")
            setattr(self, name, value)
        if self.coupling_delay >= self.T / self.fs:
            raise ConfigurationError(
                f"coupling delay {self.coupling_delay} s must be shorter than the series "
                f"({self.T} frames = {self.T / self.fs} s)"
            )
        if self.coupling is None:
            n = min(self.n_a, self.n_b) if self.n_coupled is None else min(int(self.n_coupled), self.n_a, self.n_b)
            self.coupling = [(m, self.n_a - n + m) for m in range(n)]
        self.coupling = [tuple(int(v) for v in pair) for pair in self.coupling]
        for b, a in self.coupling:
            if not (0 <= b < self.n_b and 0 <= a < self.n_a):
                raise ConfigurationError(f"coupling pair (b={b}, a={a}) is out of range")
        if not self.labels_a:
            self.labels_a = [f"j{m:02d}" for m in range(self.n_a)]
        if not self.labels_b:
            self.labels_b = [f"j{m:02d}" for m in range(self.n_b)]

    @property
    def delay_frames(self):
        return int(round(self.coupling_delay * self.fs))

    @property
    def p(self):
        return self.n_a + self.n_b

    def to_dict(self):
        d = asdict(self)
        d["coupling"] = [list(c) for c in self.coupling]
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown synthetic option(s): {sorted(unknown)}")
        return cls(**d)

    def truth(self):
        """Adjacency and lag (seconds) of every direct edge, as (p, p) arrays."""
        p, na = self.p, self.n_a
        adj = np.zeros((p, p), dtype=bool)
        lags = np.full((p, p), np.nan)
        for m in range(1, self.n_a):
            adj[m, m - 1] = True
            lags[m, m - 1] = self.intra_lag_a / self.fs
        for m in range(1, self.n_b):
            adj[na + m, na + m - 1] = True
            lags[na + m, na + m - 1] = self.intra_lag_b / self.fs
        if self.coupling_gain != 0:
            for b, a in self.coupling:
                adj[na + b, a] = True
                lags[na + b, a] = self.delay_frames / self.fs
        return adj, lags


def _standardize(x, burn=0):
    """Center and scale by statistics pooled over every trial (after burn-in).

    One scale for all trials keeps the system linear and time-invariant
    across trials; per-trial scaling would give each trial its own gains.
    """
    settled = x[..., burn:]
    sd = settled.std()
    return (x - settled.mean()) / sd if sd > 0 else x - settled.mean()


def _shift(x, lag):
    out = np.zeros_like(x)
    out[..., lag:] = x[..., :-lag]
    return out


def _trial_inputs(spec, rng, n):
    """Noise (p, n) and burst train (n,) for one trial."""
    noise = rng.normal(0.0, spec.noise_sd, size=(n, spec.p))
    arrivals = rng.random(n) < spec.pulse_rate / spec.fs
    amplitudes = rng.uniform(0.5, 1.5, size=n) * arrivals
    width = spec.pulse_width * spec.fs
    support = np.arange(-int(np.ceil(4 * width)), int(np.ceil(4 * width)) + 1)
    bursts = np.convolve(amplitudes, np.exp(-0.5 * (support / width) ** 2), mode="same")
    return noise.T, bursts


def _simulate(spec):
    """All trials at once, shape (n_trials, T, p)."""
    burn = 10 * max(spec.intra_lag_a, spec.intra_lag_b, spec.delay_frames)
    n = burn + spec.T
    inputs = [_trial_inputs(spec, _trial_rng(spec.seed, k), n) for k in range(spec.n_trials)]
    noise = np.stack([z for z, _ in inputs])  # (trials, p, n)
    bursts = np.stack([b for _, b in inputs])  # (trials, n)
    colored = _signal.lfilter([1.0], [1.0, -spec.noise_smoothing], noise, axis=-1)
    scale = spec.noise_sd / np.sqrt(1.0 - spec.noise_smoothing ** 2)
    out = np.empty_like(noise)

    def channel(col, drive):
        out[:, col] = _signal.lfilter([1.0], [1.0, -spec.persistence], colored[:, col] + scale * drive, axis=-1)
        return _standardize(out[:, col], burn)

    std_a = []
    for m in range(spec.n_a):
        drive = spec.intra_gain_a * _shift(std_a[m - 1], spec.intra_lag_a) if m else spec.pulse_gain * bursts
        std_a.append(channel(m, drive))
    sources = {}
    for b, a in spec.coupling:
        u = std_a[a]
        f = np.tanh(spec.nonlinear_scale * u) ** 2 if spec.nonlinear else u
        sources.setdefault(b, []).append(_standardize(f, burn))
    std_b = []
    for m in range(spec.n_b):
        drive = spec.intra_gain_b * _shift(std_b[m - 1], spec.intra_lag_b) if m else np.zeros_like(bursts)
        for f in sources.get(m, []):
            drive = drive + spec.coupling_gain * _shift(f, spec.delay_frames)
        std_b.append(channel(spec.n_a + m, drive))
    return np.transpose(out[..., burn:], (0, 2, 1))


def gen_coupled_agents(spec):
    """Simulate the two-agent system; trials differ only by their noise and bursts."""
    if spec.delay_frames >= spec.T:
        raise ConfigurationError(f"coupling delay of {spec.delay_frames} frames exceeds T={spec.T}")
    data, (lo, hi) = normalize_minmax(_simulate(spec))
    channels = [("P", lab) for lab in spec.labels_a] + [("B", lab) for lab in spec.labels_b]
    dataset = TrialDataset(data, channels, spec.n_a, spec.fs, norm_min=lo, norm_max=hi)
    adj, lags = spec.truth()
    return SyntheticData(dataset, adj, lags)


def load_spec(path):
    """Read a generator spec JSON; ``{"kind": "var", ...}`` or coupled agents."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = doc.pop("kind", "coupled")
    if kind == "var":
        if "coef" in doc:
            return VarSpec(**doc)
        return random_var_spec(**doc)
    if kind == "coupled":
        return CoupledAgentSpec.from_dict(doc)
    raise ConfigurationError(f"unknown generator kind {kind!r}")


# --- oracle and scoring --------------------------------------------------------------


def linear_gc_oracle(data, max_lag, alpha=0.05, conditioning="pairwise"):
    """Linear Granger F-tests, with rows pooled over trials.

    For each ordered pair (target i, source j != i), a restricted regression
    is compared with a full regression that also has ``max_lag`` lags of
    ``x_j``. With ``conditioning="pairwise"`` the restricted regression is an
    intercept plus lags of ``x_i`` alone. With ``"full"`` it holds lags of
    every channel except ``j``, so influences relayed through a third
    channel are not counted. A rank-deficient design gives NaN.

    Returns
    -------
    pvalues : (p, p) array, NaN on the diagonal
    adjacency : (p, p) bool array, ``pvalues < alpha``
    """
    data = check_trials(data)
    L = check_positive_int(max_lag, "max_lag")
    if conditioning not in ("pairwise", "full"):
        raise ConfigurationError(f"conditioning must be 'pairwise' or 'full', got {conditioning!r}")
    n_trials, T, p = data.shape
    if T <= 2 * L + 1:
        raise ConfigurationError(f"series length T={T} must exceed 2*max_lag+1={2 * L + 1}")
    X, Y = lagged_design(data, L)
    N = X.shape[0]
    ones = np.ones((N, 1))
    pvalues = np.full((p, p), np.nan)
    for i in range(p):
        y = Y[:, i]
        if conditioning == "pairwise":
            restricted = np.hstack([ones, X[:, i, :]])
            rss_r, rank_r = _rss(restricted, y)
            if rank_r < restricted.shape[1]:
                continue
        else:
            full = np.hstack([ones, X.reshape(N, -1)])
            rss_f, rank_f = _rss(full, y)
            if rank_f < full.shape[1] or rss_f <= 0:
                continue
        for j in range(p):
            if j == i:
                continue
            if conditioning == "pairwise":
                full = np.hstack([restricted, X[:, j, :]])
                rss_f, rank_f = _rss(full, y)
                if rank_f < full.shape[1] or rss_f <= 0:
                    continue
            else:
                others = np.delete(X, j, axis=1).reshape(N, -1)
                rss_r, _ = _rss(np.hstack([ones, others]), y)
            df1, df2 = L, N - full.shape[1]
            if df2 <= 0:
                continue
            F = max((rss_r - rss_f) / df1, 0.0) / (rss_f / df2)
            pvalues[i, j] = _dist.f.sf(F, df1, df2)
    with np.errstate(invalid="ignore"):
        adjacency = pvalues < alpha
    return pvalues, adjacency


def _rss(design, y):
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(resid @ resid), int(rank)


def _values(m):
    return np.asarray(getattr(m, "values", m), dtype=np.float64)


def support_metrics(estimated, truth, threshold=0.0, mask=None):
    """Edge-recovery scores of ``estimated`` against a boolean ``truth``.

    An edge is predicted where ``estimated > threshold``. AUROC ranks all
    candidate entries by their estimated value. Only off-diagonal entries
    (further restricted by ``mask``) are scored.
    """
    scores = _values(estimated)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape or scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise InputError(f"estimate {scores.shape} and truth {truth.shape} must be equal square shapes")
    keep = ~np.eye(scores.shape[0], dtype=bool)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    keep &= np.isfinite(scores)
    s, t = scores[keep], truth[keep]
    pred = s > threshold
    tp = int(np.sum(pred & t))
    fp = int(np.sum(pred & ~t))
    fn = int(np.sum(~pred & t))
    if tp + fp + fn == 0:
        precision = recall = f1 = 1.0
    else:
        precision = tp / (tp + fp) if tp + fp else float("nan")
        recall = tp / (tp + fn) if tp + fn else float("nan")
        f1 = 2 * tp / (2 * tp + fp + fn)
    auroc = float(roc_auc_score(t, s)) if 0 < t.sum() < t.size else float("nan")
    return {"precision": precision, "recall": recall, "f1": f1, "auroc": auroc,
            "tp": tp, "fp": fp, "fn": fn, "n": int(t.size)}
