"""Component-wise MLPs trained by proximal gradient with a two-level group penalty.

One single-hidden-layer ReLU network is fitted per target channel ``i``. It
predicts ``x[t, i]`` from the ``K`` preceding frames of every channel. The
first-layer weights ``W1`` have shape (H, p, K) and are grouped two ways:

* per (source, lag): ``W1[:, j, k]``
* per source: ``W1[:, j, :]``

The penalty is ``sum_j ||W1[:, j, :]||_2 + sum_{j,k} ||W1[:, j, k]||_2``. Its
proximal map (lag groups first, then the whole source group) sets groups
exactly to zero. A source whose whole group is zero does not Granger-cause
the target under the fitted model.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from threadpoolctl import threadpool_limits

from ._validation import check_nonnegative, check_positive, check_positive_int, check_trials
from .exceptions import ConfigurationError, DivergenceError, InputError, TrainingError

__all__ = [
    "TrainConfig",
    "CmlpWeights",
    "CmlpBank",
    "lagged_design",
    "init_weights",
    "forward",
    "predict",
    "smooth_loss",
    "gradient",
    "penalty",
    "objective",
    "prox_gsgl",
    "ista_train",
    "train_bank",
    "model_seed",
    "r2_score",
    "save_bank",
    "load_bank",
]


@dataclass
class TrainConfig:
    """Hyperparameters for one bank of component-wise MLPs.

    ``max_lag`` is K in frames. ``loss_reduction`` picks between the mean and
    the sum of squared errors for the smooth term. The sum multiplies the
    effective penalty weight by the sample count.
    """

    max_lag: int = 50
    hidden_units: int = 32
    learning_rate: float = 0.05
    lam: float = 0.003
    iterations: int = 2000
    seed: int = 0
    loss_reduction: str = "mean"

    def __post_init__(self):
        self.max_lag = check_positive_int(self.max_lag, "max_lag")
        self.hidden_units = check_positive_int(self.hidden_units, "hidden_units")
        self.learning_rate = check_positive(self.learning_rate, "learning_rate")
        self.lam = check_nonnegative(self.lam, "lam")
        self.iterations = check_positive_int(self.iterations, "iterations")
        self.seed = check_positive_int(self.seed, "seed", minimum=0)
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigurationError(f"loss_reduction must be 'mean' or 'sum', got {self.loss_reduction!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class CmlpWeights:
    """Parameters of the network predicting channel ``target_index``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float
    target_index: int = 0
    loss_trace: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b2 = float(self.b2)
        if self.W1.ndim != 3:
            raise InputError(f"W1 must have shape (H, p, K), got {self.W1.shape}")
        H = self.W1.shape[0]
        if self.b1.shape != (H,) or self.W2.shape != (H,):
            raise InputError(f"b1 and W2 must have shape ({H},); got {self.b1.shape} and {self.W2.shape}")

    @property
    def shape(self):
        """(H, p, K)."""
        return self.W1.shape

    def copy(self):
        return replace(self, W1=self.W1.copy(), b1=self.b1.copy(), W2=self.W2.copy(),
                       loss_trace=None if self.loss_trace is None else self.loss_trace.copy())

    def flat(self):
        """All parameters in file order: W1 (h, j, k row-major), b1, W2, b2."""
        return np.concatenate([self.W1.ravel(), self.b1, self.W2, [self.b2]])


@dataclass
class CmlpBank:
    models: list
    config: TrainConfig
    r2: np.ndarray | None = None
    final_loss: np.ndarray | None = None

    def __post_init__(self):
        if not self.models:
            raise ConfigurationError("a bank needs at least one model")
        shape = self.models[0].shape
        for i, m in enumerate(self.models):
            if m.target_index != i:
                raise InputError(f"model at position {i} predicts target {m.target_index}")
            if m.shape != shape:
                raise InputError(f"model {i} has shape {m.shape}, expected {shape}")

    @property
    def p(self):
        return self.models[0].shape[1]

    @property
    def max_lag(self):
        return self.models[0].shape[2]

    @property
    def hidden_units(self):
        return self.models[0].shape[0]

    def first_layer(self):
        """Stacked first-layer weights, shape (p_targets, H, p, K)."""
        return np.stack([m.W1 for m in self.models])


# --- data layout -------------------------------------------------------------------


def lagged_design(data, max_lag):
    """Build (inputs, targets) for one-step-ahead prediction.

    Returns ``X`` of shape (N, p, K) with ``X[n, j, k-1] = x[t-k, j]`` and
    ``Y`` of shape (N, p) with ``Y[n, i] = x[t, i]``, for every trial and
    every ``t`` in ``[K, T)``. Samples are ordered trial-major.
    """
    data = check_trials(data)
    K = check_positive_int(max_lag, "max_lag")
    n_trials, T, p = data.shape
    if T <= K:
        raise ConfigurationError(f"series length T={T} must exceed the maximum lag K={K}")
    # windows[s, j, m] = x[s + m, j]; target time t = s + K uses m = K - k
    windows = sliding_window_view(data, K, axis=1)[:, : T - K]
    X = windows[..., ::-1].reshape(n_trials * (T - K), p, K)
    Y = data[:, K:, :].reshape(n_trials * (T - K), p)
    return np.ascontiguousarray(X), np.ascontiguousarray(Y)


def init_weights(p, max_lag, hidden_units, target_index=0, rng=None):
    """Uniform(-a, a) weights with a = 1/sqrt(fan-in); zero biases."""
    rng = np.random.default_rng(rng)
    a1 = 1.0 / np.sqrt(p * max_lag)
    a2 = 1.0 / np.sqrt(hidden_units)
    W1 = rng.uniform(-a1, a1, size=(hidden_units, p, max_lag))
    W2 = rng.uniform(-a2, a2, size=hidden_units)
    return CmlpWeights(W1, np.zeros(hidden_units), W2, 0.0, target_index)


# --- forward / loss / gradient ----------------------------------------------------------


def forward(model, window):
    """Predict ``x[t, i]`` from a (K, p) window whose row ``k-1`` is ``x[t-k]``."""
    window = np.asarray(window, dtype=np.float64)
    H, p, K = model.shape
    if window.shape != (K, p):
        raise InputError(f"window must have shape ({K}, {p}), got {window.shape}")
    z = np.einsum("hjk,kj->h", model.W1, window) + model.b1
    return float(model.W2 @ np.maximum(z, 0.0) + model.b2)


def _flat_inputs(X):
    return X.reshape(X.shape[0], -1)


def _predict_flat(model, Xf):
    H = model.W1.shape[0]
    Z = Xf @ model.W1.reshape(H, -1).T
    Z += model.b1
    A = np.maximum(Z, 0.0)
    return A @ model.W2 + model.b2, Z, A


def _loss_grad(model, Xf, y, reduction="mean", need_grad=True):
    pred, Z, A = _predict_flat(model, Xf)
    r = pred - y
    n = y.shape[0]
    sse = float(r @ r)
    loss = sse / n if reduction == "mean" else sse
    if not need_grad:
        return loss, None
    g = r * ((2.0 / n) if reduction == "mean" else 2.0)
    gW2 = A.T @ g
    gb2 = float(g.sum())
    dZ = np.outer(g, model.W2)
    dZ *= Z > 0.0
    gW1 = (dZ.T @ Xf).reshape(model.W1.shape)
    gb1 = dZ.sum(axis=0)
    return loss, CmlpWeights(gW1, gb1, gW2, gb2, model.target_index)


def _design_for(model, data):
    data = check_trials(data)
    H, p, K = model.shape
    if data.shape[2] != p:
        raise InputError(f"model expects {p} channels, data has {data.shape[2]}")
    X, Y = lagged_design(data, K)
    return _flat_inputs(X), Y[:, model.target_index]


def predict(model, data):
    """One-step-ahead predictions for every sample of :func:`lagged_design`."""
    Xf, _ = _design_for(model, data)
    return _predict_flat(model, Xf)[0]


def smooth_loss(model, data, reduction="mean"):
    """Mean (or summed) squared one-step prediction error over all trials."""
    Xf, y = _design_for(model, data)
    return _loss_grad(model, Xf, y, reduction, need_grad=False)[0]


def gradient(model, data, reduction="mean"):
    """Exact gradient of :func:`smooth_loss` by backpropagation.

    The ReLU derivative at exactly zero is taken as zero.
    """
    Xf, y = _design_for(model, data)
    return _loss_grad(model, Xf, y, reduction)[1]


# --- penalty and prox ------------------------------------------------------------------------


def penalty(W1):
    """Sum over sources of the whole-group norm plus the per-lag group norms."""
    sq = np.einsum("hjk,hjk->jk", W1, W1)
    return float(np.sqrt(sq.sum(axis=1)).sum() + np.sqrt(sq).sum())


def objective(model, data, lam, reduction="mean"):
    return smooth_loss(model, data, reduction) + lam * penalty(model.W1)


def _shrink_factor(norms, threshold):
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = 1.0 - threshold / norms
    return np.where(norms > threshold, scale, 0.0)


def prox_gsgl(W1, threshold):
    """Proximal map of ``threshold`` times the two-level group penalty.

    Every (source, lag) column ``W1[:, j, k]`` is block soft-thresholded,
    then every source block ``W1[:, j, :]`` of the result. Groups whose norm
    does not exceed the threshold become exactly zero. A zero threshold
    returns an exact copy.
    """
    threshold = float(threshold)
    if not np.isfinite(threshold) or threshold < 0:
        raise ConfigurationError(f"prox threshold must be >= 0, got {threshold!r}")
    W1 = np.array(W1, dtype=np.float64, copy=True)
    if threshold == 0.0:
        return W1
    lag_norms = np.sqrt(np.einsum("hjk,hjk->jk", W1, W1))
    W1 *= _shrink_factor(lag_norms, threshold)[np.newaxis]
    src_norms = np.sqrt(np.einsum("hjk,hjk->j", W1, W1))
    W1 *= _shrink_factor(src_norms, threshold)[np.newaxis, :, np.newaxis]
    return W1


# --- training -----------------------------------------------------------------------------------


def model_seed(seed, target, key=()):
    """Independent RNG stream for one target model.

    Streams are keyed by (key..., target), so a model's initialization does
    not depend on which other models run or in what order.
    """
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key) + (int(target),))


def _ista(Xf, y, model, config):
    lr, lam, reduction = config.learning_rate, config.lam, config.loss_reduction
    step_threshold = lr * lam
    trace = np.empty(config.iterations + 1)
    for it in range(config.iterations):
        loss, grad = _loss_grad(model, Xf, y, reduction)
        trace[it] = loss + lam * penalty(model.W1)
        if not np.isfinite(trace[it]):
            raise DivergenceError(
                f"target {model.target_index}: non-finite objective at iteration {it} "
                f"(learning_rate={lr}); reduce the step size",
                iteration=it, learning_rate=lr, target=model.target_index,
            )
        model.W1 = prox_gsgl(model.W1 - lr * grad.W1, step_threshold)
        model.b1 = model.b1 - lr * grad.b1
        model.W2 = model.W2 - lr * grad.W2
        model.b2 = model.b2 - lr * grad.b2
    final, _ = _loss_grad(model, Xf, y, reduction, need_grad=False)
    trace[-1] = final + lam * penalty(model.W1)
    if not np.isfinite(trace[-1]):
        raise DivergenceError(
            f"target {model.target_index}: non-finite objective after the last iteration "
            f"(learning_rate={lr})",
            iteration=config.iterations, learning_rate=lr, target=model.target_index,
        )
    model.loss_trace = trace
    return model


def ista_train(data, config, target, seed=None, *, design=None):
    """Fit the network for one target channel by proximal gradient descent.

    Each iteration takes a gradient step on the smooth loss for all
    parameters, then applies :func:`prox_gsgl` with threshold
    ``learning_rate * lam`` to the first layer. The penalized objective before
    every step (and after the last) is stored in ``loss_trace``.

    Parameters
    ----------
    data : TrialDataset or array of shape (n_trials, T, p)
    config : TrainConfig
    target : int
        Channel to predict.
    seed : int or SeedSequence, optional
        Initialization seed; defaults to ``model_seed(config.seed, target)``.
    design : tuple, optional
        Precomputed ``lagged_design(data, config.max_lag)``.
    """
    if design is None:
        design = lagged_design(data, config.max_lag)
    X, Y = design
    p = X.shape[1]
    if not 0 <= target < p:
        raise ConfigurationError(f"target {target} outside channel range [0, {p})")
    rng = np.random.default_rng(model_seed(config.seed, target) if seed is None else seed)
    model = init_weights(p, config.max_lag, config.hidden_units, target, rng)
    return _ista(_flat_inputs(X), np.ascontiguousarray(Y[:, target]), model, config)


def train_bank(data, config, *, threads=1, seed_key=(), executor=None):
    """Train one model per target channel.

    Models are independent; each draws its initialization from
    :func:`model_seed`, so the bank is identical for any ``threads`` or
    ``executor``. BLAS is pinned to a single thread while training so that
    results do not depend on the worker count.
    """
    data = check_trials(data)
    p = data.shape[2]
    design = lagged_design(data, config.max_lag)

    def job(i):
        return ista_train(data, config, i, model_seed(config.seed, i, seed_key), design=design)

    results, failures = {}, {}
    with threadpool_limits(limits=1, user_api="blas"):
        if executor is None and threads <= 1:
            for i in range(p):
                try:
                    results[i] = job(i)
                except (DivergenceError, ConfigurationError) as exc:
                    failures[i] = exc
        else:
            own = executor is None
            pool = ThreadPoolExecutor(max_workers=threads) if own else executor
            try:
                futures = {i: pool.submit(job, i) for i in range(p)}
                for i, fut in futures.items():
                    try:
                        results[i] = fut.result()
                    except (DivergenceError, ConfigurationError) as exc:
                        failures[i] = exc
            finally:
                if own:
                    pool.shutdown()
    if failures:
        raise TrainingError(failures)
    bank = CmlpBank([results[i] for i in range(p)], config)
    bank.final_loss = np.array([m.loss_trace[-1] for m in bank.models])
    bank.r2 = r2_score(bank, data)[0]
    return bank


def bank_predictions(bank, data):
    """(N, p) one-step predictions of every model in the bank."""
    data = check_trials(data)
    X, Y = lagged_design(data, bank.max_lag)
    Xf = _flat_inputs(X)
    return np.column_stack([_predict_flat(m, Xf)[0] for m in bank.models]), Y


def r2_score(bank, data):
    """Per-target and mean coefficient of determination.

    R^2 = 1 - SSE/SST over all predicted samples, with SST about each target's
    mean. Zero-variance targets are NaN and left out of the mean.
    """
    pred, Y = bank_predictions(bank, data)
    sse = ((Y - pred) ** 2).sum(axis=0)
    sst = ((Y - Y.mean(axis=0)) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(sst > 0, 1.0 - sse / sst, np.nan)
    finite = r2[np.isfinite(r2)]
    return r2, float(finite.mean()) if finite.size else float("nan")


# --- persistence -------------------------------------------------------------------------------


def save_bank(bank, path, extra=None):
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float64)."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    H, p, K = bank.models[0].shape
    flat = np.concatenate([m.flat() for m in bank.models]).astype("<f8")
    bin_path = base.with_suffix(".bin")
    bin_path.write_bytes(flat.tobytes())
    manifest = {
        "dims": {"models": len(bank.models), "hidden_units": H, "channels": p, "max_lag": K},
        "config": bank.config.to_dict(),
        "seed": bank.config.seed,
        "r2": [None if not np.isfinite(v) else float(v) for v in (bank.r2 if bank.r2 is not None else [])],
        "layout": "per model: W1 (h, j, k) row-major, b1, W2, b2; little-endian float64",
        "data": bin_path.name,
    }
    if extra:
        manifest.update(extra)
    json_path = base.with_suffix(".json")
    json_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return json_path


def load_bank(path):
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    manifest = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    dims = manifest["dims"]
    n, H, p, K = dims["models"], dims["hidden_units"], dims["channels"], dims["max_lag"]
    flat = np.frombuffer((base.parent / manifest["data"]).read_bytes(), dtype="<f8")
    per_model = H * p * K + 2 * H + 1
    if flat.size != n * per_model:
        raise InputError(f"weight file holds {flat.size} values, expected {n * per_model}")
    models = []
    for i in range(n):
        chunk = flat[i * per_model:(i + 1) * per_model].astype(np.float64)
        W1 = chunk[: H * p * K].reshape(H, p, K)
        b1 = chunk[H * p * K: H * p * K + H]
        W2 = chunk[H * p * K + H: H * p * K + 2 * H]
        models.append(CmlpWeights(W1, b1, W2, chunk[-1], i))
    bank = CmlpBank(models, TrainConfig.from_dict(manifest["config"]))
    r2 = manifest.get("r2")
    if r2:
        bank.r2 = np.array([np.nan if v is None else v for v in r2])
    return bank
