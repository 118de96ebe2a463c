import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from ngcausal.exceptions import ConfigurationError, InputError
from ngcausal.preprocess import (
    JointPanel,
    MarkerPanel,
    PooledMinMaxScaler,
    PreprocessConfig,
    build_dataset,
    clip_window,
    detect_release,
    downsample,
    load_dataset,
    load_manifest,
    lowpass_filter,
    normalize_minmax,
    read_marker_csv,
    read_velocity_csv,
    relabel_handedness,
    resultant_velocity,
    save_dataset,
    speed_derivative,
    write_velocity_csv,
)

FS = 250.0


def marker_trial(n_a=13, n_b=14, n_frames=1000, peak=600, seed=0, name="t"):
    """Smooth random marker paths; the first A marker's speed peaks at ``peak``."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames) / FS
    markers = [("P", f"j{m:02d}") for m in range(n_a)] + [("B", f"j{m:02d}") for m in range(n_b)]
    pos = np.empty((n_frames, len(markers), 3))
    for m in range(len(markers)):
        freq = rng.uniform(0.3, 1.2, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        pos[:, m] = 0.2 * np.sin(2 * np.pi * freq * t[:, None] + phase)
    # reference marker: a fast burst along x whose speed peaks at frame `peak`
    speed = 8.0 * np.exp(-0.5 * ((np.arange(n_frames) - peak) / 20.0) ** 2)
    pos[:, 0, 0] = np.cumsum(speed) / FS
    pos[:, 0, 1:] = 0.0
    return MarkerPanel(FS, markers, pos, name=name)


# --- filter ----------------------------------------------------------------------------------


def test_filter_passes_constant_and_zero():
    np.testing.assert_allclose(lowpass_filter(np.full(500, 3.5), 10, FS), 3.5, atol=1e-9)
    assert not np.any(lowpass_filter(np.zeros(500), 10, FS))


def test_filter_attenuates_40hz_by_20db():
    t = np.arange(2000) / FS
    x = np.sin(2 * np.pi * 40 * t)
    y = lowpass_filter(x, 10, FS)
    core = slice(200, -200)
    ratio_db = 20 * np.log10(np.sqrt(np.mean(y[core] ** 2)) / np.sqrt(np.mean(x[core] ** 2)))
    # forward-backward squares the designed response at 40 Hz
    sos = signal.butter(4, 10, fs=FS, output="sos")
    _, h = signal.sosfreqz(sos, worN=[40.0], fs=FS)
    assert ratio_db <= -20
    assert ratio_db == pytest.approx(40 * np.log10(abs(h[0])), abs=0.5)


def test_filter_rejects_cutoff_at_nyquist():
    with pytest.raises(ConfigurationError):
        lowpass_filter(np.zeros(500), 125, FS)


def test_filter_rejects_short_series():
    with pytest.raises(InputError):
        lowpass_filter(np.zeros(10), 10, FS)


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**16))
def test_filter_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 300))
    lhs = lowpass_filter(a * x + b * y, 10, FS)
    np.testing.assert_allclose(lhs, a * lowpass_filter(x, 10, FS) + b * lowpass_filter(y, 10, FS), atol=1e-9)


# --- velocity --------------------------------------------------------------------------------


def test_velocity_stationary_marker_is_zero():
    assert not np.any(resultant_velocity(np.ones((50, 3)), FS))


def test_velocity_linear_motion():
    t = np.arange(100) / FS
    pos = np.outer(t, [3.0, 4.0, 0.0])
    np.testing.assert_allclose(resultant_velocity(pos, FS)[1:-1], 5.0, atol=1e-6)


def test_velocity_circular_motion():
    t = np.arange(500) / FS
    r, w = 0.7, 2 * np.pi
    pos = np.column_stack([r * np.cos(w * t), r * np.sin(w * t), np.zeros_like(t)])
    speed = resultant_velocity(pos, FS)
    np.testing.assert_allclose(speed[1:-1], r * w, rtol=0.01)


def test_velocity_needs_two_frames():
    with pytest.raises(InputError):
        resultant_velocity(np.zeros((1, 3)), FS)


def test_speed_derivative_of_ramp():
    v = np.linspace(0, 1, 11)[:, None]
    np.testing.assert_allclose(speed_derivative(v, 10.0), 1.0)


# --- release, clip, downsample ---------------------------------------------------------------


def test_release_unique_max():
    x = np.zeros(800)
    x[500] = 1.0
    assert detect_release(x) == 500


def test_release_increasing_series():
    assert detect_release(np.arange(37.0)) == 36


def test_release_plateau_takes_earliest():
    x = np.zeros(600)
    x[400:403] = 2.0
    assert detect_release(x) == 400


@given(x=arrays(np.float64, 30, elements=st.floats(-100, 100)), scale=st.floats(0.01, 100),
       shift=st.floats(-100, 100))
def test_release_invariant_under_positive_affine_maps(x, scale, shift):
    y = scale * x + shift
    # rounding can merge near-ties; only distinct maxima are comparable
    if np.sum(y == y.max()) == 1 and np.sum(x == x.max()) == 1:
        assert detect_release(y) == detect_release(x)


def _panel(n, fs=FS, name="trial 3"):
    return JointPanel(fs, [("P", "a")], np.arange(n, dtype=float)[:, None], name=name)


def test_clip_paper_window_250hz():
    out = clip_window(_panel(1000), 600, 2.0, 0.5)
    assert out.n_frames == 625
    assert out.values[0, 0] == 100 and out.values[-1, 0] == 724


def test_clip_paper_window_50hz():
    assert clip_window(_panel(200, fs=50.0), 100, 2.0, 0.5).n_frames == 125


def test_clip_early_event_names_trial():
    with pytest.raises(InputError, match="trial 3"):
        clip_window(_panel(1000), 10, 2.0, 0.5)


@given(s=st.integers(0, 200))
def test_clip_commutes_with_shift(s):
    base = np.random.default_rng(1).random((900, 2))
    shifted = np.vstack([np.zeros((s, 2)), base])
    a = clip_window(JointPanel(FS, [("P", "a"), ("B", "b")], base), 600, 2.0, 0.5)
    b = clip_window(JointPanel(FS, [("P", "a"), ("B", "b")], shifted), 600 + s, 2.0, 0.5)
    np.testing.assert_array_equal(a.values, b.values)


def test_downsample_cases():
    ramp = _panel(10)
    np.testing.assert_array_equal(downsample(ramp, 1).values, ramp.values)
    np.testing.assert_array_equal(downsample(ramp, 2).values[:, 0], [0, 2, 4, 6, 8])
    out = downsample(_panel(625), 5)
    assert out.n_frames == 125 and out.sampling_rate == 50.0
    with pytest.raises(ConfigurationError):
        downsample(ramp, 0)


# --- normalization ---------------------------------------------------------------------------


def test_normalize_examples():
    out, (lo, hi) = normalize_minmax(np.array([[[2.0], [4.0], [6.0]]]))
    np.testing.assert_allclose(out.ravel(), [0, 0.5, 1])
    assert lo[0] == 2 and hi[0] == 6
    unit = np.array([[[0.0], [0.3], [1.0]]])
    np.testing.assert_array_equal(normalize_minmax(unit)[0], unit)


def test_normalize_constant_channel_warns():
    with pytest.warns(RuntimeWarning, match="constant"):
        out, _ = normalize_minmax(np.full((1, 3, 1), 3.0))
    assert not np.any(out)


def test_normalize_pair_scope_pools_trials():
    x = np.array([[[0.0], [1.0]], [[2.0], [4.0]]])
    pair, _ = normalize_minmax(x, scope="pair")
    trial, _ = normalize_minmax(x, scope="trial")
    np.testing.assert_allclose(pair.ravel(), [0, 0.25, 0.5, 1.0])
    np.testing.assert_allclose(trial.ravel(), [0, 1, 0, 1])


@given(x=arrays(np.float64, (2, 6, 3), elements=st.floats(-1e3, 1e3)))
def test_normalize_is_idempotent(x):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        once, _ = normalize_minmax(x)
        twice, _ = normalize_minmax(once)
    np.testing.assert_allclose(twice, once, atol=1e-12)
    assert once.min() >= 0 and once.max() <= 1


def test_scaler_round_trip(rng):
    x = rng.normal(size=(3, 20, 4))
    scaler = PooledMinMaxScaler().fit(x)
    z = scaler.transform(x)
    assert z.min() == 0 and z.max() == 1
    np.testing.assert_allclose(scaler.inverse_transform(z), x, atol=1e-12)
    assert scaler.transform(x[0]).shape == (20, 4)


# --- labels ----------------------------------------------------------------------------------


@pytest.mark.parametrize("joint, hand, expected", [
    ("right_wrist", "right", "back_wrist"),
    ("left_wrist", "right", "front_wrist"),
    ("r_elbow", "left", "front_elbow"),
    ("L_knee", "left", "back_knee"),
    ("head", "right", "head"),
])
def test_relabel_handedness(joint, hand, expected):
    assert relabel_handedness(joint, hand) == expected


# --- dataset assembly ------------------------------------------------------------------------


def test_build_dataset_paper_shape():
    trials = [marker_trial(seed=s, peak=550 + 10 * s, name=f"swing {s}") for s in range(10)]
    ds = build_dataset(trials, PreprocessConfig(reference_channel="P_j00"))
    assert ds.shape == (10, 125, 27)
    assert ds.agent_split == 13 and ds.sampling_rate == 50.0
    assert ds.data.min() >= 0 and ds.data.max() <= 1
    # the reference speed peaks 2 s into each window, i.e. frame 100 at 50 Hz
    assert all(np.argmax(ds.data[n, :, 0]) == 100 for n in range(10))


def test_build_dataset_single_trial():
    ds = build_dataset([marker_trial()], PreprocessConfig(reference_channel="P_j00"))
    assert ds.shape == (1, 125, 27)


def test_build_dataset_early_event_names_trial():
    trials = [marker_trial(), marker_trial(peak=30, name="swing 7")]
    with pytest.raises(InputError, match="swing 7"):
        build_dataset(trials, PreprocessConfig(reference_channel="P_j00"))


def test_build_dataset_missing_reference_channel_is_named():
    with pytest.raises(InputError, match="P_wrist"):
        build_dataset([marker_trial()], PreprocessConfig(reference_channel="P_wrist"))


def test_build_dataset_orders_agents_first_then_second():
    panel = JointPanel(50.0, [("B", "x"), ("P", "y"), ("B", "z")], np.random.default_rng(0).random((60, 3)))
    ds = build_dataset([panel], PreprocessConfig(window=None, factor=1, agents=["P", "B"]))
    assert ds.labels == ["P_y", "B_x", "B_z"] and ds.agent_split == 1


@given(pre=st.sampled_from([0.4, 1.0, 2.0]), post=st.sampled_from([0.2, 0.5]), factor=st.sampled_from([1, 2, 5]))
def test_pipeline_shape_law(pre, post, factor):
    trials = [marker_trial(n_a=2, n_b=2, seed=s) for s in range(2)]
    ds = build_dataset(trials, PreprocessConfig(reference_channel="P_j00", window=(pre, post), factor=factor))
    frames = int(round(pre * FS)) + int(round(post * FS))
    assert ds.shape == (2, len(range(0, frames, factor)), 4)


# --- files -----------------------------------------------------------------------------------


def _write_marker_csv(path, trial):
    cols = ["time"] + [f"{a}_{j}_{ax}" for a, j in trial.markers for ax in "xyz"]
    rows = [[repr(f / trial.sampling_rate)] + [repr(float(v)) for v in trial.positions[f].ravel()]
            for f in range(trial.positions.shape[0])]
    path.write_text("\n".join([",".join(cols)] + [",".join(r) for r in rows]) + "\n")


def test_marker_csv_round_trip(tmp_path):
    trial = marker_trial(n_a=2, n_b=2, n_frames=300, peak=200)
    _write_marker_csv(tmp_path / "m.csv", trial)
    back = read_marker_csv(tmp_path / "m.csv")
    assert back.markers == trial.markers
    assert back.sampling_rate == pytest.approx(FS)
    np.testing.assert_array_equal(back.positions, trial.positions)


def test_marker_csv_rejects_bad_column(tmp_path):
    (tmp_path / "m.csv").write_text("time,P_wrist_q\n0,1\n0.004,2\n")
    with pytest.raises(InputError, match="P_wrist_q"):
        read_marker_csv(tmp_path / "m.csv")


def test_velocity_csv_round_trip(tmp_path, rng):
    panel = JointPanel(50.0, [("P", "a"), ("B", "b")], rng.random((30, 2)))
    write_velocity_csv(tmp_path / "v.csv", panel)
    back = read_velocity_csv(tmp_path / "v.csv")
    np.testing.assert_array_equal(back.values, panel.values)
    assert back.channels == panel.channels


def test_manifest_pipeline_and_dataset_round_trip(tmp_path):
    for s in range(2):
        _write_marker_csv(tmp_path / f"t{s}.csv", marker_trial(n_a=2, n_b=2, seed=s))
    (tmp_path / "manifest.json").write_text(json.dumps({
        "format": "marker", "trials": ["t0.csv", "t1.csv"], "fs": FS,
        "reference_channel": "P_j00", "window": [2.0, 0.5], "factor": 5}))
    trials, cfg = load_manifest(tmp_path / "manifest.json")
    assert len(trials) == 2 and cfg.reference_channel == "P_j00"
    ds = load_dataset(tmp_path / "manifest.json")
    assert ds.shape == (2, 125, 4)
    saved = save_dataset(ds, tmp_path / "out")
    again = load_dataset(saved)
    np.testing.assert_array_equal(again.data, ds.data)
    assert again.labels == ds.labels and again.agent_split == ds.agent_split


def test_manifest_missing_trial_file(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "velocity", "trials": ["nope.csv"]}))
    with pytest.raises(InputError, match="nope.csv"):
        load_manifest(tmp_path / "manifest.json")
