import numpy as np
import pytest

from neurotact.features import build_feature_vector
from neurotact.rt_pipeline import (
    LIVE_PCS, PROFILES, RT_TEXTURES, SCAN_LENGTH, Normalizer, ScanStream, SessionParams, StreamError,
    VelocityProfile, build_rt_dataset, classify_live, crosssession_train, extrapolation_train,
    fig4b_crosssession, fig4c_extrapolation, load_rt_datasets, run_protocol, run_stream,
    run_stream_both, save_rt_datasets, simulate_scan, train_live, trajectory, trained_profiles,
)
from neurotact.stats import two_prop_z


@pytest.fixture(scope="module")
def rt_data():
    return [build_rt_dataset(5, 0)]


def _scan(texture="L", kind="medium", seed=1, jitter=0.1, **kw):
    return simulate_scan(texture, VelocityProfile(kind, seed, jitter), SessionParams.neutral(),
                         seed, **kw)


def test_slow_profile_duration_and_updates():
    s = _scan(kind="slow", jitter=0.0)
    assert s.end_time == pytest.approx(4.0, abs=1e-3)
    assert s.velocities.size == 40


def test_reference_profile_duration_and_updates():
    s = _scan(kind="medium", jitter=0.0)
    assert s.end_time == pytest.approx(2.0, abs=1e-3)
    assert s.velocities.size == 20


def test_end_position_matches_scan_length():
    for kind in PROFILES:
        s = _scan(kind=kind, seed=3)
        travel = 0.1 * s.velocities.sum() + s.end_velocity * (s.end_time - 0.1 * s.velocities.size)
        # the tracker reports each batch to within +-3 %
        assert travel == pytest.approx(SCAN_LENGTH, rel=0.03)


def test_trajectory_reaches_scan_length():
    xs, end, _ = trajectory(VelocityProfile("slow_to_fast", 2))
    assert xs[0] == 0.0 and xs[-1] <= SCAN_LENGTH
    assert SCAN_LENGTH - xs[-1] <= 150.0 * 1.1 / 1000 + 1e-9


def test_determinism_and_validation():
    a, b = _scan(seed=8), _scan(seed=8)
    assert np.array_equal(a.frames, b.frames) and np.array_equal(a.velocities, b.velocities)
    with pytest.raises(ValueError):
        _scan(texture="C")
    with pytest.raises(ValueError):
        VelocityProfile("sideways")


def test_vector_length_and_window_count():
    for kind in ("fast_to_slow", "slow"):
        out = run_stream_both(_scan(kind=kind))
        assert len(out.scaled) == 180 and len(out.unscaled) == 180
        assert all(tr.duration == 2.0 for tr in out.scaled_trains)


def test_constant_reference_speed_paths_agree():
    s = _scan(kind="medium", jitter=0.0)
    s.velocities[:] = 100.0
    s.end_velocity = 100.0
    out = run_stream_both(s)
    np.testing.assert_allclose(out.scaled.values, out.unscaled.values, atol=1e-6)
    assert np.array_equal(run_stream(s, speed_scaling=False).values, out.unscaled.values)


def test_unscaled_matches_offline_windowing():
    s = _scan(kind="slow")
    out = run_stream_both(s)
    offline = build_feature_vector(out.real_trains, "realtime")
    assert np.array_equal(offline.values, out.unscaled.values)


def test_byte_round_trip_and_missing_end(tmp_path):
    s = _scan(seed=4)
    back = ScanStream.from_bytes(s.to_bytes())
    assert np.array_equal(back.frames, s.frames)
    np.testing.assert_array_equal(back.velocities, s.velocities)
    assert back.end_time == s.end_time and back.texture == s.texture
    s.save(tmp_path / "s.bin")
    assert np.array_equal(ScanStream.load(tmp_path / "s.bin").frames, s.frames)
    data = s.to_bytes()
    with pytest.raises(StreamError):
        ScanStream.from_bytes(data[:-17])
    with pytest.raises(StreamError):
        run_stream_both(ScanStream(s.frames, s.velocities, float("nan"), 0.0))
    events = list(s.events())
    assert events[-1][0] == 3


def _noise_free(texture, kinds):
    scans = {k: simulate_scan(texture, VelocityProfile(k, 0, 0.0), SessionParams.neutral(), 0,
                              tracker_noise=0.0, noise=False) for k in kinds}
    return scans, Normalizer.fit(list(scans.values()))


@pytest.mark.parametrize("texture", ["B", "D", "L", "N"])
def test_scaled_features_invariant_across_constant_profiles(texture):
    scans, norm = _noise_free(texture, ("slow", "medium", "fast"))
    ref = run_stream(scans["medium"], normalizer=norm).values
    for kind in ("slow", "fast"):
        vec = run_stream(scans[kind], normalizer=norm).values
        assert np.corrcoef(ref, vec)[0, 1] > 0.9
        raw = run_stream(scans[kind], speed_scaling=False, normalizer=norm).values
        raw_ref = run_stream(scans["medium"], speed_scaling=False, normalizer=norm).values
        assert np.corrcoef(raw_ref, raw)[0, 1] < 0.5


@pytest.mark.parametrize("texture", ["B", "L"])
def test_scaling_helps_on_ramp_profiles(texture):
    scans, norm = _noise_free(texture, ("medium", "slow_to_fast", "fast_to_slow"))
    ref = run_stream(scans["medium"], normalizer=norm).values
    raw_ref = run_stream(scans["medium"], speed_scaling=False, normalizer=norm).values
    for kind in ("slow_to_fast", "fast_to_slow"):
        scaled = np.corrcoef(ref, run_stream(scans[kind], normalizer=norm).values)[0, 1]
        raw = np.corrcoef(raw_ref, run_stream(scans[kind], speed_scaling=False,
                                                normalizer=norm).values)[0, 1]
        assert scaled > raw


def test_offset_drift_removed_by_centering():
    base = SessionParams.neutral()
    drift = SessionParams((1.0,) * 9, (0.02,) * 9)
    norm = Normalizer.full_scale()
    a = norm(simulate_scan("A", VelocityProfile("medium", 0), base, 0, noise=False).frames)
    b = norm(simulate_scan("A", VelocityProfile("medium", 0), drift, 0, noise=False).frames)
    shift = (b - a).mean(axis=0)
    np.testing.assert_allclose((b - b.mean(axis=0)), (a - a.mean(axis=0)), atol=1.5 / 1023)
    assert np.all(np.abs(shift - 0.02) < 1.5 / 1023)


def test_session_draw_ranges():
    s = SessionParams.draw(3)
    assert np.all(np.abs(np.asarray(s.gains) - 1) <= 0.1)
    assert np.all(np.abs(np.asarray(s.offsets)) <= 0.02)


def test_dataset_sizes(rt_data):
    d = rt_data[0]
    assert d.train.scaled.shape == (100, 180)
    assert d.calibration.scaled.shape == (50, 180)
    assert d.test.unscaled.shape == (100, 180)
    rng = np.random.default_rng(0)
    assert crosssession_train(rng, d.train).size == 75
    # 5 textures x 4 trials x 2 profiles x 75 %
    assert extrapolation_train(rng, d.train).size == 30
    assert trained_profiles(d.test).sum() == 40
    assert (~trained_profiles(d.test)).sum() == 60


def test_protocol_sample_sizes(rt_data):
    res = fig4c_extrapolation(rt_data * 3, [5, 25], True, n_repeats=100, seed=1)
    assert res["trained-profiles"][25].n == 300
    assert res["trained-profiles"][25].tested == 300 * 40
    assert res["untrained-profiles"][25].tested == 300 * 60
    cs = fig4b_crosssession(rt_data, [5], False, n_repeats=4)
    assert cs[5].tested == 4 * 100
    both = run_protocol("s5_demo", rt_data, [LIVE_PCS])
    assert set(both) == {"speed", "original"}
    with pytest.raises(ValueError):
        run_protocol("nope", rt_data, [5])


def test_two_prop_at_n300_is_well_defined():
    z, p = two_prop_z(0.8 * 300, 300, 0.4 * 300, 300)
    assert z > 0 and p < 1e-10


def test_live_classifier(rt_data):
    d = rt_data[0]
    model = train_live(d.train.scaled, d.train.textures, d.train.scaled)
    for t in RT_TEXTURES:
        centroid = d.train.scaled[d.train.textures == t].mean(axis=0)
        assert classify_live(model, centroid, t) == (t, True)
    # all-zero input after centering sits at the training mean
    label, flag = classify_live(model, model.session_mean, "A")
    assert label in RT_TEXTURES
    assert classify_live(model, model.session_mean)[0] == label
    with pytest.raises(ValueError):
        classify_live(model, np.zeros(10))


def test_tie_resolves_to_lowest_class():
    rng = np.random.default_rng(0)
    half = np.array([1.0, 0, 0, 0]) + 0.1 * rng.standard_normal((10, 4))
    X = np.vstack([half, -half])       # mirror-image classes around the origin
    labels = ["B"] * 10 + ["A"] * 10
    model = train_live(X, labels, X, n_components=3)
    # the session mean is the exact midpoint, so both discriminants are equal
    assert classify_live(model, model.session_mean, "A") == ("A", True)


def test_rt_dataset_round_trip(tmp_path, rt_data):
    save_rt_datasets(tmp_path / "rt.npz", rt_data)
    back = load_rt_datasets(tmp_path / "rt.npz")
    assert np.array_equal(back[0].train.scaled, rt_data[0].train.scaled)
    assert back[0].test.profiles.tolist() == rt_data[0].test.profiles.tolist()
