import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurotact.spike_codec import (
    RA_PARAMS, SA_PARAMS, IzhikevichParams, NeuronState, SpikeTrain, encode_ra, encode_sa,
    encode_trial, format_train, integrate, integrate_rows, isi_cv, parse_train, ra_current,
    read_trains, spike_counts, spike_rate, write_trains,
)

from oracles import izhikevich_reference

UNIT = IzhikevichParams(k=1.0)


@pytest.mark.parametrize("drive", [0.0, 3.0, 3.5, 5.0, 10.0, 25.0, 50.0, 69.0, 100.0,
                                   159.0, 161.0, 250.0, 500.0, 800.0])
def test_count_matches_fine_step_reference(drive):
    ref = izhikevich_reference(drive, seconds=1.0)
    got = spike_counts(UNIT, np.full((1, 1000), drive))[0]
    assert abs(got - ref) <= 1


def test_zero_input_stays_at_rest():
    res = integrate(SA_PARAMS, np.zeros(2000))
    assert len(res.train) == 0
    # settles on the stable fixed point of the b = 0.2 model
    assert res.v[-1] == pytest.approx(-70.0, abs=1e-6)
    assert res.v.max() < 30.0


def test_tonic_spiking_is_regular():
    tr = integrate(UNIT, np.full(3000, 10.0)).train
    assert len(tr) > 20
    assert isi_cv(tr, skip=2) < 0.05


def test_rate_increases_with_drive():
    counts = spike_counts(SA_PARAMS, np.linspace(0.05, 1.0, 12)[:, None] * np.ones((1, 1000)))
    assert np.all(np.diff(counts) >= 0)


def test_spike_times_are_within_trial_and_increasing():
    x = np.random.default_rng(0).uniform(0, 1, 1500)
    tr = encode_sa(x)
    assert tr.is_strictly_increasing
    assert tr.times[-1] <= tr.duration
    assert tr.duration == pytest.approx(1.5)


def test_pre_reset_voltage_reaches_peak():
    res = integrate(UNIT, np.full(500, 20.0))
    assert res.pre_reset_v.size == len(res.train)
    assert np.all(res.pre_reset_v >= 30.0)


def test_piecewise_integration_equals_whole():
    x = np.random.default_rng(1).uniform(0, 1.2, 3000)
    whole = integrate(SA_PARAMS, x).train
    state = NeuronState.resting(SA_PARAMS)
    parts = [integrate(SA_PARAMS, x[i:i + 100], state=state, t0=i / 1000).train.times
             for i in range(0, 3000, 100)]
    np.testing.assert_allclose(np.concatenate(parts), whole.times, atol=1e-12)


def test_rows_equal_single_neuron_integration():
    x = np.random.default_rng(2).uniform(0, 2.5, (37, 1200))
    rows = integrate_rows(SA_PARAMS, x)
    for k in range(x.shape[0]):
        assert rows[k] == integrate(SA_PARAMS, x[k]).train


def test_rows_chunked_with_states_equal_whole():
    x = np.random.default_rng(3).uniform(0, 1, (9, 2000))
    whole = integrate_rows(SA_PARAMS, x)
    states = [NeuronState.resting(SA_PARAMS) for _ in range(9)]
    chunks = [integrate_rows(SA_PARAMS, x[:, i:i + 250], states=states, t0=i / 1000)
              for i in range(0, 2000, 250)]
    for k in range(9):
        np.testing.assert_allclose(np.concatenate([c[k].times for c in chunks]), whole[k].times,
                                   atol=1e-12)


def test_non_finite_input_rejected():
    x = np.ones(100)
    x[17] = np.nan
    with pytest.raises(ValueError, match="17"):
        integrate(SA_PARAMS, x)
    with pytest.raises(ValueError):
        integrate_rows(SA_PARAMS, np.vstack([np.ones(100), x]))


def test_state_count_mismatch_rejected():
    with pytest.raises(ValueError):
        integrate_rows(SA_PARAMS, np.ones((3, 10)), states=[NeuronState()])


def test_nonpositive_coefficient_rejected():
    with pytest.raises(ValueError):
        encode_sa(np.ones(10), coeff=0.0)
    with pytest.raises(ValueError):
        encode_trial(np.ones((10, 2)), coeffs=[1.0, -1.0])
    with pytest.raises(ValueError):
        encode_trial(np.ones((10, 2)), coeffs=[1.0])


def test_ra_silent_on_constant_and_fires_on_edges():
    flat = np.full(2000, 0.6)
    assert np.allclose(ra_current(flat), 0.0, atol=1e-9)
    assert len(encode_ra(flat)) == 0
    steps = np.tile(np.repeat([0.0, 1.0], 250), 4)
    assert len(encode_ra(steps)) > 0


def test_ra_current_units_per_second():
    ramp = np.linspace(0.0, 1.0, 1001)      # slope of 1 per second at 1 kHz
    assert ra_current(ramp)[-200:] == pytest.approx(np.ones(200), rel=1e-3)


def test_encode_trial_layout():
    x = np.random.default_rng(4).uniform(0, 1, (800, 18))
    trains = encode_trial(x)
    assert len(trains) == 36
    assert trains[0] == encode_sa(x[:, 0])
    assert trains[18] == encode_ra(x[:, 0])


def test_spike_train_validation():
    with pytest.raises(ValueError):
        SpikeTrain([0.5], 0.2)
    with pytest.raises(ValueError):
        SpikeTrain([-0.1], 1.0)
    with pytest.raises(ValueError):
        spike_rate(SpikeTrain([], 0.0))


def test_text_round_trip(tmp_path):
    trains = [SpikeTrain([0.0012345, 0.5, 1.25], 2.0), SpikeTrain([], 1.5)]
    path = tmp_path / "t.txt"
    write_trains(path, trains)
    back = read_trains(path)
    assert [b.duration for b in back] == [2.0, 1.5]
    np.testing.assert_allclose(back[0].times, trains[0].times, atol=1e-7)
    with pytest.raises(ValueError):
        parse_train("   ")


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(50, 600))
def test_property_constant_input_rate_bounded(level, n):
    tr = encode_sa(np.full(n, level))
    assert tr.is_strictly_increasing
    assert 0 <= spike_rate(tr) < 1000


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=20, max_size=300))
def test_property_format_parse_preserves_count(values):
    tr = encode_sa(np.array(values))
    back = parse_train(format_train(tr))
    assert len(back) == len(tr)
    assert back.duration == tr.duration


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(1.05, 3.0))
def test_property_monotone_in_gain(level, gain):
    lo, hi = spike_counts(SA_PARAMS, np.array([[level] * 1000, [level * gain] * 1000]))
    assert hi >= lo


def test_ra_params_gain():
    assert RA_PARAMS.k == 3.0 and SA_PARAMS.k == 100.0
