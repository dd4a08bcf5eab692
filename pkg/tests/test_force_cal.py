import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurotact.drum_sim import DatasetError
from neurotact.force_cal import (
    COEFF_MAX, EPSILON, ForceScalingTable, bisect_coefficient, bisect_many, calibrate,
    calibrate_cell, ensemble_rate_fn, solve_coefficient, target_rate, unit_table,
)
from neurotact.spike_codec import SA_PARAMS, spike_counts


def test_linear_rate_scan_oracle():
    # rate = 10 c: a fine scan of c finds the same admissible interval
    grid = np.linspace(0, 5, 500001)
    for target in [3.0, 12.34, 47.5]:
        c, ok, res = bisect_coefficient(lambda c: 10 * c, target)
        assert ok and res < EPSILON
        admissible = grid[np.abs(10 * grid - target) < EPSILON]
        assert admissible.min() - 1e-9 <= c <= admissible.max() + 1e-9


def test_unreachable_target_clamps_to_max():
    c, ok, res = bisect_coefficient(lambda c: 10 * c, 80.0)
    assert c == COEFF_MAX and not ok
    assert res == pytest.approx(30.0)


def test_step_function_without_solution_clamps():
    c, ok, _ = bisect_coefficient(lambda c: 0.0 if c < 1.3 else 20.0, 10.0)
    assert c == 5.0 and not ok


def test_eps_must_be_positive():
    with pytest.raises(ValueError):
        bisect_coefficient(lambda c: c, 1.0, eps=0.0)


def test_target_rate():
    assert target_rate([10.0, 20.0, 30.0]) == 20.0
    with pytest.raises(ValueError):
        target_rate([])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.05, 4.95), min_size=1, max_size=6, unique=True),
       st.lists(st.floats(0, 30), min_size=7, max_size=7), st.floats(0, 60))
def test_property_lockstep_equals_scalar(edges, levels, target):
    # a random non-decreasing step function
    edges = np.sort(edges)
    lv = np.sort(np.asarray(levels[:edges.size + 1]))
    f = lambda c: float(lv[np.searchsorted(edges, c, side="right")])
    scalar = bisect_coefficient(f, target)
    targets = np.array([target, target + 1.0])
    fns = [f, lambda c: f(c) + 1.0]
    c, ok, res = bisect_many(lambda cs, act: np.array([fns[i](cs[i]) for i in np.flatnonzero(act)]),
                             targets)
    assert (c[0], ok[0]) == scalar[:2]
    assert res[0] == pytest.approx(scalar[2])
    assert (c[1], ok[1]) == bisect_coefficient(fns[1], target + 1.0)[:2]


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 0.9), st.floats(0.2, 4.0))
def test_property_ensemble_rate_monotone(level, c):
    x = level + 0.1 * np.sin(np.linspace(0, 20, 1000))[None, :]
    rate = ensemble_rate_fn(x)
    assert rate(c * 1.2) >= rate(c)


def test_solve_recovers_known_gain():
    rng = np.random.default_rng(0)
    base = 0.3 + 0.05 * rng.standard_normal((3, 2000))
    target = ensemble_rate_fn(base)(1.0)
    c, ok = solve_coefficient(base * 0.5, target)
    assert ok
    got = spike_counts(SA_PARAMS, c * base * 0.5).mean() / 2.0
    assert abs(got - target) < EPSILON


def test_calibrate_cell_reference_is_unity():
    rng = np.random.default_rng(1)
    base = 0.3 + 0.05 * rng.random((2, 1500, 4))
    stacks = {250: base * 0.7, 500: base, 1000: base * 1.4}
    coeffs, conv, resid, targets = calibrate_cell(stacks)
    assert np.all(coeffs[:, 1] == 1.0) and np.all(conv[:, 1])
    assert np.all(coeffs[:, 0] > 1.0) and np.all(coeffs[:, 2] < 1.0)
    assert np.all(resid[conv] < EPSILON)
    assert targets.shape == (4,)
    with pytest.raises(ValueError):
        calibrate_cell({250: base})


def test_calibrate_small_dataset(small_dataset, tmp_path):
    table, report = calibrate(small_dataset)
    assert table.coefficients.shape == (2, 18, 5, 3)
    assert report.total == table.coefficients.size
    assert report.fixed == 2 * 18 * 5
    assert report.converged + report.clamped + report.fixed == report.total
    assert np.all(table.coefficients[~table.converged] == 5.0)
    assert report.summary()["max_residual_converged"] < EPSILON
    path = tmp_path / "fs.json"
    table.save(path)
    back = ForceScalingTable.load(path)
    assert np.array_equal(back.coefficients, table.coefficients)
    assert np.array_equal(back.converged, table.converged)
    assert back.lookup("L", 40, 250).shape == (18,)
    with pytest.raises(KeyError):
        back.lookup("Z", 40, 250)


def test_corrupt_table_rejected():
    with pytest.raises(DatasetError):
        ForceScalingTable.from_json('{"dimensions": {}}')
    with pytest.raises(DatasetError):
        ForceScalingTable.from_json("not json")


def test_unit_table_is_identity():
    t = unit_table(["A", "B"])
    assert np.all(t.lookup("B", 80, 1000) == 1.0)
