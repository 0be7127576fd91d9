import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evspad.errors import ConfigError, DataError, SaturationError
from evspad.scene import SceneClip, Trajectory
from evspad.spad import (SensorParams, SpadAggregateFrame, aggregate,
                         aggregate_stream, detection_probability,
                         load_aggregates, load_binary_frames,
                         measurement_covariance, save_aggregates,
                         save_binary_frames, simulate_binary_frames,
                         spad_response, spad_response_inverse)
from oracles import mle_flux

EXAMPLE = SensorParams(q=0.4, T_bin=1e-5, tau=1e-7)


def test_response_zero_counts():
    assert spad_response(0, EXAMPLE) == 0.0


def test_response_worked_example():
    # independent arithmetic: 100 / (0.4*1e-5 + 1e-7*100) = 1e7/1.4
    expected = 1e7 / 1.4
    assert math.isclose(spad_response(100, EXAMPLE), expected, rel_tol=1e-12)
    assert math.isclose(expected, 7.142857142857143e6, rel_tol=1e-12)


def test_response_saturates_at_inverse_dead_time():
    val = spad_response(1e9, EXAMPLE)
    assert abs(val - 1.0 / EXAMPLE.tau) / (1.0 / EXAMPLE.tau) < 1e-4


def test_response_inverse_examples():
    assert spad_response_inverse(0.0, EXAMPLE) == 0.0
    assert math.isclose(spad_response_inverse(1e7 / 1.4, EXAMPLE), 100.0,
                        rel_tol=1e-12)
    for n in (1, 10, 1000):
        back = spad_response_inverse(spad_response(n, EXAMPLE), EXAMPLE)
        assert math.isclose(back, n, rel_tol=1e-9)


def test_response_inverse_saturation_error():
    with pytest.raises(SaturationError):
        spad_response_inverse(1.0 / EXAMPLE.tau, EXAMPLE)
    with pytest.raises(SaturationError):
        spad_response_inverse(2.0 / EXAMPLE.tau, EXAMPLE)


@settings(max_examples=50, deadline=None)
@given(q=st.floats(0.05, 1.0), t_bin=st.floats(1e-6, 1e-4),
       tau=st.floats(1e-9, 1e-6))
def test_response_monotone_and_concave(q, t_bin, tau):
    p = SensorParams(q=q, T_bin=t_bin, tau=tau)
    n = np.arange(0, 400, dtype=np.float64)
    vals = spad_response(n, p)
    diffs = np.diff(vals)
    assert np.all(diffs > 0)                    # strictly increasing
    assert np.all(np.diff(diffs) <= 1e-12)      # concave on the integer grid


def test_binary_simulation_zero_flux_zero_dark(const_clip_factory):
    params = SensorParams(phi_dark=0.0)
    clip = SceneClip(radiance=np.zeros((4, 4)), trajectory=Trajectory.identity(),
                     illumination=1.0, duration=0.001)
    frames = list(simulate_binary_frames(clip, params, 0.0, 0.001, 1))
    assert len(frames) == 100
    assert all(not f.bits.any() for f in frames)


def test_binary_simulation_half_rate_at_ln2(const_clip_factory):
    # q*phi*T_bin = ln 2 makes the per-gate detection probability 0.5
    params = SensorParams(phi_dark=0.0)
    flux = math.log(2) / (params.q * params.T_bin)
    clip = const_clip_factory(flux, duration=1.0)
    n = 100_000
    hits = 0
    for k, f in enumerate(simulate_binary_frames(clip, params, 0.0, 1.0, 11)):
        hits += int(f.bits[0, 0])
        if k == n - 1:
            break
    sigma = math.sqrt(0.25 / n)
    assert abs(hits / n - 0.5) < 3 * sigma


def test_binary_simulation_dark_rate(const_clip_factory):
    params = SensorParams(phi_dark=5000.0)
    clip = SceneClip(radiance=np.zeros((1, 1)), trajectory=Trajectory.identity(),
                     illumination=1.0, duration=1.0)
    p_expect = 1.0 - math.exp(-params.phi_dark * params.T_bin)
    n = 100_000
    hits = 0
    for k, f in enumerate(simulate_binary_frames(clip, params, 0.0, 1.0, 12)):
        hits += int(f.bits[0, 0])
        if k == n - 1:
            break
    sigma = math.sqrt(p_expect * (1 - p_expect) / n)
    assert abs(hits / n - p_expect) < 3 * sigma


def test_binary_simulation_reproducible(const_clip_factory):
    clip = const_clip_factory(1e5, duration=0.002, pixels=(3, 3))
    a = [f.bits for f in simulate_binary_frames(clip, SensorParams(), 0.0, 0.002, 9)]
    b = [f.bits for f in simulate_binary_frames(clip, SensorParams(), 0.0, 0.002, 9)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_mle_consistency_over_flux_range(const_clip_factory):
    # Monte Carlo oracle with a fixed seed: the binary-frame MLE must
    # recover the true flux within 5% for fluxes spanning 1e3..1e6
    seed = 3
    n = 10_000
    for flux in (1e3, 1e4, 1e5, 1e6):
        params = SensorParams(phi_dark=0.0)
        assert flux * params.tau < 0.2
        clip = const_clip_factory(flux, duration=n * params.T_bin + 1e-6)
        hits = 0
        for k, f in enumerate(simulate_binary_frames(clip, params, 0.0,
                                                     n * params.T_bin, seed)):
            hits += int(f.bits[0, 0])
            if k == n - 1:
                break
        est = mle_flux(hits, n, params.q, params.T_bin)
        assert abs(est - flux) / flux < 0.05


def test_aggregate_single_and_constant():
    params = SensorParams()
    ones = [type("F", (), {"t_start": k * params.T_bin,
                           "bits": np.ones((2, 2), dtype=np.uint8)})()
            for k in range(64)]
    agg = aggregate(ones, 64, params)
    assert np.all(agg.counts == 64)
    assert agg.n_bins == 64
    assert math.isclose(agg.T, 64 * params.T_bin)
    single = aggregate(ones[:1], 1, params)
    assert np.array_equal(single.counts, ones[0].bits)


def test_aggregate_matches_bruteforce_sum(const_clip_factory):
    params = SensorParams()
    clip = const_clip_factory(3e4, duration=0.002, pixels=(5, 5))
    frames = list(simulate_binary_frames(clip, params, 0.0, 0.002, 21))
    agg = aggregate(frames, len(frames), params)
    brute = np.zeros((5, 5), dtype=int)
    for f in frames:
        for y in range(5):
            for x in range(5):
                brute[y, x] += int(f.bits[y, x])
    assert np.array_equal(agg.counts, brute)
    # order invariance within the window
    rev = aggregate(frames[::-1], len(frames), params)
    assert np.array_equal(rev.counts, agg.counts)


def test_aggregate_underflow():
    params = SensorParams()
    with pytest.raises(DataError):
        aggregate([], 4, params)


def test_measurement_covariance_examples(params):
    assert math.isclose(measurement_covariance(0.0, params),
                        params.R_bar / params.N_0, rel_tol=1e-12)
    assert math.isclose(measurement_covariance(params.N_0, params),
                        params.R_bar / (2 * params.N_0), rel_tol=1e-12)
    grid = np.geomspace(1e1, 1e9, 200)
    r = measurement_covariance(grid, params)
    assert np.all(np.diff(r) < 0)


def test_sensor_params_validation():
    with pytest.raises(ConfigError):
        SensorParams(q=0.0)
    with pytest.raises(ConfigError):
        SensorParams(q=1.5)
    with pytest.raises(ConfigError):
        SensorParams(phi_dark=-1.0)
    with pytest.raises(ConfigError):
        SensorParams(sigma_theta=0.5, c=0.3)
    with pytest.raises(ConfigError):
        SensorParams.from_dict({"quantum": 0.4})


def test_binary_frame_io_round_trip(tmp_path, const_clip_factory):
    params = SensorParams()
    clip = const_clip_factory(5e4, duration=0.0005, pixels=(6, 10))
    frames = list(simulate_binary_frames(clip, params, 0.0, 0.0005, 4))
    save_binary_frames(tmp_path / "bin", frames, params)
    loaded = load_binary_frames(tmp_path / "bin.json")
    assert len(loaded) == len(frames)
    for a, b in zip(frames, loaded):
        assert np.array_equal(a.bits, b.bits)
        assert math.isclose(a.t_start, b.t_start, abs_tol=1e-12)


def test_aggregate_io_round_trip(tmp_path, const_clip_factory):
    params = SensorParams()
    clip = const_clip_factory(5e4, duration=0.002, pixels=(4, 4))
    frames = list(simulate_binary_frames(clip, params, 0.0, 0.002, 4))
    aggs = aggregate_stream(frames, 50, params)
    assert len(aggs) == 4
    save_aggregates(tmp_path / "agg", aggs)
    loaded = load_aggregates(tmp_path / "agg.json")
    for a, b in zip(aggs, loaded):
        assert np.array_equal(a.counts, b.counts)
        assert a.n_bins == b.n_bins


def test_aggregate_counts_bounds():
    with pytest.raises(DataError):
        SpadAggregateFrame(t_center=0.0, T=1e-3, counts=np.array([[5]]), n_bins=4)


def test_detection_probability_formula(params):
    flux = np.array([0.0, 1e4, 1e6])
    expect = 1.0 - np.exp(-(params.q * flux + params.phi_dark) * params.T_bin)
    np.testing.assert_allclose(detection_probability(flux, params), expect,
                               rtol=1e-12)
