import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evspad.errors import ConfigError, DataError
from evspad.events import (Event, EventStream, event_noise, export_events_csv,
                           import_events_csv, integrate_events, load_events,
                           save_events, simulate_events)
from evspad.scene import SceneClip, Trajectory, make_hdr_texture, zigzag_pan
from evspad.spad import EPS_LOG, SensorParams, render_flux
from oracles import reference_event_simulator


def make_step_clip(phi_lo, ratio, t_step=5e-3, duration=1e-2, ramp=2e-6):
    """1x2 scene whose right pixel's flux steps from phi_lo to phi_lo*ratio."""
    rad = np.array([[ratio, 1.0]])
    traj = Trajectory(t=np.array([0.0, t_step, t_step + ramp, duration]),
                      dx=np.array([0.0, 0.0, 1.0, 1.0]),
                      dy=np.zeros(4), theta=np.zeros(4))
    return SceneClip(radiance=rad, trajectory=traj, illumination=phi_lo,
                     duration=duration)


def test_static_clip_produces_no_events(params):
    clip = SceneClip(radiance=make_hdr_texture(8), trajectory=Trajectory.identity(),
                     illumination=1e4, duration=0.005)
    stream = simulate_events(clip, params, 5)
    assert len(stream) == 0


def test_flux_step_emits_threshold_quotient_events():
    # log step of 0.9 with c = 0.3 crosses exactly three thresholds
    # (nudged above the boundary: the floor at exactly 0.9/0.3 is
    # floating-point fragile by construction)
    params = SensorParams(sigma_theta=0.0, rho=0.0)
    clip = make_step_clip(1e6, math.exp(0.9 + 1e-9))
    stream = simulate_events(clip, params, 3)
    at_pixel = stream.polarity[(stream.x == 1) & (stream.y == 0)]
    assert at_pixel.size == 3
    assert np.all(at_pixel == 1)
    # the untouched pixel stays silent
    assert int(((stream.x == 0).sum())) == 0


def test_downward_step_emits_negative_events():
    params = SensorParams(sigma_theta=0.0, rho=0.0)
    clip = make_step_clip(1e6, math.exp(-(0.65)))
    stream = simulate_events(clip, params, 3)
    at_pixel = stream.polarity[(stream.x == 1) & (stream.y == 0)]
    assert at_pixel.size == 2            # floor(0.65 / 0.3)
    assert np.all(at_pixel == -1)


def test_refractory_suppresses_spike_events():
    # a spike crossing 4 thresholds inside one refractory period yields
    # far fewer events than 4; count must match the independent
    # reference simulator at a 10x finer step
    params = SensorParams(sigma_theta=0.0, rho=2e-5)
    phi = 1e6
    spike = 4 * params.c
    t_up, t_dn = 4.0e-3, 4.008e-3   # 8 us spike, well inside rho = 20 us
    rad = np.array([[math.exp(spike), 1.0]])
    traj = Trajectory(t=np.array([0.0, t_up, t_up + 2e-6, t_dn, t_dn + 2e-6, 8e-3]),
                      dx=np.array([0.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
                      dy=np.zeros(6), theta=np.zeros(6))
    clip = SceneClip(radiance=rad, trajectory=traj, illumination=phi, duration=8e-3)
    stream = simulate_events(clip, params, 3)
    n_lib = int(((stream.x == 1) & (stream.y == 0)).sum())
    assert 0 < n_lib < 4

    def log_lum(t):
        return math.log(render_flux(clip, t).flux[0, 1] + EPS_LOG)

    ref_fine = reference_event_simulator(log_lum, 8e-3, 1e-7, params.c, params.rho)
    assert n_lib == len(ref_fine)


def test_simulation_matches_reference_per_pixel():
    params = SensorParams(sigma_theta=0.0)
    clip = SceneClip(radiance=make_hdr_texture(6), trajectory=zigzag_pan(0.004, 2.0, 2),
                     illumination=2e4, duration=0.004)
    stream = simulate_events(clip, params, 8)
    for (x, y) in ((2, 3), (1, 1), (4, 2)):
        def log_lum(t, x=x, y=y):
            return math.log(render_flux(clip, t).flux[y, x] + EPS_LOG)
        ref = reference_event_simulator(log_lum, 0.004, 1e-6, params.c, params.rho)
        mask = (stream.x == x) & (stream.y == y)
        got = list(zip((stream.t_us[mask] * 1e-6).tolist(),
                       stream.polarity[mask].tolist()))
        assert len(got) == len(ref)
        for (tg, pg), (tr, pr) in zip(got, ref):
            assert pg == pr
            assert abs(tg - tr) < 1.5e-6


def test_refractory_invariant_and_sortedness(params):
    clip = SceneClip(radiance=make_hdr_texture(10), trajectory=zigzag_pan(0.01, 4.0, 2),
                     illumination=1e4, duration=0.01)
    stream = simulate_events(clip, params, 13)
    assert len(stream) > 0
    assert np.all(np.diff(stream.t_us) >= 0)
    pix = stream.pixel_index()
    for p in np.unique(pix):
        tp = stream.t_us[pix == p]
        assert np.all(np.diff(tp) >= int(params.rho * 1e6))


def test_noiseless_tracking_stays_within_one_threshold():
    params = SensorParams(sigma_theta=0.0)
    clip = SceneClip(radiance=make_hdr_texture(8), trajectory=zigzag_pan(0.006, 3.0, 2),
                     illumination=1e4, duration=0.006)
    stream = simulate_events(clip, params, 2)
    assert len(stream) > 0
    h, w = clip.radiance.shape
    l_ref = np.log(render_flux(clip, 0.0).flux + EPS_LOG)
    worst = 0.0
    for ev in stream:
        l_ref[ev.y, ev.x] += params.c * ev.polarity
        true_l = math.log(render_flux(clip, ev.t).flux[ev.y, ev.x] + EPS_LOG)
        worst = max(worst, abs(l_ref[ev.y, ev.x] - true_l))
    assert worst <= params.c + 1e-9


def test_simulation_determinism(params):
    clip = SceneClip(radiance=make_hdr_texture(8), trajectory=zigzag_pan(0.004, 3.0, 2),
                     illumination=1e4, duration=0.004)
    a = simulate_events(clip, params, 42)
    b = simulate_events(clip, params, 42)
    c = simulate_events(clip, params, 43)
    assert np.array_equal(a.t_us, b.t_us)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.polarity, b.polarity)
    assert not (np.array_equal(a.t_us, c.t_us) and np.array_equal(a.x, c.x))


def test_step_must_respect_refractory(params):
    clip = SceneClip(radiance=make_hdr_texture(4), trajectory=Trajectory.identity(),
                     illumination=1e3, duration=0.001)
    with pytest.raises(ConfigError):
        simulate_events(clip, params, 1, step=10 * params.rho)


def test_event_noise_examples(params):
    ev = Event(t=1.0, x=0, y=0, polarity=1)
    nb = event_noise(ev, 1.0, 5e4, params)           # dt = 0: inside refractory
    assert nb.q_shot == 0.0 and nb.q_isol == 0.0
    assert nb.q_ref == params.rho_ref
    assert nb.q_thresh == params.sigma_theta ** 2
    assert math.isclose(nb.total, params.rho_ref + params.sigma_theta ** 2)

    nb2 = event_noise(Event(t=1.0 + 2 * params.rho, x=0, y=0, polarity=1),
                      1.0, 5e4, params)
    assert nb2.q_ref == 0.0

    with pytest.raises(DataError):
        event_noise(Event(t=0.5, x=0, y=0, polarity=1), 1.0, 1e3, params)


def test_event_noise_shot_vanishes_at_high_flux(params):
    dt = 1e-3
    fluxes = np.geomspace(1e1, 1e12, 40)
    shots = [event_noise(Event(t=dt, x=0, y=0, polarity=1), 0.0, f, params).q_shot
             for f in fluxes]
    assert all(a > b for a, b in zip(shots, shots[1:]))
    assert shots[-1] < 1e-12
    isols = [event_noise(Event(t=dt, x=0, y=0, polarity=1), 0.0, f, params).q_isol
             for f in fluxes]
    assert len(set(isols)) == 1


@settings(max_examples=40, deadline=None)
@given(dts=st.lists(st.floats(0.0, 1e-2), min_size=2, max_size=2),
       flux=st.floats(0.0, 1e9))
def test_event_noise_total_nondecreasing_in_dt(dts, flux):
    # nondecreasing within each refractory branch; the branch switch at
    # dt == rho steps down by rho_ref, which the branch form dictates
    params = SensorParams()
    lo, hi = sorted(dts)
    same_branch = (lo > params.rho) == (hi > params.rho)
    a = event_noise(Event(t=lo, x=0, y=0, polarity=1), 0.0, flux, params).total
    b = event_noise(Event(t=hi, x=0, y=0, polarity=1), 0.0, flux, params).total
    assert a >= 0.0 and b >= 0.0
    if same_branch:
        assert b >= a - 1e-15
    else:
        assert b >= a - params.rho_ref - 1e-15


def _toy_stream(params, events):
    events = sorted(events, key=lambda e: (e[0], e[2], e[1]))
    return EventStream(
        t_us=np.array([e[0] for e in events], dtype=np.int64),
        x=np.array([e[1] for e in events], dtype=np.int32),
        y=np.array([e[2] for e in events], dtype=np.int32),
        polarity=np.array([e[3] for e in events], dtype=np.int8),
        t_span=(0.0, 1.0), resolution=(4, 4), params=params)


def test_integrate_events_examples(params):
    stream = _toy_stream(params, [(100, 1, 1, 1), (200, 1, 1, 1), (300, 1, 1, 1),
                                  (400, 1, 1, -1), (500, 2, 2, 1)])
    assert integrate_events(stream, (1, 1), 0.0, 0.00005) == 0     # empty interval
    assert integrate_events(stream, (1, 1), 0.0, 1.0) == 2         # 3 pos + 1 neg
    assert integrate_events(stream, (2, 2), 0.0, 1.0) == 1
    # antisymmetry
    assert integrate_events(stream, (1, 1), 1.0, 0.0) == -2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 999), st.sampled_from([-1, 1])),
                min_size=0, max_size=25),
       st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000))
def test_integrate_events_additive(evs, a_us, b_us, c_us):
    stream = _toy_stream(SensorParams(), [(t, 0, 0, p) for t, p in evs])
    a, b, c = sorted((a_us, b_us, c_us))
    ta, tb, tc = a * 1e-6, b * 1e-6, c * 1e-6
    full = integrate_events(stream, (0, 0), ta, tc)
    split = (integrate_events(stream, (0, 0), ta, tb)
             + integrate_events(stream, (0, 0), tb, tc))
    assert full == split


def test_stream_validation(params):
    with pytest.raises(DataError):
        EventStream(t_us=[200, 100], x=[0, 0], y=[0, 0], polarity=[1, 1],
                    t_span=(0.0, 1.0), resolution=(2, 2), params=params)
    with pytest.raises(DataError):
        EventStream(t_us=[100], x=[0], y=[0], polarity=[2],
                    t_span=(0.0, 1.0), resolution=(2, 2), params=params)
    with pytest.raises(DataError):
        EventStream(t_us=[2_000_000], x=[0], y=[0], polarity=[1],
                    t_span=(0.0, 1.0), resolution=(2, 2), params=params)


def test_event_io_round_trip(tmp_path, params):
    clip = SceneClip(radiance=make_hdr_texture(6), trajectory=zigzag_pan(0.003, 2.0, 2),
                     illumination=2e4, duration=0.003)
    stream = simulate_events(clip, params, 77)
    assert len(stream) > 0
    save_events(tmp_path / "ev", stream)
    back = load_events(tmp_path / "ev.json")
    assert np.array_equal(back.t_us, stream.t_us)
    assert np.array_equal(back.x, stream.x)
    assert np.array_equal(back.y, stream.y)
    assert np.array_equal(back.polarity, stream.polarity)
    assert back.params == stream.params

    export_events_csv(tmp_path / "ev.csv", stream)
    csv_back = import_events_csv(tmp_path / "ev.csv", stream.t_span,
                                 stream.resolution, params)
    assert np.array_equal(csv_back.t_us, stream.t_us)
    assert np.array_equal(csv_back.polarity, stream.polarity)
