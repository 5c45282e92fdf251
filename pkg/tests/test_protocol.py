import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynfreeze import (
    ConstructionError,
    DriveSegment,
    FloquetSchedule,
    PreconditionError,
    build_schedule,
    effective_hamiltonian,
    freezing_points,
    kick_operator,
    micromotion_prediction,
    sample_ensemble,
    symmetry_breaking_scale,
)
from dynfreeze.ed import floquet_eigensystem, floquet_unitary, product_state_vector
from dynfreeze.ensemble import initial_state
from dynfreeze.protocol import filter_toggling_sign, is_freezing_point

TWO_PI = 2 * math.pi
OMEGA = TWO_PI * 0.1


def test_freezing_points_values():
    h = freezing_points(4.0, 3)
    np.testing.assert_allclose(h / TWO_PI, [0.5, 1.0, 1.5], rtol=1e-15)
    np.testing.assert_allclose(h * 4.0 / TWO_PI, [2, 4, 6], rtol=1e-15)
    assert freezing_points(2.0, 1)[0] / TWO_PI == pytest.approx(1.0, rel=1e-15)


def test_freezing_points_invalid():
    with pytest.raises(ValueError):
        freezing_points(0.0, 1)
    with pytest.raises(ValueError):
        freezing_points(4.0, 0)


@pytest.mark.parametrize("T", [1.0, 2.5, 4.0, 10.0])
def test_effective_hamiltonian_vanishes_at_freezing(T):
    for h in freezing_points(T, 5):
        c = effective_hamiltonian(OMEGA, h, T)
        assert abs(c.cx) < 1e-14 and abs(c.cy) < 1e-14


def test_effective_hamiltonian_special_points():
    T = 4.0
    c = effective_hamiltonian(OMEGA, TWO_PI / T, T)
    assert c.cx == pytest.approx(0.0, abs=1e-15)
    assert c.cy == pytest.approx(-2 * OMEGA / math.pi, rel=1e-14)
    c = effective_hamiltonian(OMEGA, math.pi / T, T)
    assert c.cx == pytest.approx(2 * OMEGA / math.pi, rel=1e-14)
    assert c.cy == pytest.approx(-2 * OMEGA / math.pi, rel=1e-14)
    c = effective_hamiltonian(OMEGA, 0.0, T)
    assert (c.cx, c.cy) == (OMEGA, 0.0)
    assert c.includes_H0


def test_effective_hamiltonian_matches_single_spin_floquet_unitary():
    # Away from freezing the one-period unitary of a free spin is, to first
    # order in Omega, exp(-i T (cx Sx + cy Sy)) up to the frame set by +h/-h.
    T, h, w = 4.0, TWO_PI * 0.3, 1e-4
    e = sample_ensemble(1, 1.0, seed=0)
    U = floquet_unitary(build_schedule("ideal_toggle", T=T, rabi=w, h_z=h), e)
    c = effective_hamiltonian(w, h, T)
    # U ~ 1 - i (T/2) (cx sigma_x + cy sigma_y) to first order in the drive
    gx = (1j * (U[0, 1] + U[1, 0])).real / T
    gy = (U[1, 0] - U[0, 1]).real / T
    assert gx == pytest.approx(c.cx, rel=1e-3)
    assert gy == pytest.approx(c.cy, rel=1e-3)


def test_symmetry_breaking_scale():
    assert symmetry_breaking_scale(OMEGA, TWO_PI * 0.5) / TWO_PI == pytest.approx(0.001, rel=1e-12)
    assert symmetry_breaking_scale(0.0, 1.0) == 0.0
    a = symmetry_breaking_scale(OMEGA, TWO_PI * 0.5)
    b = symmetry_breaking_scale(OMEGA * 4 ** (1 / 3), TWO_PI * 1.0)
    assert a == pytest.approx(b, rel=1e-12)
    with pytest.raises(ValueError):
        symmetry_breaking_scale(OMEGA, 0.0)


def test_kick_operator_zeros_and_quarter_point():
    T = 4.0
    h = freezing_points(T, 1)[0]
    for t in (0.0, T / 2, T):
        kx, ky = kick_operator(t, OMEGA, h, T)
        assert abs(kx) < 1e-15 and abs(ky) < 1e-15
    kx, ky = kick_operator(T / 8, OMEGA, h, T)
    assert kx == pytest.approx(OMEGA / h, rel=1e-14)
    assert ky == pytest.approx(-OMEGA / h, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(u=st.floats(0.0, 0.5), k=st.integers(1, 4))
def test_kick_operator_branch_symmetry(u, k):
    T = 4.0
    h = freezing_points(T, k)[-1]
    t = u * T
    kx1, ky1 = kick_operator(t, OMEGA, h, T)
    kx2, ky2 = kick_operator(T - t, OMEGA, h, T)
    assert kx2 == pytest.approx(-kx1, abs=1e-12)
    assert ky2 == pytest.approx(-ky1, abs=1e-12)


def test_kick_operator_continuous_at_half_period():
    T = 4.0
    h = freezing_points(T, 1)[0]
    eps = 1e-9
    a = np.array(kick_operator(T / 2 - eps, OMEGA, h, T))
    b = np.array(kick_operator(T / 2 + eps, OMEGA, h, T))
    assert np.max(np.abs(a - b)) < 1e-8


def test_kick_operator_rejects_off_freezing():
    with pytest.raises(PreconditionError):
        kick_operator(1.0, OMEGA, TWO_PI * 0.3, 4.0)
    with pytest.raises(PreconditionError):
        kick_operator(5.0, OMEGA, TWO_PI * 0.5, 4.0)
    assert is_freezing_point(TWO_PI * 0.5, 4.0)
    assert not is_freezing_point(0.0, 4.0)


def test_micromotion_prediction_stroboscopic_points():
    T, h = 4.0, TWO_PI * 0.5
    assert micromotion_prediction(0.0, OMEGA, h, T, 0.7) == pytest.approx((0.0, 0.0, 0.7), abs=1e-15)
    a = micromotion_prediction(0.0, OMEGA, h, T, 0.7)
    b = micromotion_prediction(T, OMEGA, h, T, 0.7)
    assert np.allclose(a, b, atol=1e-14)
    with pytest.raises(PreconditionError):
        micromotion_prediction(1.0, OMEGA, h, T, 1.5)


def test_micromotion_amplitudes_and_ordering():
    T, h, sz = 4.0, TWO_PI * 0.5, 0.8
    t = np.linspace(0, T, 4001)
    mx, my, mz = micromotion_prediction(t, OMEGA, h, T, sz)
    r = OMEGA / h
    first = t <= T / 2
    assert np.ptp(mx[first]) == pytest.approx(2 * r * sz, rel=1e-6)
    assert np.ptp(my) == pytest.approx(2 * r * sz, rel=1e-6)
    assert np.ptp(mz) == pytest.approx(2 * r**2 * sz, rel=1e-6)
    assert np.ptp(mx) > np.ptp(my) > np.ptp(mz)


def test_micromotion_matches_single_spin_ed():
    # Fixes the global sign convention: a single spin started along z, so that
    # the stroboscopic z magnetization stays near one over a period.
    from dynfreeze.ed import propagate
    T, h = 4.0, TWO_PI * 0.5
    e = sample_ensemble(1, 1.0, seed=0)
    sched = build_schedule("ideal_toggle", T=T, rabi=OMEGA, h_z=h)
    res = propagate(initial_state(0, 0), sched, e, samples_per_period=40)
    mx, my, mz = micromotion_prediction(res.times, OMEGA, h, T, 1.0)
    r = OMEGA / h
    assert np.max(np.abs(res.mx - mx)) < 2 * r**2
    assert np.max(np.abs(res.my - my)) < 2 * r**2
    assert np.max(np.abs(res.mz - mz)) < 2 * r**3


def test_ideal_toggle_structure():
    s = build_schedule("ideal_toggle", T=4.0, rabi=OMEGA, h_z=1.0)
    assert [seg.duration for seg in s.segments] == [2.0, 2.0]
    assert [seg.detuning for seg in s.segments] == [1.0, -1.0]
    assert s.period == 4.0


def test_dd_train_spacing_and_phases():
    s = build_schedule("with_dd_train", pulses_per_half=15, rabi=OMEGA, h_z=1.0, tau=0.05, t_pi=0.032)
    pulses = [seg for seg in s.segments if seg.kind == "pi_pulse"]
    assert all(p.duration == 0.032 for p in pulses)
    phases = [p.phase for p in pulses]
    assert phases[:4] == [0.0, 0.0, math.pi, math.pi]
    b = s.boundaries()
    starts = np.array([b[i] for i, seg in enumerate(s.segments) if seg.kind == "pi_pulse"])
    # consecutive pulses are separated by 2 tau of free evolution, also across the half
    np.testing.assert_allclose(np.diff(starts) - 0.032, 0.1, atol=1e-12)
    assert s.period == pytest.approx(30 * 0.132, rel=1e-12)


def test_dd_train_toggling_frame_sees_plus_then_minus():
    s = build_schedule("with_dd_train", pulses_per_half=3, rabi=OMEGA, h_z=1.0, tau=0.05, t_pi=0.032)
    b = s.boundaries()
    mid = (b[:-1] + b[1:]) / 2
    signs = filter_toggling_sign(s, mid)
    for seg, sgn, tm in zip(s.segments, signs, mid):
        if seg.kind == "continuous":
            half = 1.0 if tm < s.period / 2 else -1.0
            assert sgn * seg.detuning == pytest.approx(half * 1.0)


@pytest.mark.parametrize(
    "kind, params",
    [
        ("ideal_toggle", dict(T=4.0, rabi=1.0, h_z=1.0)),
        ("with_dd_train", dict(T=1.32, rabi=1.0, h_z=1.0, tau=0.05, t_pi=0.032)),
        ("sensing_df", dict(T=2.704, rabi=1.0, h_z=0.0, tau=0.05, t_pi=0.032)),
        ("sensing_pdd", dict(tau=0.05, t_pi=0.032)),
    ],
)
def test_durations_tile_period(kind, params):
    s = build_schedule(kind, **params)
    assert math.fsum(seg.duration for seg in s.segments) == pytest.approx(s.period, rel=1e-14)
    if "T" in params:
        assert s.period == pytest.approx(params["T"], rel=1e-12)


def test_inconsistent_timing_rejected():
    with pytest.raises(ConstructionError, match="tiled"):
        build_schedule("with_dd_train", T=4.01, rabi=1.0, h_z=1.0, tau=0.05, t_pi=0.032)
    with pytest.raises(ConstructionError):
        build_schedule("nonsense")


def test_pi_pulse_area_checked():
    with pytest.raises(ConstructionError):
        DriveSegment(0.032, 1.0, kind="pi_pulse")
    with pytest.raises(ConstructionError):
        DriveSegment(0.0)


def test_schedule_json_round_trip():
    s = build_schedule("sensing_df", T=2.704, rabi=OMEGA, h_z=0.3, tau=0.05, t_pi=0.032)
    back = FloquetSchedule.from_dict(s.to_dict())
    assert back == s


def test_detuning_offset_only_for_ideal_toggle():
    s = build_schedule("ideal_toggle", T=4.0, rabi=OMEGA, h_z=0.0)
    shifted = s.with_detuning_offset(0.7)
    assert [seg.detuning for seg in shifted.segments] == [0.7, -0.7]
    with pytest.raises(ConstructionError):
        build_schedule("sensing_pdd", tau=0.05, t_pi=0.032).with_detuning_offset(0.1)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_stroboscopic_sz_loss_bounded_by_symmetry_breaking_scale(n):
    T, h = 4.0, TWO_PI * 0.5
    e = sample_ensemble(n, 1e-4, 15.0, seed=n)
    U = floquet_unitary(build_schedule("ideal_toggle", T=T, rabi=OMEGA, h_z=h), e)
    psi = U @ product_state_vector(initial_state(0, 0), n)
    from dynfreeze.ed import magnetization
    loss = 1.0 - magnetization(psi, n)[2]
    # The single-spin part rotates by ~2 (Omega^3 / 4 h^2) T about x per period
    # (see the quasi-phase test below); couplings at this density add little.
    angle = 2 * symmetry_breaking_scale(OMEGA, h) * T
    assert 0 <= loss <= 1.5 * (1 - math.cos(angle))


@pytest.mark.parametrize("f_rabi, k", [(0.1, 1), (0.05, 1), (0.02, 2), (0.01, 1)])
def test_single_spin_stroboscopic_rotation_rate(f_rabi, k):
    # Independent oracle: scipy.linalg.expm of the two 2x2 half-period
    # Hamiltonians. The one-period unitary is a rotation about x whose rate
    # tends to 2 * Omega^3 / (4 h^2) as Omega / h -> 0.
    import scipy.linalg
    T = 4.0
    w, h = TWO_PI * f_rabi, freezing_points(T, k)[-1]
    sx = np.array([[0, 0.5], [0.5, 0]])
    sz = np.diag([0.5, -0.5])
    U = scipy.linalg.expm(-1j * (w * sx - h * sz) * T / 2) @ scipy.linalg.expm(-1j * (w * sx + h * sz) * T / 2)
    e = sample_ensemble(1, 1.0, seed=0)
    mu = floquet_eigensystem(floquet_unitary(build_schedule("ideal_toggle", T=T, rabi=w, h_z=h), e)).quasi_phases
    exact = floquet_eigensystem(U).quasi_phases
    np.testing.assert_allclose(np.sort(mu), np.sort(exact), atol=1e-12)
    rate = abs(mu[0] - mu[1]) / T
    assert rate == pytest.approx(2 * symmetry_breaking_scale(w, h), rel=5 * (w / h) ** 2)
