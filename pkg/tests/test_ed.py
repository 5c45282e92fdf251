import math
import warnings

import numpy as np
import pytest
import scipy.linalg

from dynfreeze import (
    CapacityError,
    DegenerateSpectrumWarning,
    DriveSegment,
    FloquetSchedule,
    SpinEnsemble,
    build_schedule,
    initial_state,
    sample_ensemble,
)
from dynfreeze.analysis import cumulative_time_average
from dynfreeze.ed import (
    diagonal_ensemble_average,
    floquet_eigensystem,
    floquet_unitary,
    hamiltonian_matrix,
    magnetization,
    product_state_vector,
    propagate,
    segment_unitary,
    total_spin_operators,
)

TWO_PI = 2 * math.pi
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]])
SZ = np.diag([1.0 + 0j, -1.0])


def single_spin():
    return SpinEnsemble.from_positions(np.zeros((1, 3)))


def kron_site(op, i, n):
    mats = [np.eye(2)] * n
    mats[i] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def brute_force_hamiltonian(ens, rabi, det, phase):
    """Reference H built from Kronecker products, independent of the package."""
    n = ens.n
    s = [[kron_site(P / 2, i, n) for P in (SX, SY, SZ)] for i in range(n)]
    H = np.zeros((2**n, 2**n), dtype=complex)
    for i in range(n):
        H += (ens.disorder[i] + det) * s[i][2]
        H += rabi * (math.cos(phase) * s[i][0] + math.sin(phase) * s[i][1])
        for j in range(i + 1, n):
            J = ens.couplings[i, j]
            H += J * (s[i][0] @ s[j][0] + s[i][1] @ s[j][1] - s[i][2] @ s[j][2])
    return H


def test_single_spin_drive_matrix():
    H = hamiltonian_matrix(single_spin(), rabi=0.7)
    np.testing.assert_allclose(H, 0.35 * SX, atol=1e-15)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_hamiltonian_matches_kronecker_construction(n):
    e = sample_ensemble(n, 1e-2, 1.0, disorder_width=0.3, seed=n)
    H = hamiltonian_matrix(e, rabi=0.4, detuning=-0.9, phase=0.3)
    np.testing.assert_allclose(H, brute_force_hamiltonian(e, 0.4, -0.9, 0.3), atol=1e-12)
    assert np.allclose(H, H.conj().T)


def test_two_spin_coupling_spectrum_by_hand():
    # J (sx sx + sy sy - sz sz): |uu> and |dd> sit at -J/4; the flip-flop
    # block {|ud>, |du>} is [[J/4, J/2], [J/2, J/4]], giving 3J/4 and -J/4.
    e = SpinEnsemble.from_positions([[0, 0, 0], [0, 0, 10.0]])
    J = e.couplings[0, 1]
    E = np.linalg.eigvalsh(hamiltonian_matrix(e))
    np.testing.assert_allclose(np.sort(E), np.sort([-J / 4, -J / 4, -J / 4, 3 * J / 4]), rtol=1e-12)
    Sz = total_spin_operators(2)[2].toarray()
    H = hamiltonian_matrix(e)
    assert np.max(np.abs(H @ Sz - Sz @ H)) == 0.0


def test_capacity_limit():
    e = sample_ensemble(13, 1e-3, 1.0, seed=0)
    with pytest.raises(CapacityError, match="DTWA"):
        hamiltonian_matrix(e)
    with pytest.raises(CapacityError):
        propagate(initial_state(0, 0), build_schedule("ideal_toggle", T=4.0, rabi=1.0, h_z=1.0), e)


def test_rabi_oscillation():
    w = TWO_PI * 0.1
    sched = FloquetSchedule((DriveSegment(1.0, w, 0.0),))
    res = propagate(initial_state(0, 0), sched, single_spin(), n_periods=7, samples_per_period=5)
    np.testing.assert_allclose(res.mz, np.cos(w * res.times), atol=1e-12)
    np.testing.assert_allclose(res.my, -np.sin(w * res.times), atol=1e-12)
    assert np.all(res.stderr == 0)


def test_single_spin_at_freezing_rotates_at_quasi_energy_splitting():
    T, w, h = 4.0, TWO_PI * 0.1, TWO_PI * 0.5
    sched = build_schedule("ideal_toggle", T=T, rabi=w, h_z=h)
    e = single_spin()
    mu = floquet_eigensystem(floquet_unitary(sched, e)).quasi_phases
    res = propagate(initial_state(0, 0), sched, e, n_periods=300)
    N = np.arange(301)
    np.testing.assert_allclose(res.mz, np.cos(N * abs(mu[0] - mu[1])), atol=1e-10)
    # the splitting is the stroboscopic rotation angle, ~ 2 (Omega^3 / 4 h^2) T
    assert abs(mu[0] - mu[1]) == pytest.approx(2 * w**3 / (4 * h**2) * T, rel=0.05)


def test_propagate_against_direct_exponentiation():
    e = sample_ensemble(3, 1e-2, 1.0, disorder_width=0.2, seed=5)
    sched = build_schedule("ideal_toggle", T=2.0, rabi=0.8, h_z=1.3, phase=0.4)
    Hp = brute_force_hamiltonian(e, 0.8, 1.3, 0.4)
    Hm = brute_force_hamiltonian(e, 0.8, -1.3, 0.4)
    psi = product_state_vector(initial_state(1.0, 2.0), 3)
    times = np.array([0.0, 0.3, 1.0, 1.7, 2.0, 3.1])
    res = propagate(initial_state(1.0, 2.0), sched, e, times=times)
    for t, m in zip(times, res.m.T):
        k, r = divmod(t, 2.0)
        U = np.linalg.matrix_power(scipy.linalg.expm(-1j * Hm) @ scipy.linalg.expm(-1j * Hp), int(k))
        if r <= 1.0:
            U = scipy.linalg.expm(-1j * Hp * r) @ U
        else:
            U = scipy.linalg.expm(-1j * Hm * (r - 1.0)) @ scipy.linalg.expm(-1j * Hp) @ U
        np.testing.assert_allclose(m, magnetization(U @ psi, 3), atol=1e-10)


def test_frozen_versus_thermalizing_six_spins():
    T = 4.0
    e = sample_ensemble(6, 1e-4, 15.0, seed=0)
    frozen = propagate(initial_state(0, 0), build_schedule("ideal_toggle", T=T, rabi=TWO_PI * 0.05,
                                                           h_z=TWO_PI * 2 / T), e, n_periods=200)
    thermal = propagate(initial_state(0, 0), build_schedule("ideal_toggle", T=T, rabi=TWO_PI * 0.05,
                                                            h_z=TWO_PI * 3 / T), e, n_periods=200)
    assert min(cumulative_time_average(frozen, tf) for tf in (T, 50 * T, 200 * T)) > 0.9
    assert cumulative_time_average(thermal, 200 * T) < 0.3


def test_uncoupled_drive_free_sz_constant():
    e = sample_ensemble(4, 1e-2, 1.0, seed=2)
    sched = build_schedule("ideal_toggle", T=3.0, rabi=0.0, h_z=2.1)
    res = propagate(initial_state(0.4, 0.3), sched, e, n_periods=20, samples_per_period=3)
    np.testing.assert_allclose(res.mz, res.mz[0], atol=1e-12)


def test_energy_conserved_within_segment():
    e = sample_ensemble(4, 1e-2, 1.0, disorder_width=0.3, seed=1)
    seg = DriveSegment(5.0, 0.6, 0.9, 0.2)
    H = hamiltonian_matrix(e, seg.rabi, seg.detuning, seg.phase)
    psi = product_state_vector(initial_state(1.1, 0.5), 4)
    E0 = np.vdot(psi, H @ psi).real
    for t in (0.7, 2.2, 5.0):
        phi = segment_unitary(e, seg, t) @ psi
        assert abs(np.vdot(phi, H @ phi).real - E0) < 1e-9
        assert abs(np.linalg.norm(phi) - 1) < 1e-12


def test_segment_unitary_matches_expm():
    e = sample_ensemble(3, 1e-2, 1.0, seed=9)
    seg = DriveSegment(1.7, 0.5, -0.4, 1.0)
    U = segment_unitary(e, seg)
    ref = scipy.linalg.expm(-1j * 1.7 * brute_force_hamiltonian(e, 0.5, -0.4, 1.0))
    np.testing.assert_allclose(U, ref, atol=1e-12)


def test_floquet_unitary_omega_zero_conserves_sz():
    e = sample_ensemble(4, 1e-2, 1.0, seed=3)
    U = floquet_unitary(build_schedule("ideal_toggle", T=4.0, rabi=0.0, h_z=1.1), e)
    Sz = total_spin_operators(4)[2].toarray()
    assert np.max(np.abs(U @ Sz - Sz @ U)) < 1e-12
    assert np.max(np.abs(U.conj().T @ U - np.eye(16))) < 1e-12


def test_reversed_schedule_gives_transpose_for_real_hamiltonians():
    # With phase 0 every segment Hamiltonian is real symmetric, so each
    # segment unitary is symmetric and reversing the order transposes U.
    # Complex conjugation (time reversal) maps this onto U^dagger.
    e = sample_ensemble(3, 1e-2, 1.0, disorder_width=0.1, seed=4)
    sched = build_schedule("ideal_toggle", T=4.0, rabi=0.3, h_z=1.7)
    U = floquet_unitary(sched, e)
    Ur = floquet_unitary(sched.reversed(), e)
    np.testing.assert_allclose(Ur, U.T, atol=1e-12)
    np.testing.assert_allclose(Ur.conj(), U.conj().T, atol=1e-12)


def test_floquet_eigensystem_invariants():
    e = sample_ensemble(4, 1e-3, 2.0, seed=11)
    U = floquet_unitary(build_schedule("ideal_toggle", T=4.0, rabi=0.6, h_z=2.3), e)
    eig = floquet_eigensystem(U)
    V, mu = eig.eigenvectors, eig.quasi_phases
    assert np.all(mu > -math.pi) and np.all(mu <= math.pi)
    np.testing.assert_allclose(U @ V, V * np.exp(-1j * mu), atol=1e-8)
    np.testing.assert_allclose(V.conj().T @ V, np.eye(16), atol=1e-8)


def test_diagonal_ensemble_of_eigenstate():
    e = sample_ensemble(3, 1e-3, 2.0, seed=2)
    eig = floquet_eigensystem(floquet_unitary(build_schedule("ideal_toggle", T=4.0, rabi=0.5, h_z=2.0), e))
    v = eig.eigenvectors[:, 3]
    Sz = total_spin_operators(3)[2]
    assert diagonal_ensemble_average(v, eig, "sz") == pytest.approx(np.vdot(v, Sz @ v).real, abs=1e-10)


def test_diagonal_ensemble_conserved_sector():
    e = sample_ensemble(3, 1e-3, 2.0, seed=2)
    eig = floquet_eigensystem(floquet_unitary(build_schedule("ideal_toggle", T=4.0, rabi=0.0, h_z=2.0), e))
    with pytest.warns(DegenerateSpectrumWarning):
        value = diagonal_ensemble_average(initial_state(0, 0), eig, "sz")
    assert value == pytest.approx(1.5, abs=1e-12)


def test_diagonal_ensemble_matches_long_time_average_small():
    e = sample_ensemble(3, 1e-3, 3.0, seed=6)
    sched = build_schedule("ideal_toggle", T=4.0, rabi=TWO_PI * 0.2, h_z=TWO_PI * 0.5)
    eig = floquet_eigensystem(floquet_unitary(sched, e))
    state = initial_state(1.0, 0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("error", DegenerateSpectrumWarning)
        de = diagonal_ensemble_average(state, eig, "sx")
    res = propagate(state, sched, e, n_periods=4000)
    assert abs(de) > 0.05
    assert np.mean(res.mx) * 3 / 2 == pytest.approx(de, abs=1e-2)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_diagonal_ensemble_sz_vanishes_by_time_reversal(seed):
    # With phase-0 drives, Theta = (pi rotation about x) * conjugation maps U
    # to U^dagger and Sz to -Sz, so every nondegenerate Floquet eigenstate has
    # <Sz> = 0: the infinite-time stroboscopic average of Sz is zero even at a
    # freezing point, while the x component is not constrained.
    e = sample_ensemble(4, 1e-3, 3.0, seed=seed)
    sched = build_schedule("ideal_toggle", T=4.0, rabi=TWO_PI * 0.2, h_z=TWO_PI * 0.5)
    U = floquet_unitary(sched, e)
    X = np.array([[0, -1j], [-1j, 0]])
    Xn = X
    for _ in range(3):
        Xn = np.kron(Xn, X)
    np.testing.assert_allclose(Xn @ U.conj() @ Xn.conj().T, U.conj().T, atol=1e-12)
    eig = floquet_eigensystem(U)
    assert eig.min_gap() > 1e-3
    Sz = total_spin_operators(4)[2]
    diag = np.einsum("ij,ij->j", eig.eigenvectors.conj(), Sz @ eig.eigenvectors).real
    assert np.max(np.abs(diag)) < 1e-8
    assert abs(diagonal_ensemble_average(initial_state(0, 0), eig, "sz")) < 1e-8


def test_csv_round_trip_has_zero_stderr(tmp_path):
    sched = build_schedule("ideal_toggle", T=4.0, rabi=0.3, h_z=TWO_PI * 0.5)
    res = propagate(initial_state(0, 0), sched, single_spin(), n_periods=2, samples_per_period=10)
    text = res.to_csv(tmp_path / "s.csv")
    assert text.splitlines()[0] == "time_us,mx,my,mz,mx_stderr,my_stderr,mz_stderr"
    from dynfreeze import MagnetizationSeries
    back = MagnetizationSeries.from_csv(tmp_path / "s.csv")
    assert np.array_equal(back.m, res.m) and np.all(back.stderr == 0)
