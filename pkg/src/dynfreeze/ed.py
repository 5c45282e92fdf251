"""Exact state-vector evolution for small ensembles.

Basis states are z-product states indexed so that spin ``i`` is bit
``n - 1 - i`` (spin 0 most significant), with bit value 0 meaning up. The
all-up state is index 0 and ``kron(op_0, ..., op_{n-1})`` matches this order.

Segment Hamiltonians are constant, so their eigen-decompositions are cached
and every exponential is ``V exp(-i E t) V^dagger``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .ensemble import ProductState
from .errors import CapacityError, DegenerateSpectrumWarning, NumericalError
from .series import MagnetizationSeries

ED_MAX_SPINS = 12
NORM_TOL = 1e-6


def _check_capacity(n, max_spins):
    if n > max_spins:
        raise CapacityError(
            f"n={n} spins exceeds the exact-diagonalization limit of {max_spins}; use the DTWA backend"
        )


@lru_cache(maxsize=16)
def _bits(n):
    idx = np.arange(2**n)
    return ((idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1).astype(np.int8)


@lru_cache(maxsize=16)
def total_spin_operators(n):
    """Sparse total spin operators ``(Sx, Sy, Sz)`` with s = sigma / 2."""
    dim = 2**n
    bits = _bits(n)
    sz = 0.5 - bits.astype(float)
    Sz = sp.diags(sz.sum(axis=1)).tocsr()
    rows, cols = [], []
    for i in range(n):
        down = np.nonzero(bits[:, i] == 1)[0]
        rows.append(down ^ (1 << (n - 1 - i)))  # S+ maps down -> up
        cols.append(down)
    rows = np.concatenate(rows) if rows else np.zeros(0, int)
    cols = np.concatenate(cols) if cols else np.zeros(0, int)
    Sp = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(dim, dim))
    Sm = Sp.T.tocsr()
    Sx = (0.5 * (Sp + Sm)).astype(complex).tocsr()
    Sy = (-0.5j * (Sp - Sm)).tocsr()
    return Sx, Sy, Sz.astype(complex)


def hamiltonian_matrix(ensemble, rabi=0.0, detuning=0.0, phase=0.0, max_spins=ED_MAX_SPINS):
    """Dense ``H0 + rabi (cos phase Sx + sin phase Sy) + detuning Sz``."""
    n = ensemble.n
    _check_capacity(n, max_spins)
    dim = 2**n
    bits = _bits(n)
    sz = 0.5 - bits.astype(float)
    J = ensemble.couplings
    diag = sz @ (ensemble.disorder + detuning)
    diag -= 0.5 * np.einsum("bi,ij,bj->b", sz, J, sz)  # sum_{i<j} J sz sz
    H = np.diag(diag).astype(complex)
    idx = np.arange(dim)
    for i in range(n):
        for j in range(i + 1, n):
            if J[i, j] == 0.0:
                continue
            flip = idx[bits[:, i] != bits[:, j]]
            mask = (1 << (n - 1 - i)) | (1 << (n - 1 - j))
            H[flip, flip ^ mask] += 0.5 * J[i, j]
    if rabi != 0.0:
        for i in range(n):
            down = idx[bits[:, i] == 1]
            up = down ^ (1 << (n - 1 - i))
            H[up, down] += 0.5 * rabi * np.exp(-1j * phase)
            H[down, up] += 0.5 * rabi * np.exp(1j * phase)
    return H


def product_state_vector(state, n):
    """State vector of ``n`` copies of a :class:`ProductState`."""
    return reduce(np.kron, [state.spinor] * n) if n > 1 else state.spinor.copy()


def apply_single_spin_unitary(psi, u, n):
    """Apply the same 2x2 unitary ``u`` to every spin of ``psi``."""
    t = psi.reshape((2,) * n)
    for axis in range(n):
        t = np.moveaxis(np.tensordot(u, t, axes=([1], [axis])), 0, axis)
    return t.reshape(-1)


def rotation_2x2(angle, axis):
    """exp(-i angle (axis . sigma) / 2) for a unit 3-vector ``axis``."""
    ax, ay, az = axis
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c - 1j * s * az, -1j * s * (ax - 1j * ay)], [-1j * s * (ax + 1j * ay), c + 1j * s * az]])


def magnetization(psi, n):
    """Per-spin Pauli averages ``(2/n) <S_mu>`` of a normalized state."""
    return np.array([np.vdot(psi, S @ psi).real for S in total_spin_operators(n)]) * 2.0 / n


class _SegmentCache:
    """Eigen-decompositions of segment Hamiltonians for one ensemble."""

    def __init__(self, ensemble, max_spins):
        self.ensemble = ensemble
        self.max_spins = max_spins
        self._eig = {}

    def eig(self, rabi, detuning, phase, z_extra=0.0):
        key = (rabi, detuning + z_extra, phase)
        if key not in self._eig:
            H = hamiltonian_matrix(self.ensemble, rabi, detuning + z_extra, phase, self.max_spins)
            self._eig[key] = np.linalg.eigh(H)
            if len(self._eig) > 4096:
                self._eig.pop(next(iter(self._eig)))
        return self._eig[key]

    def apply(self, psi, rabi, detuning, phase, dt, z_extra=0.0):
        E, V = self.eig(rabi, detuning, phase, z_extra)
        return V @ (np.exp(-1j * E * dt) * (V.conj().T @ psi))

    def unitary(self, rabi, detuning, phase, dt):
        E, V = self.eig(rabi, detuning, phase)
        return (V * np.exp(-1j * E * dt)) @ V.conj().T


def _pieces(schedule, pulse_mode):
    """Expand one period into ``(t_start, duration, rabi, detuning, phase, rotation)``.

    With ``pulse_mode='instant'`` a pi pulse becomes free evolution under H0
    for half its duration, an exact pi rotation, and the other half.
    """
    if pulse_mode not in ("finite", "instant"):
        raise ValueError(f"unknown pulse_mode {pulse_mode!r}")
    out = []
    t = 0.0
    for seg in schedule.segments:
        if seg.kind == "pi_pulse" and pulse_mode == "instant":
            axis = (math.cos(seg.phase), math.sin(seg.phase), 0.0)
            half = seg.duration / 2
            out.append((t, half, 0.0, 0.0, 0.0, None))
            out.append((t + half, 0.0, 0.0, 0.0, 0.0, rotation_2x2(math.pi, axis)))
            out.append((t + half, half, 0.0, 0.0, 0.0, None))
        else:
            out.append((t, seg.duration, seg.rabi, seg.detuning, seg.phase, None))
        t += seg.duration
    return out


class _Evolver:
    """Walks a periodic schedule through absolute time."""

    def __init__(self, schedule, ensemble, pulse_mode="finite", z_field=None, max_step=None,
                 max_spins=ED_MAX_SPINS):
        _check_capacity(ensemble.n, max_spins)
        self.n = ensemble.n
        self.T = schedule.period
        self.pieces = _pieces(schedule, pulse_mode)
        self.cache = _SegmentCache(ensemble, max_spins)
        self.z_field = z_field
        self.max_step = max_step

    def _apply_piece(self, psi, piece, a, b):
        """Evolve over absolute [a, b] inside one piece."""
        _, _, rabi, det, phase, rot = piece
        if rot is not None:
            return apply_single_spin_unitary(psi, rot, self.n)
        if b <= a:
            return psi
        if self.z_field is None:
            return self.cache.apply(psi, rabi, det, phase, b - a)
        nsub = max(1, math.ceil((b - a) / self.max_step - 1e-9))
        h = (b - a) / nsub
        for k in range(nsub):
            z = float(self.z_field(a + (k + 0.5) * h))
            H = hamiltonian_matrix(self.cache.ensemble, rabi, det + z, phase, self.cache.max_spins)
            E, V = np.linalg.eigh(H)
            psi = V @ (np.exp(-1j * E * h) * (V.conj().T @ psi))
        return psi

    def evolve(self, psi, t0, t1):
        """Evolve ``psi`` from absolute time ``t0`` to ``t1``."""
        if t1 < t0:
            raise ValueError("cannot evolve backwards")
        T = self.T
        p = math.floor(t0 / T + 1e-12)
        while True:
            base = p * T
            if base >= t1 - 1e-12 * max(1.0, t1):
                break
            for piece in self.pieces:
                start = base + piece[0]
                end = start + piece[1]
                if piece[5] is not None:
                    # instantaneous rotation: apply if it lies in (t0, t1]
                    if t0 < start <= t1:
                        psi = self._apply_piece(psi, piece, start, start)
                    continue
                a, b = max(start, t0), min(end, t1)
                if b > a + 1e-15 * max(1.0, abs(b)):
                    psi = self._apply_piece(psi, piece, a, b)
            p += 1
        return psi


def _initial_vector(state, n):
    if isinstance(state, ProductState):
        return product_state_vector(state, n)
    psi = np.asarray(state, dtype=complex).copy()
    if psi.shape != (2**n,):
        raise ValueError(f"state vector must have length {2**n}")
    return psi


def propagate(state, schedule, ensemble, n_periods=1, samples_per_period=1, times=None,
              pulse_mode="finite", z_field=None, max_step=None, max_spins=ED_MAX_SPINS):
    """Evolve a state under a periodic schedule and record magnetizations.

    By default samples are taken every ``T / samples_per_period`` from 0 to
    ``n_periods * T``; pass ``times`` for an explicit sorted grid. ``z_field``
    is an optional callable ``t -> detuning`` (rad/us) added to every piece
    and integrated with an exponential midpoint rule on steps of ``max_step``.
    """
    n = ensemble.n
    psi = _initial_vector(state, n)
    if samples_per_period < 1:
        raise ValueError("samples_per_period must be at least 1")
    T = schedule.period
    if times is None:
        times = np.arange(n_periods * samples_per_period + 1) * (T / samples_per_period)
    times = np.asarray(times, dtype=float)
    if z_field is not None and max_step is None:
        max_step = T / 200
    ev = _Evolver(schedule, ensemble, pulse_mode, z_field, max_step, max_spins)
    m = np.empty((3, len(times)))
    t_prev = 0.0
    for k, t in enumerate(times):
        psi = ev.evolve(psi, t_prev, t)
        norm = np.linalg.norm(psi)
        if abs(norm - 1.0) > NORM_TOL:
            raise NumericalError(f"state norm drifted to {norm!r} at t={t} us")
        m[:, k] = magnetization(psi, n)
        t_prev = t
    meta = {
        "backend": "ed",
        "n": n,
        "ensemble": ensemble.fingerprint(),
        "schedule": schedule.mode,
        "period_us": T,
        "pulse_mode": pulse_mode,
    }
    series = MagnetizationSeries(times, m, None, meta)
    series.final_state = psi
    return series


def segment_unitary(ensemble, segment, duration=None, max_spins=ED_MAX_SPINS):
    """exp(-i H_segment t) for ``t = duration`` (default: the segment's own)."""
    H = hamiltonian_matrix(ensemble, segment.rabi, segment.detuning, segment.phase, max_spins)
    E, V = np.linalg.eigh(H)
    t = segment.duration if duration is None else duration
    return (V * np.exp(-1j * E * t)) @ V.conj().T


def floquet_unitary(schedule, ensemble, pulse_mode="finite", max_spins=ED_MAX_SPINS):
    """One-period propagator ``U(T, 0)``: later segments multiply on the left."""
    n = ensemble.n
    _check_capacity(n, max_spins)
    cache = _SegmentCache(ensemble, max_spins)
    U = np.eye(2**n, dtype=complex)
    for _, dur, rabi, det, phase, rot in _pieces(schedule, pulse_mode):
        if rot is not None:
            R = reduce(np.kron, [rot] * n) if n > 1 else rot
            U = R @ U
        elif dur > 0:
            U = cache.unitary(rabi, det, phase, dur) @ U
    err = np.max(np.abs(U.conj().T @ U - np.eye(2**n)))
    if err > 1e-9:
        raise NumericalError(f"Floquet unitary deviates from unitarity by {err:.3g}")
    return U


@dataclass(frozen=True, eq=False)
class FloquetEigensystem:
    """Quasi-phases ``mu_n`` in (-pi, pi] with ``U |mu_n> = exp(-i mu_n) |mu_n>``."""

    quasi_phases: np.ndarray
    eigenvectors: np.ndarray

    def min_gap(self):
        mu = np.sort(self.quasi_phases)
        if len(mu) < 2:
            return math.inf
        gaps = np.diff(np.concatenate([mu, [mu[0] + 2 * math.pi]]))
        return float(gaps.min())


def floquet_eigensystem(U):
    """Eigen-decomposition of a unitary via the complex Schur form.

    The Schur vectors of a normal matrix are orthonormal eigenvectors even
    inside degenerate subspaces.
    """
    Tm, Z = scipy.linalg.schur(U, output="complex")
    lam = np.diag(Tm)
    mu = -np.angle(lam)
    mu[mu <= -math.pi] += 2 * math.pi
    return FloquetEigensystem(mu, Z)


def _observable_matrix(observable, n):
    if isinstance(observable, str):
        key = observable.lower().lstrip("s")
        if key not in ("x", "y", "z"):
            raise ValueError(f"unknown observable tag {observable!r}")
        return total_spin_operators(n)["xyz".index(key)]
    return observable


def diagonal_ensemble_average(initial, eig, observable="sz", n=None, degeneracy_tol=1e-10):
    """Infinite-time average ``sum_n |c_n|^2 <mu_n|O|mu_n>``.

    ``observable`` is a tag (``"sx"``, ``"sy"``, ``"sz"`` for total spin
    components) or a matrix. Degenerate quasi-phases make the value depend
    on the eigenbasis; that case emits :class:`DegenerateSpectrumWarning`.
    """
    dim = eig.eigenvectors.shape[0]
    n = n if n is not None else int(round(math.log2(dim)))
    psi = _initial_vector(initial, n)
    if psi.shape[0] != dim:
        raise ValueError("initial state and eigensystem dimensions differ")
    O = _observable_matrix(observable, n)
    V = eig.eigenvectors
    c = V.conj().T @ psi
    diag = np.einsum("ij,ij->j", V.conj(), O @ V).real
    if eig.min_gap() < degeneracy_tol:
        warnings.warn(
            "degenerate Floquet quasi-phases: diagonal-ensemble value depends on the eigenbasis",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
    return float(np.sum(np.abs(c) ** 2 * diag))
