"""AC-field sensing with dynamical freezing (DF) and periodic dynamical decoupling (PDD).

A resonant ac field ``B(t) = B_ac cos(2 pi f_ac t + alpha)`` adds
``gamma B(t) Sz`` to the Hamiltonian. A pi-pulse train with spacing ``2 tau``
flips the toggling-frame sign of ``Sz`` and rectifies the field into a
static detuning ``h_ac = (2/pi) gamma B_ac`` when synchronized. Two
simulation modes are supported:

``ideal``
    the pulse train is replaced by the rectified detuning. For DF it adds
    to the toggled Floquet detuning (``h_z -> h_z + h_ac``); for PDD it is a
    static z field on each spin.
``explicit``
    finite pi pulses and the oscillating field are simulated directly.

Responses are per-spin-normalized spin components at the readout time:
``m_z`` for DF (initial state ``|up>``) and ``m_x`` for PDD (initial state
along +x, read out after a final pi/2 pulse).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from . import dtwa, ed
from .ensemble import initial_state
from .errors import CapacityError, PreconditionError
from .protocol import build_schedule, filter_toggling_sign
from .units import GAMMA_NV

PROTOCOLS = ("DF", "PDD")
MODES = ("ideal", "explicit")
BACKENDS = ("ed", "dtwa")


@dataclass(frozen=True)
class AcField:
    """``B(t) = amplitude cos(2 pi frequency t + phase)`` in uT, MHz and rad."""

    amplitude: float
    frequency: float
    phase: float = 0.0
    gamma: float = GAMMA_NV

    def value(self, t):
        return self.amplitude * np.cos(2 * math.pi * self.frequency * np.asarray(t) + self.phase)

    def detuning(self, t):
        """Instantaneous z detuning ``gamma B(t)`` in rad/us."""
        return self.gamma * self.value(t)


@dataclass(frozen=True)
class PddBudget:
    """Coherence and overhead budget for the PDD sensitivity formula (times in us)."""

    T2: float
    alpha: float
    C: float
    T_I: float
    T_R: float
    T_d: float

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise PreconditionError(f"PddBudget.{k} must be positive, got {v}")

    @property
    def T_o(self):
        """Per-trial overhead: initialization + readout + dead time."""
        return self.T_I + self.T_R + self.T_d


@dataclass(frozen=True)
class SensingSequence:
    """One sensing protocol.

    ``tau`` is half the inter-pulse spacing, ``t_pi`` the pi-pulse length
    and ``T_s`` the sensing time (all us). DF also needs the Floquet period
    ``T``, Rabi rate ``rabi`` and detuning ``h_z`` (rad/us). ``T_prime`` is
    the effective toggle period entering the ac freezing condition; it
    defaults to ``T``, which is exact in the ideal model.
    """

    protocol: str
    tau: float
    t_pi: float
    T_s: float
    T: float | None = None
    rabi: float = 0.0
    h_z: float = 0.0
    T_prime: float | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise PreconditionError(f"protocol must be one of {PROTOCOLS}")
        if not (self.tau > 0 and self.t_pi > 0 and self.T_s > 0):
            raise PreconditionError("tau, t_pi and T_s must be positive")
        if self.protocol == "DF" and not (self.T and self.T > 0):
            raise PreconditionError("DF sequences need a Floquet period T")

    @property
    def filter_frequency(self):
        return filter_center_frequency(self.tau, self.t_pi)

    @property
    def period(self):
        return self.T if self.protocol == "DF" else 8 * self.tau + 4 * self.t_pi

    @property
    def effective_period(self):
        return self.T_prime if self.T_prime is not None else self.period

    def schedule(self, mode, h_ac=0.0):
        """Drive schedule for ``mode``; ``h_ac`` is the rectified detuning (ideal DF only)."""
        if mode not in MODES:
            raise PreconditionError(f"mode must be one of {MODES}")
        if self.protocol == "PDD":
            if mode == "ideal":
                return build_schedule("ideal_toggle", T=self.period, rabi=0.0, h_z=0.0)
            return build_schedule("sensing_pdd", tau=self.tau, t_pi=self.t_pi)
        if mode == "ideal":
            base = build_schedule("ideal_toggle", T=self.T, rabi=self.rabi, h_z=self.h_z)
            return base.with_detuning_offset(h_ac) if h_ac else base
        return build_schedule("sensing_df", T=self.T, rabi=self.rabi, h_z=self.h_z, tau=self.tau, t_pi=self.t_pi)

    def initial(self):
        return initial_state(0.0, 0.0) if self.protocol == "DF" else initial_state(math.pi / 2, 0.0)

    @property
    def readout(self):
        return "z" if self.protocol == "DF" else "x"

    def to_dict(self):
        return {
            "protocol": self.protocol,
            "tau_us": self.tau,
            "t_pi_us": self.t_pi,
            "T_s_us": self.T_s,
            "T_us": self.T,
            "rabi_rad_per_us": self.rabi,
            "h_z_rad_per_us": self.h_z,
            "T_prime_us": self.T_prime,
            "filter_frequency_MHz": self.filter_frequency,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["protocol"], d["tau_us"], d["t_pi_us"], d["T_s_us"], d.get("T_us"),
                   d.get("rabi_rad_per_us", 0.0), d.get("h_z_rad_per_us", 0.0), d.get("T_prime_us"))


@dataclass
class SensitivityEstimate:
    """Sensitivity ``eta = sigma_s sqrt(T_t) / |slope|``.

    With times in us and fields in uT the value is directly in nT/sqrt(Hz).
    ``T_t`` is stored in us; ``T_t_seconds`` converts.
    """

    T_s: float
    slope: float
    sigma_s: float
    T_t: float
    eta: float
    B_at: float
    region: str
    finite: bool = True

    @property
    def T_t_seconds(self):
        return self.T_t * 1e-6

    def recompute(self):
        return self.sigma_s * math.sqrt(self.T_t) / abs(self.slope) if self.slope else math.inf


# -- closed forms -----------------------------------------------------------------


def filter_center_frequency(tau, t_pi):
    """Filter center ``1 / (4 tau + 2 t_pi)`` in MHz for times in us."""
    if tau <= 0 or t_pi < 0:
        raise PreconditionError("tau must be positive and t_pi non-negative")
    return 1.0 / (4.0 * tau + 2.0 * t_pi)


def rectified_detuning(field_or_amplitude, gamma=GAMMA_NV):
    """Rectified detuning ``(2/pi) gamma B_ac`` in rad/us."""
    if isinstance(field_or_amplitude, AcField):
        gamma = field_or_amplitude.gamma
        field_or_amplitude = field_or_amplitude.amplitude
    return (2.0 / math.pi) * gamma * np.asarray(field_or_amplitude, dtype=float)


def ac_freezing_amplitudes(T_prime, k_max, gamma=GAMMA_NV):
    """Amplitudes ``B_k = 4 pi k * pi / (2 gamma T')`` (uT) with ``h_ac T' = 4 pi k``."""
    if T_prime <= 0:
        raise PreconditionError("T_prime must be positive")
    k = np.arange(1, int(k_max) + 1)
    return 4 * math.pi * k * math.pi / (2.0 * gamma * T_prime)


def sensing_response_coefficient(omega, h_z, B_ac, gamma=GAMMA_NV):
    """Sx coefficient ``(omega / h_z)(2 gamma B_ac / pi)`` of the zeroth-order response."""
    if h_z == 0:
        raise PreconditionError("response coefficient diverges at h_z = 0; simulate directly instead")
    return (omega / h_z) * (2.0 * gamma * B_ac / math.pi)


def pdd_theoretical_sensitivity(T_s, budget, gamma=GAMMA_NV):
    """PDD sensitivity (nT/sqrt(Hz)) limited by stretched-exponential decoherence and overhead."""
    T_s = np.asarray(T_s, dtype=float)
    if np.any(T_s <= 0):
        raise PreconditionError("T_s must be positive")
    decay = np.exp((T_s / budget.T2) ** budget.alpha)
    return (math.pi / (2.0 * gamma)) * decay / budget.C * np.sqrt(T_s + budget.T_o) / T_s


def emulated_sigma(C, n_trials):
    """Standard deviation of a trial mean under readout efficiency ``C``."""
    return 1.0 / (C * math.sqrt(n_trials))


# -- field synchronization ---------------------------------------------------------


def rectified_phase(schedule, field, t_end=None, points_per_us=20000):
    """Single-spin phase ``int gamma B(t) s(t) dt`` with ``s`` the toggling sign.

    Integrated over ``[0, t_end]`` (default one period) on a dense grid; pi
    pulses contribute through the cosine interpolation of the sign.
    """
    T = schedule.period
    t_end = T if t_end is None else t_end
    n = max(2001, int(points_per_us * t_end) | 1)
    t = np.linspace(0.0, t_end, n)
    s = filter_toggling_sign(schedule, np.mod(t, T))
    flips = np.floor(t / T + 1e-12)
    eps_per_period = filter_toggling_sign(schedule, np.array([T]))[0]
    s = s * eps_per_period**flips
    return float(np.trapezoid(field.detuning(t) * s, t))


def rectification_efficiency(schedule, field):
    """Ratio of the per-period rectified phase to ``(2/pi) gamma B_ac T``."""
    ideal = rectified_detuning(field) * schedule.period
    return rectified_phase(schedule, field) / ideal if ideal else math.nan


def optimal_field_phase(schedule, frequency, gamma=GAMMA_NV, n_grid=720):
    """Field phase maximizing the rectified phase for ``schedule`` (scan plus refinement)."""
    alphas = np.linspace(-math.pi, math.pi, n_grid, endpoint=False)
    vals = np.array([rectified_phase(schedule, AcField(1.0, frequency, a, gamma), points_per_us=4000)
                     for a in alphas])
    k = int(np.argmax(vals))
    # the response is sinusoidal in alpha: refine by a three-point parabola
    a0, vm, v0, vp = alphas[k], vals[k - 1], vals[k], vals[(k + 1) % n_grid]
    denom = vm - 2 * v0 + vp
    step = alphas[1] - alphas[0]
    shift = 0.5 * (vm - vp) / denom * step if denom else 0.0
    return float((a0 + shift + math.pi) % (2 * math.pi) - math.pi)


# -- simulation --------------------------------------------------------------------


@dataclass
class SensingResponse:
    """Responses over amplitudes x sensing times."""

    amplitudes: np.ndarray
    T_s: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    metadata: dict = field(default_factory=dict)

    def curve(self, T_s):
        j = int(np.argmin(np.abs(self.T_s - T_s)))
        return self.amplitudes, self.mean[:, j], self.stderr[:, j]

    def to_csv(self, path=None):
        lines = ["B_ac_uT,Ts_us,Sz_mean,Sz_stderr"]
        for i, B in enumerate(self.amplitudes):
            for j, ts in enumerate(self.T_s):
                lines.append(",".join(repr(float(v)) for v in (B, ts, self.mean[i, j], self.stderr[i, j])))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _check_times(sequence, T_s):
    T = sequence.period
    T_s = np.atleast_1d(np.asarray(T_s, dtype=float))
    k = T_s / T
    if np.any(np.abs(k - np.round(k)) > 1e-9 * np.maximum(k, 1)) or np.any(T_s <= 0):
        raise PreconditionError(f"sensing times must be positive multiples of the period {T} us")
    return T_s


def sensing_sweep(sequence, amplitudes, ensemble, backend="ed", mode="ideal", T_s=None, frequency=None,
                  phase=0.0, gamma=GAMMA_NV, n_traj=1000, seed=0, dt=None, workers=1, pulse_mode=None,
                  phase_space="mixed"):
    """Response at each field amplitude (uT) and sensing time.

    ``frequency`` defaults to the filter center; ``phase`` is the field
    phase used in explicit mode. ``phase_space`` is passed to
    :func:`dynfreeze.dtwa.sample_initial`. DTWA runs every amplitude on the same
    initial trajectories, so neighbouring points are correlated.
    """
    if backend not in BACKENDS:
        raise PreconditionError(f"backend must be one of {BACKENDS}")
    if mode not in MODES:
        raise PreconditionError(f"mode must be one of {MODES}")
    if backend == "ed" and ensemble.n > ed.ED_MAX_SPINS:
        raise CapacityError(f"n={ensemble.n} exceeds the ED limit of {ed.ED_MAX_SPINS}; use backend='dtwa'")
    amplitudes = np.atleast_1d(np.asarray(amplitudes, dtype=float))
    T_s = _check_times(sequence, sequence.T_s if T_s is None else T_s)
    frequency = sequence.filter_frequency if frequency is None else frequency
    times = np.concatenate(([0.0], T_s))
    comp = "xyz".index(sequence.readout)
    state = sequence.initial()

    schedules, extra = [], None
    if mode == "ideal":
        h_ac = rectified_detuning(amplitudes, gamma)
        if sequence.protocol == "DF":
            schedules = [sequence.schedule("ideal", float(h)) for h in h_ac]
        else:
            base = sequence.schedule("ideal")
            schedules = [base] * len(amplitudes)
            extra = _StaticZ(h_ac)
    else:
        base = sequence.schedule("explicit")
        schedules = [base] * len(amplitudes)
        extra = _AcZ(amplitudes, frequency, phase, gamma)
    pulse_mode = pulse_mode or ("finite" if mode == "explicit" else "instant")

    mean = np.empty((len(amplitudes), len(T_s)))
    err = np.zeros_like(mean)
    if backend == "ed":
        max_step = None if extra is None else (dt or sequence.period / 400)
        for g, sched in enumerate(schedules):
            z = None if extra is None else extra.single(g)
            res = ed.propagate(state, sched, ensemble, times=times, pulse_mode=pulse_mode, z_field=z,
                               max_step=max_step)
            mean[g] = res.m[comp, 1:]
    else:
        batch = dtwa.sample_initial(state, ensemble.n, n_traj, seed, phase_space)
        out = dtwa.evolve_many(batch, ensemble, schedules, times, dt=dt, pulse_mode=pulse_mode,
                               extra_z=extra, workers=workers)
        for g, res in enumerate(out):
            mean[g] = res.m[comp, 1:]
            err[g] = res.stderr[comp, 1:]
    meta = {
        "protocol": sequence.protocol,
        "mode": mode,
        "backend": backend,
        "frequency_MHz": frequency,
        "field_phase_rad": phase,
        "readout": sequence.readout,
        "n": ensemble.n,
        "ensemble": ensemble.fingerprint(),
        "sequence": sequence.to_dict(),
    }
    if backend == "dtwa":
        meta.update(n_traj=n_traj, seed=seed, phase_space=phase_space)
    return SensingResponse(amplitudes, T_s, mean, err, meta)


def simulate_sensing(sequence, ac_field, ensemble, backend="ed", mode="ideal", **kw):
    """Response (and standard error) at ``sequence.T_s`` for one field."""
    res = sensing_sweep(sequence, [ac_field.amplitude], ensemble, backend, mode, T_s=[sequence.T_s],
                        frequency=ac_field.frequency, phase=ac_field.phase, gamma=ac_field.gamma, **kw)
    return float(res.mean[0, 0]), float(res.stderr[0, 0])


class _StaticZ:
    """Picklable per-group constant z detuning."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __call__(self, t):
        return self.values

    def single(self, g):
        v = float(self.values[g])
        return _Const(v)


class _Const:
    def __init__(self, v):
        self.v = v

    def __call__(self, t):
        return self.v


class _AcZ:
    """Picklable per-group oscillating z detuning ``gamma B_g cos(2 pi f t + alpha)``."""

    def __init__(self, amplitudes, frequency, phase, gamma):
        self.amplitudes = np.asarray(amplitudes, dtype=float)
        self.frequency, self.phase, self.gamma = frequency, phase, gamma

    def __call__(self, t):
        return self.gamma * self.amplitudes * math.cos(2 * math.pi * self.frequency * t + self.phase)

    def single(self, g):
        return AcField(float(self.amplitudes[g]), self.frequency, self.phase, self.gamma).detuning


# -- sensitivity ----------------------------------------------------------------------


def response_slope(amplitudes, response):
    """Slope after a centered three-point moving average (interior points only)."""
    B = np.asarray(amplitudes, dtype=float)
    y = np.asarray(response, dtype=float)
    smooth = ndimage.uniform_filter1d(y, 3, mode="nearest")
    slope = np.gradient(smooth, B)
    slope[[0, -1]] = np.nan  # edges are smoothed one-sidedly
    return slope


def region_mask(amplitudes, region, freezing_amplitudes=(), half_width=None):
    """Boolean mask selecting ``near_freezing``, ``away`` or ``all`` points.

    ``near_freezing`` keeps points within ``half_width`` (uT) of any
    freezing amplitude (either sign); ``away`` is the complement.
    """
    B = np.asarray(amplitudes, dtype=float)
    if region == "all":
        return np.ones(B.shape, bool)
    fa = np.abs(np.asarray(freezing_amplitudes, dtype=float))
    if fa.size == 0 or half_width is None:
        raise PreconditionError("region selection needs freezing amplitudes and a half width")
    near = np.min(np.abs(np.abs(B)[:, None] - fa[None, :]), axis=1) <= half_width
    if region == "near_freezing":
        return near
    if region == "away":
        return ~near
    raise PreconditionError(f"unknown region {region!r}")


def sensitivity_from_curve(amplitudes, response, sigma, T_s, overhead, n_trials, region="all",
                           freezing_amplitudes=(), half_width=None):
    """Best sensitivity along a response curve.

    ``sigma`` is the standard deviation of the trial-mean response (scalar
    or per point). ``overhead`` is a :class:`PddBudget` or a per-trial
    overhead time in us. The slope is maximized over the selected region,
    and the total integration time is ``(T_s + T_o) * n_trials``.
    """
    B = np.asarray(amplitudes, dtype=float)
    if len(B) < 5:
        raise PreconditionError("need at least 5 curve points")
    order = np.argsort(B)
    B = B[order]
    y = np.asarray(response, dtype=float)[order]
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), B.shape)[order]
    T_o = overhead.T_o if isinstance(overhead, PddBudget) else float(overhead)
    T_t = (T_s + T_o) * n_trials
    slope = response_slope(B, y)
    mask = region_mask(B, region, freezing_amplitudes, half_width) & np.isfinite(slope)
    if not np.any(mask):
        raise PreconditionError(f"no interior curve points in region {region!r}")
    idx = np.nonzero(mask)[0]
    k = int(idx[np.argmax(np.abs(slope[idx]))])
    s = float(slope[k])
    if s == 0.0:
        return SensitivityEstimate(T_s, 0.0, float(sig[k]), T_t, math.inf, float(B[k]), region, False)
    eta = float(sig[k]) * math.sqrt(T_t) / abs(s)
    return SensitivityEstimate(T_s, s, float(sig[k]), T_t, eta, float(B[k]), region, True)
