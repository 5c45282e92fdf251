"""Floquet drive schedules and the closed-form freezing analytics.

A schedule is one period of piecewise-constant segments. Each segment
carries the Hamiltonian

    H = H0 + rabi (cos(phase) Sx + sin(phase) Sy) + detuning Sz

for its duration. The ideal toggle alternates ``+h_z`` and ``-h_z`` every
half period; freezing occurs at ``h_z T = 4 pi k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConstructionError, PreconditionError

SEGMENT_KINDS = ("continuous", "pi_pulse")
SCHEDULE_KINDS = ("ideal_toggle", "with_dd_train", "sensing_df", "sensing_pdd")
PULSE_PHASES = (0.0, 0.0, math.pi, math.pi)  # x, x, -x, -x
SCHEDULE_SCHEMA = "dynfreeze.schedule/1"


@dataclass(frozen=True)
class DriveSegment:
    """Constant drive over ``duration`` (us); rates in rad/us."""

    duration: float
    rabi: float = 0.0
    detuning: float = 0.0
    phase: float = 0.0
    kind: str = "continuous"

    def __post_init__(self):
        if not self.duration > 0:
            raise ConstructionError(f"segment duration must be positive, got {self.duration}")
        if self.kind not in SEGMENT_KINDS:
            raise ConstructionError(f"unknown segment kind {self.kind!r}")
        if self.kind == "pi_pulse" and abs(self.rabi * self.duration - math.pi) > 1e-9:
            raise ConstructionError(
                f"pi pulse needs rabi*duration = pi, got {self.rabi * self.duration!r}"
            )

    @property
    def field(self):
        """Precession vector (rad/us) of a free spin under this segment."""
        return np.array(
            [self.rabi * math.cos(self.phase), self.rabi * math.sin(self.phase), self.detuning]
        )

    def to_dict(self):
        return {
            "duration_us": self.duration,
            "rabi_rad_per_us": self.rabi,
            "detuning_rad_per_us": self.detuning,
            "phase_rad": self.phase,
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["duration_us"], d["rabi_rad_per_us"], d["detuning_rad_per_us"], d["phase_rad"], d["kind"])


@dataclass(frozen=True)
class FloquetSchedule:
    """One drive period as an ordered tuple of segments."""

    segments: tuple
    mode: str = "ideal_toggle"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ConstructionError("a schedule needs at least one segment")

    @property
    def period(self):
        return math.fsum(s.duration for s in self.segments)

    def boundaries(self):
        """Segment start times within the period, plus the period end."""
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    def reversed(self):
        """Same segments in reverse order (the time-reversed protocol)."""
        return replace(self, segments=self.segments[::-1])

    def with_detuning_offset(self, offset):
        """Add ``offset`` to every continuous segment, following its detuning sign.

        Segments with positive detuning get ``+offset``, negative get
        ``-offset``; this shifts a toggled detuning ``h_z`` to ``h_z + offset``.
        Zero-detuning segments take the sign of their half period. Only the
        ideal toggle has a detuning sign that tracks the half period.
        """
        if self.mode != "ideal_toggle":
            raise ConstructionError("detuning offsets are defined for ideal_toggle schedules only")
        out = []
        half = self.period / 2
        t = 0.0
        for seg in self.segments:
            if seg.kind == "continuous":
                sign = np.sign(seg.detuning) or (1.0 if t + seg.duration / 2 < half else -1.0)
                seg = replace(seg, detuning=seg.detuning + sign * offset)
            out.append(seg)
            t += seg.duration
        return replace(self, segments=tuple(out))

    def to_dict(self):
        return {
            "schema": SCHEDULE_SCHEMA,
            "mode": self.mode,
            "period_us": self.period,
            "params": dict(self.params),
            "segments": [s.to_dict() for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEDULE_SCHEMA:
            raise ConstructionError(f"unsupported schedule schema {d.get('schema')!r}")
        return cls(tuple(DriveSegment.from_dict(s) for s in d["segments"]), d["mode"], d.get("params", {}))


# -- closed-form analytics ------------------------------------------------


def freezing_points(T, k_max):
    """Positive freezing detunings ``h_z = 2 pi * 2k / T`` for k = 1..k_max."""
    if T <= 0 or k_max < 1:
        raise ValueError("need T > 0 and k_max >= 1")
    return 4.0 * math.pi * np.arange(1, k_max + 1) / T


def is_freezing_point(h_z, T, tol=1e-9):
    k = h_z * T / (4.0 * math.pi)
    return round(k) != 0 and abs(k - round(k)) <= tol


@dataclass(frozen=True)
class EffectiveHamiltonianCoeffs:
    """Coefficients of Sx and Sy in the zeroth-order effective Hamiltonian.

    H0 enters unchanged, so ``includes_H0`` is always true.
    """

    cx: float
    cy: float
    includes_H0: bool = True


def effective_hamiltonian(omega, h_z, T):
    """Zeroth-order Floquet Hamiltonian of the ideal toggle.

    ``(cx, cy) = 2 omega / (h_z T) * (sin(h_z T / 2), -(1 - cos(h_z T / 2)))``;
    the ``h_z -> 0`` limit is the bare drive ``(omega, 0)``.
    """
    if h_z == 0:
        return EffectiveHamiltonianCoeffs(float(omega), 0.0)
    x = h_z * T / 2.0
    pref = 2.0 * omega / (h_z * T)
    return EffectiveHamiltonianCoeffs(pref * math.sin(x), -pref * (1.0 - math.cos(x)))


def symmetry_breaking_scale(omega, h_z):
    """Coefficient ``omega^3 / (4 h_z^2)`` of the leading Sx term at freezing."""
    if h_z == 0:
        raise ValueError("symmetry-breaking scale is undefined at h_z = 0")
    return omega**3 / (4.0 * h_z**2)


def _check_freezing(h_z, T, tol):
    if not is_freezing_point(h_z, T, tol):
        raise PreconditionError(
            f"h_z*T/(4 pi) = {h_z * T / (4 * math.pi):.6g} is not a nonzero integer; "
            "the kick operator formula only holds at freezing points"
        )


def _check_in_period(t, T):
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12 * T) or np.any(t > T * (1 + 1e-12)):
        raise PreconditionError("time must lie within one period [0, T]")
    return t


def kick_operator(t, omega, h_z, T, tol=1e-9):
    """Leading-order kick operator coefficients ``(kx, ky)`` of Sx and Sy."""
    _check_freezing(h_z, T, tol)
    t = _check_in_period(t, T)
    branch = np.where(t <= T / 2, -1.0, 1.0)
    kx = omega / h_z * np.sin(h_z * t)
    ky = branch * omega / h_z * (1.0 - np.cos(h_z * t))
    if kx.ndim == 0:
        return float(kx), float(ky)
    return kx, ky


def micromotion_prediction(t_star, omega, h_z, T, sz_NT, tol=1e-9):
    """Intra-period magnetization triple driven by the leading kick operator.

    ``sz_NT`` is the stroboscopic per-spin z magnetization; the stroboscopic
    transverse components are assumed relaxed to zero.
    """
    _check_freezing(h_z, T, tol)
    if abs(sz_NT) > 1:
        raise PreconditionError("sz_NT must lie in [-1, 1]")
    t = _check_in_period(t_star, T)
    r = omega / h_z
    one_minus_cos = 1.0 - np.cos(h_z * t)
    sign = np.where(t <= T / 2, 1.0, -1.0)
    mx = sign * r * sz_NT * one_minus_cos
    my = -r * sz_NT * np.sin(h_z * t)
    mz = sz_NT * (1.0 - r**2 * one_minus_cos)
    if np.ndim(mx) == 0:
        return float(mx), float(my), float(mz)
    return mx, my, mz


# -- schedule construction --------------------------------------------------


def _pulse(t_pi, phase):
    return DriveSegment(t_pi, math.pi / t_pi, 0.0, phase, "pi_pulse")


def _pulses_per_half(half, tau, t_pi, extra=0.0):
    unit = 2 * tau + t_pi
    p = (half - extra) / unit
    if p < 1 - 1e-9 or abs(p - round(p)) > 1e-9:
        raise ConstructionError(
            f"half period {half} us is not tiled by pulse units of {unit} us "
            f"(plus {extra} us of toggle pulses): {p:.6g} units"
        )
    return int(round(p))


def _dd_half(p, tau, t_pi, rabi, h_z, phase, half_sign, state):
    """One half period of a DD train: tau, pi, 2 tau, pi, ..., pi, tau.

    ``state`` holds the toggling-frame sign and the running pulse index so
    the phase pattern and sign carry across halves. Free-evolution detuning
    is programmed as ``eps * half_sign * h_z`` so that the toggling frame
    sees ``half_sign * h_z``.
    """
    segs = []

    def free(duration):
        det = state["eps"] * half_sign * h_z
        segs.append(DriveSegment(duration, rabi, det, phase))

    def pulse():
        segs.append(_pulse(t_pi, PULSE_PHASES[state["pulse"] % 4]))
        state["pulse"] += 1
        state["eps"] = -state["eps"]

    free(tau)
    for i in range(p):
        pulse()
        free(tau if i == p - 1 else 2 * tau)
    return segs


def build_schedule(kind, **params):
    """Build one period of a drive protocol.

    Parameters by kind (times in us, rates in rad/us):

    ``ideal_toggle``
        ``T``, ``rabi``, ``h_z``, optional ``phase``.
    ``with_dd_train``
        ``rabi``, ``h_z``, ``tau``, ``t_pi`` and either ``T`` or
        ``pulses_per_half``; each half holds equally spaced pi pulses
        separated by ``2 tau`` of free evolution.
    ``sensing_df``
        as ``with_dd_train`` plus a toggle pi pulse closing each half period.
    ``sensing_pdd``
        ``tau``, ``t_pi``: one four-pulse cell ``x, x, -x, -x`` with no
        Floquet drive; ``T = 8 tau + 4 t_pi``.
    """
    if kind not in SCHEDULE_KINDS:
        raise ConstructionError(f"unknown schedule kind {kind!r}")
    phase = params.get("phase", 0.0)
    if kind == "ideal_toggle":
        T, rabi, h_z = params["T"], params["rabi"], params["h_z"]
        segs = (DriveSegment(T / 2, rabi, h_z, phase), DriveSegment(T / 2, rabi, -h_z, phase))
        return _checked(FloquetSchedule(segs, kind, dict(params)), T)

    tau, t_pi = params["tau"], params["t_pi"]
    if tau <= 0 or t_pi <= 0:
        raise ConstructionError("tau and t_pi must be positive")
    if kind == "sensing_pdd":
        state = {"eps": 1, "pulse": 0}
        segs = _dd_half(4, tau, t_pi, 0.0, 0.0, 0.0, 1.0, state)
        T = 8 * tau + 4 * t_pi
        return _checked(FloquetSchedule(tuple(segs), kind, dict(params)), T)

    rabi, h_z = params["rabi"], params["h_z"]
    toggle = t_pi if kind == "sensing_df" else 0.0
    if "T" in params:
        T = params["T"]
        p = _pulses_per_half(T / 2, tau, t_pi, toggle)
    else:
        p = int(params["pulses_per_half"])
        if p < 1:
            raise ConstructionError("pulses_per_half must be at least 1")
        T = 2 * (p * (2 * tau + t_pi) + toggle)
    state = {"eps": 1, "pulse": 0}
    segs = []
    for half_sign in (1.0, -1.0):
        segs += _dd_half(p, tau, t_pi, rabi, h_z, phase, half_sign, state)
        if toggle:
            segs.append(_pulse(t_pi, PULSE_PHASES[state["pulse"] % 4]))
            state["pulse"] += 1
            state["eps"] = -state["eps"]
    out = dict(params, T=T, pulses_per_half=p)
    return _checked(FloquetSchedule(tuple(segs), kind, out), T)


def _checked(schedule, T):
    if not math.isclose(schedule.period, T, rel_tol=1e-12, abs_tol=0.0):
        raise ConstructionError(f"segments sum to {schedule.period} us, expected T = {T} us")
    return schedule


def filter_toggling_sign(schedule, times):
    """Toggling-frame sign of Sz (+1/-1) at ``times`` within one period.

    During a pi pulse the sign is interpolated as ``cos`` of the rotated angle.
    """
    times = np.asarray(times, dtype=float)
    out = np.ones_like(times)
    b = schedule.boundaries()
    eps = 1.0
    for seg, t0, t1 in zip(schedule.segments, b[:-1], b[1:]):
        inside = (times >= t0) & (times < t1)
        if seg.kind == "pi_pulse":
            out[inside] = eps * np.cos(math.pi * (times[inside] - t0) / seg.duration)
            eps = -eps
        else:
            out[inside] = eps
    out[times >= b[-1]] = eps
    return out
