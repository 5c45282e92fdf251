"""Post-processing: reference normalization, time averages, spectra and fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, signal

from .errors import DegenerateSpectrumWarning, FitError, PreconditionError
from .protocol import micromotion_prediction
from .series import MagnetizationSeries

REFERENCE_FLOOR = 0.05
_GRID_RTOL = 1e-6


# -- reference normalization and averages ------------------------------------


def normalize_reference(signal_series, reference, floor=REFERENCE_FLOOR):
    """Divide every component by the reference ``m_z`` sample by sample.

    The reference is the same sequence run without the Floquet drive; it
    removes decay caused by pulse imperfections. Samples where the
    reference falls below ``floor`` are set to NaN and flagged in the
    returned series' ``invalid`` mask instead of being divided.
    """
    if signal_series.times.shape != reference.times.shape or not np.allclose(
        signal_series.times, reference.times, rtol=1e-12, atol=1e-12
    ):
        raise PreconditionError("signal and reference must share the same time grid")
    r = reference.mz
    invalid = ~(r >= floor)
    safe = np.where(invalid, 1.0, r)
    m = signal_series.m / safe
    rel_r = np.where(invalid, 0.0, reference.stderr[2] / safe)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel_s = np.where(signal_series.m != 0, signal_series.stderr / np.abs(signal_series.m), 0.0)
    err = np.abs(m) * np.sqrt(rel_s**2 + rel_r**2)
    err = np.where(signal_series.m == 0, signal_series.stderr / safe, err)
    m[:, invalid] = np.nan
    err[:, invalid] = np.nan
    meta = dict(signal_series.metadata, normalized=True, reference_floor=floor)
    out = MagnetizationSeries(signal_series.times, m, err, meta)
    out.invalid = invalid
    return out


def _values(data, component):
    """Return ``(x, y)`` from a series or an ``(x, y)`` pair."""
    if isinstance(data, MagnetizationSeries):
        return data.times, data.component(component)
    x, y = data
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def cumulative_average_curve(series, component="z"):
    """Running average ``(1/t) int_{t0}^{t} m dt'`` at every sample (NaN at t0)."""
    t, y = _values(series, component)
    integral = integrate.cumulative_trapezoid(y, t, initial=0.0)
    span = t - t[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(span > 0, integral / np.where(span > 0, span, 1.0), np.nan)


def cumulative_time_average(series, t_f, component="z"):
    """Trapezoidal time average of one component from the first sample to ``t_f``.

    Series are expected to start at t = 0; ``t_f`` between grid points is
    handled by linear interpolation of the last interval.
    """
    t, y = _values(series, component)
    if len(t) < 2 or t_f < t[1] or t_f > t[-1] * (1 + 1e-12):
        raise PreconditionError(f"t_f={t_f} us must lie in [{t[1] if len(t) > 1 else 'n/a'}, {t[-1]}]")
    k = int(np.searchsorted(t, t_f, side="right"))
    ts, ys = t[:k], y[:k]
    if ts[-1] < t_f:
        yf = np.interp(t_f, t, y)
        ts, ys = np.append(ts, t_f), np.append(ys, yf)
    return float(np.trapezoid(ys, ts) / (t_f - t[0]))


# -- spectra -----------------------------------------------------------------


@dataclass
class Spectrum:
    """One-sided DFT of the mean-subtracted components inside a time window.

    ``amplitude`` is normalized so that ``sum(amplitude**2)`` equals the
    signal energy ``sum(x**2)`` of the (tapered) window; ``tone`` is the
    single-sided sinusoid amplitude ``2 |X_k| / N`` (``|X_0| / N`` at DC).
    ``peaks`` maps each component to ``(frequency MHz, amplitude)`` pairs in
    decreasing amplitude.
    """

    frequencies: np.ndarray
    amplitude: dict
    tone: dict
    peaks: dict
    n_samples: int
    window: tuple
    bin_width: float
    energy: dict = field(default_factory=dict)

    def dominant(self, component):
        p = self.peaks[component]
        return p[0][0] if p else None

    def tone_at(self, component, frequency):
        """Sinusoid amplitude at the bin nearest ``frequency``."""
        k = int(np.argmin(np.abs(self.frequencies - frequency)))
        return float(self.tone[component][k])

    def to_records(self):
        return {
            "window_us": list(self.window),
            "bin_width_MHz": self.bin_width,
            "peaks": {c: [{"frequency_MHz": f, "amplitude": a} for f, a in p] for c, p in self.peaks.items()},
        }


def spectrum(series, window=None, components="xyz", prominence=0.1, taper=None):
    """Discrete Fourier spectrum of ``series`` over the half-open window [t0, t1).

    Peaks are local maxima whose prominence exceeds ``prominence`` times
    the largest amplitude of that component. An identically zero component
    yields no peaks.
    """
    t = series.times
    step = float(np.max(np.diff(t))) if len(t) > 1 else 0.0
    t0, t1 = window if window is not None else (t[0], t[-1] + step)
    if t0 < t[0] - 1e-9 or t1 > t[-1] + step + 1e-9 or t1 <= t0:
        raise PreconditionError(f"window [{t0}, {t1}) outside series span [{t[0]}, {t[-1]}]")
    sel = (t >= t0 - 1e-9) & (t < t1 - 1e-9)
    ts = t[sel]
    if len(ts) < 4:
        raise PreconditionError("window holds fewer than 4 samples")
    dts = np.diff(ts)
    dt = float(np.mean(dts))
    if np.max(np.abs(dts - dt)) > _GRID_RTOL * dt:
        raise PreconditionError("spectrum needs a uniform grid inside the window; resample first")
    N = len(ts)
    freqs = np.fft.rfftfreq(N, dt)
    w = np.full(len(freqs), 2.0)
    w[0] = 1.0
    if N % 2 == 0:
        w[-1] = 1.0
    if taper is None:
        win = np.ones(N)
    elif taper == "hann":
        win = signal.windows.hann(N, sym=False)
    else:
        raise ValueError(f"unknown taper {taper!r}")
    amplitude, tone, peaks, energy = {}, {}, {}, {}
    for c in components:
        x = series.component(c)[sel]
        x = (x - x.mean()) * win
        X = np.fft.rfft(x)
        amp = np.abs(X) * np.sqrt(w / N)
        amplitude[c] = amp
        tone[c] = np.abs(X) * w / N
        energy[c] = float(np.sum(x**2))
        top = amp.max() if len(amp) else 0.0
        if top <= 1e-12 * max(1.0, math.sqrt(N)):
            peaks[c] = []
            continue
        # pad so that edge bins can be peaks
        idx, props = signal.find_peaks(np.concatenate(([0.0], amp, [0.0])), prominence=prominence * top)
        idx = idx - 1
        order = np.argsort(-amp[idx])
        peaks[c] = [(float(freqs[i]), float(amp[i])) for i in idx[order]]
    return Spectrum(freqs, amplitude, tone, peaks, N, (t0, t1), 1.0 / (N * dt), energy)


# -- fitting -------------------------------------------------------------------


@dataclass
class FitResult:
    """Least-squares fit outcome.

    ``errors`` are one-sigma uncertainties from ``s^2 (J^T J)^-1`` at the
    optimum, with ``s^2`` the residual variance; they vanish only when the
    data are fitted exactly. ``degenerate`` marks parameters the data do not
    identify (listed in ``unidentified``).
    """

    model: str
    params: dict
    errors: dict
    residual_norm: float
    initial_residual_norm: float
    n_points: int
    degenerate: bool = False
    unidentified: tuple = ()
    covariance: np.ndarray = None

    def __getitem__(self, key):
        return self.params[key]

    def to_record(self):
        return {
            "model": self.model,
            "params": dict(self.params),
            "errors": dict(self.errors),
            "residual_norm": self.residual_norm,
            "n_points": self.n_points,
            "degenerate": self.degenerate,
            "unidentified": list(self.unidentified),
        }


def _jacobian(fun, p, scale):
    p = np.asarray(p, dtype=float)
    cols = []
    for i in range(len(p)):
        h = 1e-6 * max(abs(p[i]), scale[i])
        dp = np.zeros_like(p)
        dp[i] = h
        cols.append((fun(p + dp) - fun(p - dp)) / (2 * h))
    return np.column_stack(cols)


def _nelder_mead(residuals, starts, maxiter=20000):
    """Multistart Nelder-Mead on the sum of squares.

    Returns ``(best q, rss at best q, best rss among the starts)``. Each
    start is restarted from its optimum until it stops improving, which
    shakes the simplex out of premature convergence.
    """
    def cost(q):
        r = residuals(q)
        v = float(r @ r)
        return v if np.isfinite(v) else np.inf

    opts = {"maxiter": maxiter, "maxfev": 2 * maxiter, "xatol": 1e-12, "fatol": 1e-24}
    init_costs = [cost(np.asarray(s, dtype=float)) for s in starts]
    best_q, best_c = np.asarray(starts[int(np.argmin(init_costs))], dtype=float), min(init_costs)
    for s in starts:
        q, c = np.asarray(s, dtype=float), cost(np.asarray(s, dtype=float))
        for _ in range(4):
            res = optimize.minimize(cost, q, method="Nelder-Mead", options=dict(opts, adaptive=len(q) > 3))
            improved = res.fun < c * (1 - 1e-10)
            if res.fun <= c:
                q, c = res.x, float(res.fun)
            if not improved:
                break
        if c < best_c:
            best_q, best_c = q, c
    return best_q, best_c, min(init_costs)


def _finish(model, names, residuals, natural, rss, rss0, n, scale):
    """Package a fit with covariance ``s^2 (J^T J)^-1`` in natural parameters."""
    natural = np.asarray(natural, dtype=float)
    Jm = _jacobian(residuals.natural, natural, scale)
    s2 = rss / max(n - len(natural), 1)
    JTJ = Jm.T @ Jm
    singular = (not np.all(np.isfinite(JTJ))) or np.linalg.cond(JTJ) > 1e14
    cov = s2 * np.linalg.pinv(JTJ)
    err = np.sqrt(np.abs(np.diag(cov)))
    return FitResult(
        model,
        {k: float(v) for k, v in zip(names, natural)},
        {k: float(v) for k, v in zip(names, err)},
        math.sqrt(rss),
        math.sqrt(rss0),
        n,
        bool(singular),
        tuple(names) if singular else (),
        cov,
    )


class _Residuals:
    """Residual function in optimizer coordinates with a natural-parameter twin."""

    def __init__(self, model, x, y, sigma, to_natural):
        self.model, self.x, self.y = model, x, y
        self.w = 1.0 / np.asarray(sigma, dtype=float) if sigma is not None else 1.0
        self.to_natural = to_natural

    def __call__(self, q):
        return (self.model(self.x, *self.to_natural(q)) - self.y) * self.w

    def natural(self, p):
        return (self.model(self.x, *p) - self.y) * self.w


def stretched_exponential(t, T2, alpha):
    return np.exp(-np.power(np.clip(t, 0.0, None) / T2, alpha))


def fit_stretched_exponential(data, component="z", alpha=None, sigma=None):
    """Fit ``exp(-(t/T2)^alpha)``; pass ``alpha`` to hold the exponent fixed.

    Raises :class:`FitError` when the data show no decay over their span.
    """
    t, y = _values(data, component)
    if len(t) < 6:
        raise PreconditionError("stretched-exponential fit needs at least 6 samples")
    span = float(t.max() - t.min())
    if not np.all(np.isfinite(y)):
        raise PreconditionError("data contain non-finite values")
    if y.max() - y.min() < 1e-9 or np.mean(y[-max(1, len(y) // 4):]) >= np.mean(y[: max(1, len(y) // 4)]):
        raise FitError("no decay in data: stretched exponential is unidentifiable",
                       residual_norm=float(np.linalg.norm(y - 1.0)))
    # initial T2 from the 1/e crossing (or extrapolated from the log slope)
    below = np.nonzero(y < math.exp(-1))[0]
    if len(below):
        T2_0 = float(t[below[0]])
    else:
        pos = y > 0
        slope = np.polyfit(t[pos], np.log(y[pos]), 1)[0]
        T2_0 = -1.0 / slope if slope < 0 else 10 * span
    T2_0 = max(T2_0, span / len(t))

    if alpha is None:
        to_nat = lambda q: (math.exp(q[0]), math.exp(q[1]))
        res = _Residuals(stretched_exponential, t, y, sigma, to_nat)
        starts = [(math.log(T2_0), math.log(a)) for a in (0.5, 1.0, 1.5)]
        names = ("T2", "alpha")
    else:
        a_fix = float(alpha)
        model = lambda tt, T2: stretched_exponential(tt, T2, a_fix)
        to_nat = lambda q: (math.exp(q[0]),)
        res = _Residuals(model, t, y, sigma, to_nat)
        starts = [(math.log(T2_0),), (math.log(T2_0 * 2),), (math.log(T2_0 / 2),)]
        names = ("T2",)
    q, rss, rss0 = _nelder_mead(res, starts)
    natural = to_nat(q)
    if natural[0] > 1e3 * span:
        raise FitError(f"fit did not converge to a decay (T2={natural[0]:.3g} us over span {span:.3g} us)",
                       residual_norm=math.sqrt(rss))
    out = _finish("stretched_exponential", names, res, natural, rss, rss0, len(t),
                  [max(abs(v), 1e-3) for v in natural])
    if alpha is not None:
        out.params["alpha"] = float(alpha)
        out.errors["alpha"] = 0.0
    return out


def decaying_sinusoid(t, amplitude, frequency, phase, rate, offset):
    return amplitude * np.exp(-rate * t) * np.cos(2 * math.pi * frequency * t + phase) + offset


def _peak_frequency(t, y):
    """Dominant frequency (cycles per unit t) of ``y`` via a zero-padded DFT."""
    tu = np.linspace(t[0], t[-1], len(t))
    yu = np.interp(tu, t, y) - np.mean(y)
    dt = tu[1] - tu[0]
    nfft = 8 * len(tu)
    amp = np.abs(np.fft.rfft(yu, nfft))
    f = np.fft.rfftfreq(nfft, dt)
    k = int(np.argmax(amp[1:]) + 1) if len(amp) > 1 else 0
    return float(f[k]), 1.0 / (len(tu) * dt)


def fit_decaying_sinusoid(data, component="z", sigma=None):
    """Fit ``A exp(-t/tau) cos(2 pi f t + phi) + c``.

    Reported parameters: ``amplitude``, ``frequency`` (inverse time units of
    the abscissa, MHz for us), ``phase``, ``decay_time`` (inf when no decay)
    and ``offset``; ``rate = 1/decay_time`` is also given. Zero-amplitude
    data leave the frequency unidentified and set ``degenerate``.
    """
    t, y = _values(data, component)
    if len(t) < 6:
        raise PreconditionError("sinusoid fit needs at least 6 samples")
    span = float(t.max() - t.min())
    c0 = float(np.mean(y))
    A0 = float(np.max(np.abs(y - c0)))
    f0, df = _peak_frequency(t, y)
    if A0 <= 1e-12 * max(1.0, abs(c0)):
        return FitResult("decaying_sinusoid",
                         {"amplitude": 0.0, "frequency": float("nan"), "phase": float("nan"),
                          "rate": float("nan"), "decay_time": float("nan"), "offset": c0},
                         {k: float("nan") for k in ("amplitude", "frequency", "phase", "rate", "decay_time", "offset")},
                         float(np.linalg.norm(y - c0)), float(np.linalg.norm(y - c0)), len(t), True,
                         ("frequency", "phase", "rate"))
    to_nat = lambda q: tuple(q)
    res = _Residuals(decaying_sinusoid, t, y, sigma, to_nat)
    starts = [
        (A0, f, ph, 0.5 / span, c0)
        for f in (f0, max(f0 - df / 4, 0.0), f0 + df / 4)
        for ph in np.linspace(-math.pi, math.pi, 4, endpoint=False)
    ]
    q, rss, rss0 = _nelder_mead(res, starts)
    A, f, ph, rate, c = q
    if A < 0:  # canonical sign
        A, ph = -A, ph + math.pi
    ph = (ph + math.pi) % (2 * math.pi) - math.pi
    q = np.array([A, f, ph, rate, c])
    rss = float(res(q) @ res(q))
    out = _finish("decaying_sinusoid", ("amplitude", "frequency", "phase", "rate", "offset"), res, q, rss,
                  rss0, len(t), [max(A0, 1e-6), max(df, 1e-9), 1.0, max(1.0 / span, 1e-9), max(A0, 1e-6)])
    out.params["decay_time"] = float(1.0 / rate) if rate != 0 else math.inf
    out.errors["decay_time"] = float(out.errors["rate"] / rate**2) if rate != 0 else math.inf
    if not out.degenerate and abs(A) <= 3 * out.errors["amplitude"]:
        out.degenerate = True
        out.unidentified = ("frequency", "phase", "rate")
    return out


def gaussian(x, center, width, amplitude, offset):
    return amplitude * np.exp(-0.5 * ((x - center) / width) ** 2) + offset


def fit_gaussian(x, y=None, sigma=None):
    """Fit ``a exp(-(x - x0)^2 / (2 w^2)) + c`` to a peak (or dip).

    Accepts ``fit_gaussian(x, y)`` or ``fit_gaussian((x, y))``. For flat
    data the amplitude is ~0 and the center and width are flagged as
    unidentified via ``degenerate``.
    """
    if y is None:
        x, y = x
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 5:
        raise PreconditionError("Gaussian fit needs at least 5 points")
    order = np.argsort(x)
    x, y = x[order], y[order]
    span = float(x[-1] - x[0])
    base = float(np.median(np.concatenate((y[:2], y[-2:]))))
    dev = y - base
    if np.max(np.abs(dev)) <= 1e-12 * max(1.0, abs(base)) and np.ptp(y) <= 1e-12 * max(1.0, abs(base)):
        return FitResult("gaussian",
                         {"center": float("nan"), "width": float("nan"), "amplitude": 0.0, "offset": float(np.mean(y))},
                         {"center": float("nan"), "width": float("nan"), "amplitude": 0.0, "offset": 0.0},
                         0.0, 0.0, len(x), True, ("center", "width"))
    k = int(np.argmax(np.abs(dev)))
    a0 = float(dev[k])
    half = np.abs(dev) >= abs(a0) / 2
    w0 = max(float(np.sum(half)) * span / max(len(x) - 1, 1) / 2.355, span / (4 * len(x)))
    to_nat = lambda q: (q[0], abs(q[1]), q[2], q[3])
    res = _Residuals(gaussian, x, y, sigma, to_nat)
    starts = [(x[k], w0 * s, a0, base) for s in (0.5, 1.0, 2.0)]
    q, rss, rss0 = _nelder_mead(res, starts)
    q = np.array(to_nat(q))
    out = _finish("gaussian", ("center", "width", "amplitude", "offset"), res, q, rss, rss0, len(x),
                  [max(span, 1e-9), max(w0, 1e-9), max(abs(a0), 1e-9), max(abs(a0), 1e-9)])
    if not out.degenerate and abs(out.params["amplitude"]) <= 3 * out.errors["amplitude"]:
        out.degenerate = True
        out.unidentified = ("center", "width")
    return out


# -- micromotion -----------------------------------------------------------------


@dataclass
class MicromotionFit:
    """Measured vs leading-order micromotion amplitudes.

    ``measured`` and ``predicted`` hold the x and y amplitudes (coefficient
    of the kick-operator shape) and the z modulation depth (peak to peak),
    all referenced to the stroboscopic ``sz`` in the window.
    """

    sz: float
    measured: dict
    predicted: dict

    @property
    def ratios(self):
        return {k: self.measured[k] / self.predicted[k] for k in self.measured}


def fit_micromotion(series, omega, h_z, T, window):
    """Project windowed data onto the kick-operator micromotion shapes.

    Within each period the leading-order prediction is
    ``m_x = +-(omega/h) sz (1 - cos h t*)``, ``m_y = -(omega/h) sz sin h t*``
    and ``m_z = sz (1 - (omega/h)^2 (1 - cos h t*))``. Each component is
    regressed on its shape plus a constant by linear least squares.
    """
    t0, t1 = window
    sel = (series.times >= t0 - 1e-9) & (series.times < t1 - 1e-9)
    t = series.times[sel]
    if len(t) < 4:
        raise PreconditionError("window holds fewer than 4 samples")
    tstar = t - T * np.floor(t / T + 1e-9)
    tstar = np.clip(tstar, 0.0, T)
    shape = np.stack(micromotion_prediction(tstar, omega, h_z, T, 1.0))
    shape[2] -= 1.0
    strob = np.abs(tstar) < 1e-9 * T
    sz = float(np.mean(series.mz[sel][strob])) if np.any(strob) else float(np.mean(series.mz[sel]))
    ratio = omega / h_z
    measured, predicted = {}, {}
    for i, c in enumerate("xyz"):
        A = np.column_stack((shape[i], np.ones_like(t)))
        coef, *_ = np.linalg.lstsq(A, series.m[i][sel], rcond=None)
        if c == "z":
            measured[c] = 2.0 * ratio**2 * abs(coef[0])
            predicted[c] = 2.0 * ratio**2 * abs(sz)
        else:
            measured[c] = ratio * abs(coef[0])
            predicted[c] = ratio * abs(sz)
    if abs(sz) < 1e-12:
        warnings.warn("stroboscopic sz vanishes; micromotion amplitudes are zero", DegenerateSpectrumWarning)
    return MicromotionFit(sz, measured, predicted)
