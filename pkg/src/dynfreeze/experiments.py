"""Declarative run configurations and the experiment runner.

A run configuration is a JSON document whose numeric fields carry their
unit in the name suffix (``_us``, ``_MHz``, ``_uT``, ``_nm``, ``_rad``).
Frequencies in MHz are ordinary frequencies; they are converted to angular
rates internally. Every run is seeded explicitly.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import platform
import time
from importlib import metadata
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__, analysis, dtwa, ed, sensing
from .ensemble import SpinEnsemble, initial_state, sample_ensemble
from .errors import ConfigError
from .protocol import build_schedule
from .series import MagnetizationSeries
from .units import TWO_PI, mhz_to_angular

RUN_SCHEMA_ID = "dynfreeze.run/1"

EXPERIMENTS = {
    "freezing_spectrum": "stroboscopic m_z and cumulative averages over a grid of h_z T / 2 pi",
    "micromotion": "intra-period magnetization, its spectrum and the kick-operator amplitude fit",
    "long_time_decay": "stroboscopic m_z decay and half-times for (Rabi, h_z T / 2 pi) pairs",
    "sensing_sweep": "DF or PDD response versus ac amplitude and sensing time",
    "sensitivity_table": "sensing sweep reduced to sensitivities per sensing time and region",
    "coherence_fit": "PDD coherence decay with a stretched-exponential fit",
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_grid = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
        {
            "type": "object",
            "properties": {"start": _num, "stop": _num, "step": _pos},
            "required": ["start", "stop", "step"],
            "additionalProperties": False,
        },
    ]
}

RUN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema": {"const": RUN_SCHEMA_ID},
        "experiment": {"enum": sorted(EXPERIMENTS)},
        "backend": {"enum": ["ed", "dtwa"]},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "description": {"type": "string"},
        "ensemble": {
            "type": "object",
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "density_per_nm3": _pos,
                "min_distance_nm": _nonneg,
                "disorder_width_MHz": _nonneg,
                "J0_MHz_nm3": _pos,
                "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "path": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "schedule": {
            "type": "object",
            "properties": {
                "T_us": _pos,
                "rabi_MHz": _nonneg,
                "h_z_MHz": _num,
                "h_z_T_over_2pi": _num,
                "tau_us": _pos,
                "t_pi_us": _pos,
                "phase_rad": _num,
            },
            "additionalProperties": False,
        },
        "initial_state": {
            "type": "object",
            "properties": {"theta_rad": _num, "phi_rad": _num},
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "h_z_T_over_2pi": _grid,
                "B_ac_uT": _grid,
                "T_s_us": _grid,
                "rabi_MHz": _grid,
                "pairs": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "properties": {"rabi_MHz": _nonneg, "h_z_T_over_2pi": _num},
                        "required": ["rabi_MHz", "h_z_T_over_2pi"],
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
        "run": {
            "type": "object",
            "properties": {
                "n_periods": {"type": "integer", "minimum": 1},
                "samples_per_period": {"type": "integer", "minimum": 1},
                "n_traj": {"type": "integer", "minimum": 1},
                "dt_us": _pos,
                "phase_space": {"enum": list(dtwa.PHASE_SPACES)},
                "pulse_mode": {"enum": ["instant", "finite"]},
                "window_us": {"type": "array", "items": _nonneg, "minItems": 2, "maxItems": 2},
                "protocol": {"enum": ["DF", "PDD"]},
                "mode": {"enum": ["ideal", "explicit"]},
                "field_phase_rad": {"oneOf": [_num, {"const": "optimal"}]},
                "frequency_MHz": _pos,
                "T_prime_us": _pos,
                "k_max": {"type": "integer", "minimum": 1},
                "n_trials": {"type": "integer", "minimum": 1},
                "overhead_us": _nonneg,
                "region_half_width_uT": _pos,
                "budget": {
                    "type": "object",
                    "properties": {k: _pos for k in ("T2_us", "alpha", "C", "T_I_us", "T_R_us", "T_d_us")},
                    "required": ["T2_us", "alpha", "C", "T_I_us", "T_R_us", "T_d_us"],
                    "additionalProperties": False,
                },
                "data_csv": {"type": "string"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["schema", "experiment", "backend", "seed"],
    "additionalProperties": False,
}

_NEEDS = {
    "freezing_spectrum": [("sweep", "h_z_T_over_2pi"), ("schedule", "T_us"), ("schedule", "rabi_MHz")],
    "micromotion": [("schedule", "T_us"), ("schedule", "rabi_MHz")],
    "long_time_decay": [("sweep", "pairs"), ("schedule", "T_us")],
    "sensing_sweep": [("sweep", "B_ac_uT"), ("sweep", "T_s_us"), ("schedule", "tau_us"), ("schedule", "t_pi_us")],
    "sensitivity_table": [("sweep", "B_ac_uT"), ("sweep", "T_s_us"), ("schedule", "tau_us"),
                          ("schedule", "t_pi_us")],
    "coherence_fit": [("schedule", "tau_us"), ("schedule", "t_pi_us")],
}


# -- validation -------------------------------------------------------------------


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)  # (path, message)
    warnings: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors

    def lines(self):
        out = [f"error: {p or '<root>'}: {m}" for p, m in self.errors]
        out += [f"warning: {p}: {m}" for p, m in self.warnings]
        return out


def expand_grid(spec):
    """List of grid values from an explicit list or ``{start, stop, step}`` (stop inclusive)."""
    if isinstance(spec, dict):
        n = int(math.floor((spec["stop"] - spec["start"]) / spec["step"] + 1e-9)) + 1
        return [round(spec["start"] + k * spec["step"], 12) for k in range(max(n, 0))]
    return [float(v) for v in spec]


def _looks_angular(value):
    """True when an MHz value is a round number times 2 pi but not round itself."""
    if value == 0:
        return False
    x = abs(value) / TWO_PI
    def roundish(v):
        return abs(v * 1000 - round(v * 1000)) < 1e-6 * max(1.0, v * 1000) * 10
    return roundish(x) and not roundish(abs(value))


def _walk_mhz(obj, path=()):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k.endswith("_MHz"):
                vals = expand_grid(v) if isinstance(v, (list, dict)) else [v]
                for val in vals:
                    if isinstance(val, (int, float)) and _looks_angular(val):
                        yield path + (k,), val
                        break
            else:
                yield from _walk_mhz(v, path + (k,))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _walk_mhz(v, path + (i,))


def validate_config(config):
    """Schema check plus semantic checks; never executes anything."""
    report = ValidationReport()
    if not isinstance(config, dict):
        report.errors.append(("", "configuration must be a JSON object"))
        return report
    if "seed" not in config:
        report.errors.append(("seed", "missing seed: every run must be seeded explicitly"))
    validator = jsonschema.Draft202012Validator(RUN_SCHEMA)
    for err in sorted(validator.iter_errors(config), key=lambda e: list(e.path)):
        path = "/".join(str(p) for p in err.absolute_path)
        if err.validator == "required" and "'seed'" in err.message:
            continue
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            for k in extra:
                report.errors.append(((path + "/" if path else "") + k, "unknown field"))
            continue
        report.errors.append((path, err.message))
    if report.errors:
        return report
    for section, key in _NEEDS[config["experiment"]]:
        if key not in config.get(section, {}):
            report.errors.append((f"{section}/{key}", f"required for experiment {config['experiment']!r}"))
    for key, spec in config.get("sweep", {}).items():
        if key != "pairs" and not expand_grid(spec):
            report.errors.append((f"sweep/{key}", "sweep grid is empty"))
    ens = config.get("ensemble", {})
    if "path" in ens and len(ens) > 1 and set(ens) - {"path", "seeds"}:
        report.warnings.append(("ensemble", "ensemble path given; sampling parameters are ignored"))
    for path, val in _walk_mhz(config):
        report.warnings.append(
            ("/".join(map(str, path)),
             f"value {val} looks 2 pi-inclusive (= 2 pi x {val / TWO_PI:.6g}); fields ending in _MHz are "
             "ordinary frequencies")
        )
    return report


def load_config(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def validate(path):
    """Validate a configuration file and return the report."""
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        return ValidationReport([("", str(exc))])
    return validate_config(cfg)


# -- configuration helpers --------------------------------------------------------------


def _ensembles(cfg, base_dir=None):
    ens = cfg.get("ensemble", {})
    if "path" in ens:
        p = Path(ens["path"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        e = SpinEnsemble.from_json(p)
        return [(ens.get("seeds", [cfg["seed"]])[0], e)]
    seeds = ens.get("seeds", [cfg["seed"]])
    kw = dict(
        n=ens.get("n", 8),
        density=ens.get("density_per_nm3", 1e-4),
        min_distance=ens.get("min_distance_nm", 15.0),
        disorder_width=mhz_to_angular(ens.get("disorder_width_MHz", 0.0)),
    )
    if "J0_MHz_nm3" in ens:
        kw["J0"] = mhz_to_angular(ens["J0_MHz_nm3"])
    return [(s, sample_ensemble(seed=s, **kw)) for s in seeds]


def _h_z(sched, x=None):
    T = sched["T_us"]
    if x is not None:
        return TWO_PI * x / T
    if "h_z_T_over_2pi" in sched:
        return TWO_PI * sched["h_z_T_over_2pi"] / T
    return mhz_to_angular(sched.get("h_z_MHz", 2.0 / T))


def _state(cfg, default=(0.0, 0.0)):
    st = cfg.get("initial_state", {})
    return initial_state(st.get("theta_rad", default[0]), st.get("phi_rad", default[1]))


def _propagate(cfg, state, schedule, ensemble, times, seed):
    run = cfg.get("run", {})
    if cfg["backend"] == "ed":
        return ed.propagate(state, schedule, ensemble, times=times, pulse_mode=run.get("pulse_mode", "instant"))
    batch = dtwa.sample_initial(state, ensemble.n, run.get("n_traj", 1000), seed,
                                run.get("phase_space", "mixed"))
    return dtwa.evolve(batch, ensemble, schedule, times, dt=run.get("dt_us"),
                       pulse_mode=run.get("pulse_mode", "instant"))


def _csv(header, rows):
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# -- experiment jobs ---------------------------------------------------------------------
#
# Each job returns {filename: text}. Jobs are pure functions of
# (config, job parameters), so their outputs do not depend on scheduling.


def _job_freezing(cfg, seed, base_dir):
    (_, ensemble), = [e for e in _ensembles(cfg, base_dir) if e[0] == seed]
    sched_cfg, run = cfg["schedule"], cfg.get("run", {})
    T = sched_cfg["T_us"]
    rabis = expand_grid(cfg["sweep"].get("rabi_MHz", [sched_cfg["rabi_MHz"]]))
    n_periods = run.get("n_periods", 200)
    times = np.arange(n_periods + 1) * T
    state = _state(cfg)
    rows, summary = [], []
    for rabi_mhz in rabis:
        rabi = mhz_to_angular(rabi_mhz)
        for x in expand_grid(cfg["sweep"]["h_z_T_over_2pi"]):
            sched = build_schedule("ideal_toggle", T=T, rabi=rabi, h_z=_h_z(sched_cfg, x))
            res = _propagate(cfg, state, sched, ensemble, times, cfg["seed"])
            cum = analysis.cumulative_average_curve(res)
            for k in range(len(times)):
                rows.append((seed, rabi_mhz, x, float(times[k]), float(res.mz[k]), float(res.stderr[2, k]),
                             float(cum[k])))
            summary.append((seed, rabi_mhz, x, float(cum[-1])))
    return {
        f"freezing_seed{seed}.csv": _csv(("ensemble_seed", "rabi_MHz", "hzT_over_2pi", "time_us", "mz",
                                          "mz_stderr", "cumulative_mz"), rows),
        f"freezing_summary_seed{seed}.csv": _csv(("ensemble_seed", "rabi_MHz", "hzT_over_2pi",
                                                  "cumulative_mz_final"), summary),
        f"ensemble_seed{seed}.json": ensemble.to_json(),
    }


def _job_micromotion(cfg, seed, base_dir):
    (_, ensemble), = [e for e in _ensembles(cfg, base_dir) if e[0] == seed]
    sched_cfg, run = cfg["schedule"], cfg.get("run", {})
    T = sched_cfg["T_us"]
    rabi = mhz_to_angular(sched_cfg["rabi_MHz"])
    h_z = _h_z(sched_cfg) if ("h_z_T_over_2pi" in sched_cfg or "h_z_MHz" in sched_cfg) else TWO_PI * 2 / T
    sched = build_schedule("ideal_toggle", T=T, rabi=rabi, h_z=h_z)
    spp = run.get("samples_per_period", 10)
    n_periods = run.get("n_periods", 20)
    times = np.arange(n_periods * spp + 1) * (T / spp)
    state = _state(cfg, (math.acos(1 / math.sqrt(3)), math.pi / 4))
    res = _propagate(cfg, state, sched, ensemble, times, cfg["seed"])
    window = run.get("window_us", [n_periods * T / 2, n_periods * T])
    spec = analysis.spectrum(res, tuple(window))
    out = {
        "micromotion_series.csv": res.to_csv(),
        "micromotion_series.json": res.sidecar(),
        "micromotion_spectrum.json": _json(dict(spec.to_records(), drive_frequency_MHz=1 / T,
                                                h_z_MHz=h_z / TWO_PI)),
    }
    try:
        mm = analysis.fit_micromotion(res, rabi, h_z, T, tuple(window))
        out["micromotion_fit.json"] = _json({"sz": mm.sz, "measured": mm.measured, "predicted": mm.predicted,
                                             "ratios": mm.ratios})
    except Exception as exc:  # off-freezing drives have no kick-operator prediction
        out["micromotion_fit.json"] = _json({"skipped": str(exc)})
    return out


def _job_decay(cfg, seed, index, base_dir):
    (_, ensemble), = [e for e in _ensembles(cfg, base_dir) if e[0] == seed]
    pair = cfg["sweep"]["pairs"][index]
    T = cfg["schedule"]["T_us"]
    rabi = mhz_to_angular(pair["rabi_MHz"])
    h_z = _h_z(cfg["schedule"], pair["h_z_T_over_2pi"])
    sched = build_schedule("ideal_toggle", T=T, rabi=rabi, h_z=h_z)
    n_periods = cfg.get("run", {}).get("n_periods", 400)
    times = np.arange(n_periods + 1) * T
    res = _propagate(cfg, _state(cfg), sched, ensemble, times, cfg["seed"])
    half = crossing_time(res.times, res.mz, 0.5)
    rec = {"ensemble_seed": seed, "rabi_MHz": pair["rabi_MHz"], "h_z_T_over_2pi": pair["h_z_T_over_2pi"],
           "symmetry_breaking_scale_rad_per_us": rabi**3 / (4 * h_z**2) if h_z else None,
           "half_time_us": half}
    return {
        f"decay_pair{index}_seed{seed}.csv": res.to_csv(),
        f"decay_pair{index}_seed{seed}.json": _json(rec),
    }


def crossing_time(t, y, level):
    """First time ``y`` falls to ``level`` (linear interpolation); NaN if never."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    below = np.nonzero(y <= level)[0]
    if len(below) == 0:
        return math.nan
    k = int(below[0])
    if k == 0:
        return float(t[0])
    return float(np.interp(level, [y[k], y[k - 1]], [t[k], t[k - 1]]))


def _sequence(cfg):
    sched, run = cfg["schedule"], cfg.get("run", {})
    protocol = run.get("protocol", "DF")
    T_s = expand_grid(cfg["sweep"]["T_s_us"]) if "T_s_us" in cfg.get("sweep", {}) else [1.0]
    return sensing.SensingSequence(
        protocol,
        sched["tau_us"],
        sched["t_pi_us"],
        T_s[-1],
        sched.get("T_us"),
        mhz_to_angular(sched.get("rabi_MHz", 0.0)),
        _h_z(sched) if sched.get("T_us") and ("h_z_MHz" in sched or "h_z_T_over_2pi" in sched) else 0.0,
        run.get("T_prime_us"),
    )


def _field_phase(cfg, seq):
    ph = cfg.get("run", {}).get("field_phase_rad", "optimal")
    if ph == "optimal":
        f = cfg.get("run", {}).get("frequency_MHz", seq.filter_frequency)
        return sensing.optimal_field_phase(seq.schedule("explicit"), f)
    return float(ph)


_SWEEP_CHUNK = 8


def _job_sensing(cfg, seed, chunk, base_dir):
    (_, ensemble), = [e for e in _ensembles(cfg, base_dir) if e[0] == seed]
    run = cfg.get("run", {})
    seq = _sequence(cfg)
    B = expand_grid(cfg["sweep"]["B_ac_uT"])[chunk * _SWEEP_CHUNK:(chunk + 1) * _SWEEP_CHUNK]
    T_s = expand_grid(cfg["sweep"]["T_s_us"])
    mode = run.get("mode", "ideal")
    phase = _field_phase(cfg, seq) if mode == "explicit" else 0.0
    res = sensing.sensing_sweep(seq, B, ensemble, cfg["backend"], mode, T_s=T_s,
                                frequency=run.get("frequency_MHz"), phase=phase,
                                n_traj=run.get("n_traj", 1000), seed=cfg["seed"], dt=run.get("dt_us"),
                                phase_space=run.get("phase_space", "mixed"))
    return {f"sensing_chunk{chunk:04d}_seed{seed}.csv": res.to_csv()}


def _job_coherence(cfg, seed, base_dir):
    run = cfg.get("run", {})
    if "data_csv" in run:
        p = Path(run["data_csv"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        data = np.genfromtxt(p, delimiter=",", names=True)
        t, y = data[data.dtype.names[0]], data[data.dtype.names[1]]
    else:
        (_, ensemble), = [e for e in _ensembles(cfg, base_dir) if e[0] == seed]
        seq = _sequence(cfg)
        sched = seq.schedule("explicit")
        n_periods = run.get("n_periods", 40)
        times = np.arange(n_periods + 1) * sched.period
        cfg_run = dict(cfg, run=dict(run, pulse_mode=run.get("pulse_mode", "finite")))
        res = _propagate(cfg_run, seq.initial(), sched, ensemble, times, cfg["seed"])
        t, y = res.times, res.mx
    fit = analysis.fit_stretched_exponential((t, y))
    return {
        f"coherence_seed{seed}.csv": _csv(("time_us", "signal"), [(float(a), float(b)) for a, b in zip(t, y)]),
        f"coherence_fit_seed{seed}.json": _json(fit.to_record()),
    }


def _run_job(job):
    kind, cfg, args, base_dir = job
    fn = {
        "freezing": _job_freezing,
        "micromotion": _job_micromotion,
        "decay": _job_decay,
        "sensing": _job_sensing,
        "coherence": _job_coherence,
    }[kind]
    t0 = time.perf_counter()
    try:
        files = fn(cfg, *args, base_dir)
        return {"kind": kind, "args": list(args), "status": "ok", "files": files,
                "wall_time_s": time.perf_counter() - t0}
    except Exception as exc:  # reported per job in the manifest
        return {"kind": kind, "args": list(args), "status": "failed", "files": {},
                "error": f"{type(exc).__name__}: {exc}", "wall_time_s": time.perf_counter() - t0}


def _jobs(cfg, base_dir):
    kind = cfg["experiment"]
    seeds = [s for s, _ in _ensembles_seeds(cfg)]
    if kind == "freezing_spectrum":
        return [("freezing", cfg, (s,), base_dir) for s in seeds]
    if kind == "micromotion":
        return [("micromotion", cfg, (seeds[0],), base_dir)]
    if kind == "long_time_decay":
        return [("decay", cfg, (s, i), base_dir) for s in seeds for i in range(len(cfg["sweep"]["pairs"]))]
    if kind in ("sensing_sweep", "sensitivity_table"):
        nB = len(expand_grid(cfg["sweep"]["B_ac_uT"]))
        return [("sensing", cfg, (seeds[0], c), base_dir) for c in range(math.ceil(nB / _SWEEP_CHUNK))]
    if kind == "coherence_fit":
        return [("coherence", cfg, (seeds[0],), base_dir)]
    raise ConfigError(f"unknown experiment {kind!r}", ("experiment",))


def _ensembles_seeds(cfg):
    ens = cfg.get("ensemble", {})
    return [(s, None) for s in ens.get("seeds", [cfg["seed"]])]


def _merge_sensing(cfg, results):
    lines = ["B_ac_uT,Ts_us,Sz_mean,Sz_stderr"]
    for r in results:
        for text in r["files"].values():
            lines += text.strip().splitlines()[1:]
    return "\n".join(lines) + "\n"


def _sensitivity_rows(cfg, merged):
    run = cfg.get("run", {})
    data = np.array([[float(v) for v in ln.split(",")] for ln in merged.strip().splitlines()[1:]])
    seq = _sequence(cfg)
    budget_cfg = run.get("budget")
    budget = None
    if budget_cfg:
        budget = sensing.PddBudget(budget_cfg["T2_us"], budget_cfg["alpha"], budget_cfg["C"],
                                   budget_cfg["T_I_us"], budget_cfg["T_R_us"], budget_cfg["T_d_us"])
    overhead = budget if budget is not None else run.get("overhead_us", 0.0)
    n_trials = run.get("n_trials", 10_000)
    freezing = sensing.ac_freezing_amplitudes(seq.effective_period, run.get("k_max", 3))
    half_width = run.get("region_half_width_uT", 0.1 * freezing[0])
    rows = []
    for ts in expand_grid(cfg["sweep"]["T_s_us"]):
        sel = np.isclose(data[:, 1], ts)
        B, y, err = data[sel, 0], data[sel, 2], data[sel, 3]
        sigma = sensing.emulated_sigma(budget.C, n_trials) if budget is not None else np.where(err > 0, err, 1.0)
        regions = ("all", "near_freezing", "away") if seq.protocol == "DF" else ("all",)
        for region in regions:
            try:
                est = sensing.sensitivity_from_curve(B, y, sigma, ts, overhead, n_trials, region, freezing,
                                                     half_width)
                rows.append((ts, est.eta, region, seq.protocol))
            except Exception:
                rows.append((ts, math.nan, region, seq.protocol))
        if budget is not None and seq.protocol == "PDD":
            rows.append((ts, float(sensing.pdd_theoretical_sensitivity(ts, budget)), "theory", "PDD"))
    return _csv(("Ts_us", "eta_nT_per_sqrtHz", "region", "protocol"), rows)


def _hash_text(text):
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class RunOutcome:
    status: int
    manifest: dict
    out_dir: Path


def run(config, out_dir=None, workers=1, seed_override=None, base_dir=None):
    """Validate and execute a configuration (dict or path); write artifacts and a manifest.

    Returns a :class:`RunOutcome` whose ``status`` is 0 on success and 1
    if any job failed (diagnostics are recorded per job in the manifest).
    """
    if not isinstance(config, dict):
        base_dir = base_dir or Path(config).resolve().parent
        config = load_config(config)
    cfg = copy.deepcopy(config)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    report = validate_config(cfg)
    if not report.ok:
        path, msg = report.errors[0]
        raise ConfigError(f"{path or '<root>'}: {msg}", tuple(path.split("/")) if path else ())
    out = Path(out_dir or cfg.get("output_dir") or f"runs/{cfg['experiment']}")
    out.mkdir(parents=True, exist_ok=True)
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    t0 = time.perf_counter()
    jobs = _jobs(cfg, str(base_dir) if base_dir else None)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]

    artifacts = {}

    def write(name, text):
        (out / name).write_text(text)
        artifacts[name] = _hash_text(text)

    for r in results:
        for name, text in sorted(r["files"].items()):
            write(name, text)
    failed = [r for r in results if r["status"] != "ok"]
    if not failed:
        kind = cfg["experiment"]
        if kind == "freezing_spectrum":
            merged = ["ensemble_seed,rabi_MHz,hzT_over_2pi,cumulative_mz_final"]
            for r in results:
                for name, text in sorted(r["files"].items()):
                    if name.startswith("freezing_summary"):
                        merged += text.strip().splitlines()[1:]
            write("freezing_summary.csv", "\n".join(merged) + "\n")
        if kind in ("sensing_sweep", "sensitivity_table"):
            merged = _merge_sensing(cfg, results)
            write("sensing_sweep.csv", merged)
            if kind == "sensitivity_table":
                write("sensitivity_table.csv", _sensitivity_rows(cfg, merged))
    write("config.json", _json(cfg))
    manifest = {
        "experiment": cfg["experiment"],
        "inputs_sha256": _hash_text(canonical),
        "versions": {"dynfreeze": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "jsonschema": metadata.version("jsonschema"),
                     "python": platform.python_version()},
        "workers": workers,
        "wall_time_s": time.perf_counter() - t0,
        "jobs": [{k: v for k, v in r.items() if k != "files"} | {"files": sorted(r["files"])} for r in results],
        "artifacts": artifacts,
        "status": "failed" if failed else "ok",
    }
    (out / "manifest.json").write_text(_json(manifest))
    return RunOutcome(1 if failed else 0, manifest, out)


def series_from_csv(path):
    """Load a series written by a run (convenience for demos)."""
    return MagnetizationSeries.from_csv(path)
