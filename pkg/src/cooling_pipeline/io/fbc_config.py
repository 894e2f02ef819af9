"""
Experiment configuration: JSON files, named presets and validation.

A config is resolved as defaults <- preset <- file <- overrides, every leaf
is type-checked, unknown keys are rejected with a suggestion, and the
physics constraints are checked before anything runs. Keys starting with
"_" are free-form metadata (preset name, description).
"""

import copy
import difflib
import hashlib
import json
import math
import os
from importlib import resources

import numpy as np

from cooling_pipeline.errors import ArgumentError, ConfigError
from cooling_pipeline.tools.fbc_cfTwa import ProtocolSchedule, default_record_points, default_tau
from cooling_pipeline.tools.fbc_field1d import FieldParams, Grid1D, max_stable_dt
from cooling_pipeline.tools.fbc_npwFilter import calibrate
from cooling_pipeline.tools.fbc_spinSystem import TwoModeParams
from cooling_pipeline.utils.utils_log import getLogger

log = getLogger("config")

NUMBER = (int, float)
OPT_NUMBER = (int, float, type(None))
OPT_INT = (int, type(None))

EXPERIMENTS = ("two_mode", "field")
SOLVERS = ("cf", "kraus", "npw")
KRAUS_VARIANTS = ("records", "quadrature")
INITIAL_KINDS = ("css", "thermal")

# fields that never change the numbers a run produces
NON_SEMANTIC = (
    ("output", "directory"),
    ("output", "plots"),
    ("output", "keep_records"),
    ("thermal", "cache_dir"),
    ("threads",),
)

DEFAULTS = {
    "experiment": "two_mode",
    "solver": "cf",
    "threads": None,
    "two_mode": {
        "chi": 0.01,
        "kappa": 0.09,
        "lambda": 0.8e-4,
        "k_fb": 0.1,
        "N": 100,
        "beta0": math.sqrt(1e7),
        "delta_jz": None,
    },
    "schedule": {
        "n_measurements": 62,
        "tau": None,
        "dt": None,
        "t_p": None,
        "t_total": None,
        "rabi_periods": 1.0,
        "per_trap_period": 150,
    },
    "initial": {"kind": "css", "bloch": [0.0, 0.4, -0.3]},
    "kraus": {"n_records": 2000, "variant": "records", "grid_points": 401, "grid_width": 8.0},
    "npw": {
        "t_p_npw": None,
        "n_particles": 200,
        "n_conditional": 100,
        "n_substeps": 20,
        "resample_threshold": 0.5,
    },
    "field": {
        "g": 1e-4,
        "omega0": 1.0,
        "r_d": 0.52,
        "lambda": 3.7e-5,
        "beta0": 1.0,
        "k_fb": 0.0,
        "sigma_smooth": None,
        "mu": 15.13,
        "T_tilde": 0.0,
        "gamma_growth": 0.05,
        "n_hg_modes": 100,
        "n_points": 1024,
        "length": 40.0,
    },
    "thermal": {"t_equil": 20.0, "dt": 1e-3, "cache": True, "path": None, "cache_dir": None},
    "seeds": {"master_seed": 0, "n_traj": 1000},
    "output": {
        "directory": "runs/latest",
        "plots": True,
        "distributions": False,
        "level_sigmas": 2.0,
        "n_resamples": 1000,
        "record_every": None,
        "brackets": False,
        "keep_records": False,
    },
    "sweep": {"delta_jz": None},
}

SCHEMA = {
    "experiment": str,
    "solver": str,
    "threads": OPT_INT,
    "two_mode": {
        "chi": NUMBER,
        "kappa": NUMBER,
        "lambda": OPT_NUMBER,
        "k_fb": NUMBER,
        "N": int,
        "beta0": NUMBER,
        "delta_jz": OPT_NUMBER,
    },
    "schedule": {
        "n_measurements": int,
        "tau": OPT_NUMBER,
        "dt": OPT_NUMBER,
        "t_p": OPT_NUMBER,
        "t_total": OPT_NUMBER,
        "rabi_periods": NUMBER,
        "per_trap_period": int,
    },
    "initial": {"kind": str, "bloch": list},
    "kraus": {"n_records": int, "variant": str, "grid_points": int, "grid_width": NUMBER},
    "npw": {
        "t_p_npw": OPT_NUMBER,
        "n_particles": int,
        "n_conditional": int,
        "n_substeps": int,
        "resample_threshold": OPT_NUMBER,
    },
    "field": {
        "g": NUMBER,
        "omega0": NUMBER,
        "r_d": NUMBER,
        "lambda": NUMBER,
        "beta0": NUMBER,
        "k_fb": NUMBER,
        "sigma_smooth": OPT_NUMBER,
        "mu": NUMBER,
        "T_tilde": NUMBER,
        "gamma_growth": NUMBER,
        "n_hg_modes": int,
        "n_points": int,
        "length": NUMBER,
    },
    "thermal": {
        "t_equil": NUMBER,
        "dt": NUMBER,
        "cache": bool,
        "path": (str, type(None)),
        "cache_dir": (str, type(None)),
    },
    "seeds": {"master_seed": int, "n_traj": int},
    "output": {
        "directory": str,
        "plots": bool,
        "distributions": bool,
        "level_sigmas": NUMBER,
        "n_resamples": int,
        "record_every": OPT_INT,
        "brackets": bool,
        "keep_records": bool,
    },
    "sweep": {"delta_jz": (list, type(None))},
}


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def available_presets():
    folder = resources.files("cooling_pipeline.presets")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def load_preset(name):
    folder = resources.files("cooling_pipeline.presets")
    target = folder / f"{name}.json"
    if not target.is_file():
        close = difflib.get_close_matches(name, available_presets(), n=1)
        hint = f"; did you mean '{close[0]}'?" if close else ""
        raise ConfigError(f"unknown preset '{name}'{hint}", available=", ".join(available_presets()))
    return json.loads(target.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# merging and schema checks
# ---------------------------------------------------------------------------


def deep_merge(base, update):
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _type_name(expected):
    expected = expected if isinstance(expected, tuple) else (expected,)
    names = ["null" if t is type(None) else t.__name__ for t in expected]
    return " or ".join(names)


def _check_leaf(path, value, expected):
    expected = expected if isinstance(expected, tuple) else (expected,)
    # bool is an int subclass; only accept it where bool is asked for
    if isinstance(value, bool) and bool not in expected:
        raise ConfigError(f"'{path}' must be {_type_name(expected)}, got bool", key=path)
    if not isinstance(value, expected):
        raise ConfigError(
            f"'{path}' must be {_type_name(expected)}, got {type(value).__name__}",
            key=path,
        )


def check_schema(data, schema=SCHEMA, prefix=""):
    """Reject unknown keys (with a suggestion) and wrongly typed leaves."""
    for key, value in data.items():
        if key.startswith("_"):
            continue
        path = f"{prefix}{key}"
        if key not in schema:
            close = difflib.get_close_matches(key, [k for k in schema], n=1, cutoff=0.6)
            hint = f"; did you mean '{prefix}{close[0]}'?" if close else ""
            raise ConfigError(f"unknown key '{path}'{hint}", key=path)
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{path}' must be an object", key=path)
            check_schema(value, expected, path + ".")
        else:
            _check_leaf(path, value, expected)


# ---------------------------------------------------------------------------
# resolved configuration
# ---------------------------------------------------------------------------


class ExperimentConfig:
    """A resolved, validated configuration plus builders for the solver inputs."""

    def __init__(self, data):
        self.data = data

    def __getitem__(self, key):
        return self.data[key]

    @property
    def experiment(self):
        return self.data["experiment"]

    @property
    def solver(self):
        return self.data["solver"] if self.experiment == "two_mode" else "field"

    @property
    def master_seed(self):
        return self.data["seeds"]["master_seed"]

    @property
    def n_traj(self):
        return self.data["seeds"]["n_traj"]

    @property
    def output(self):
        return self.data["output"]

    @property
    def sweep_values(self):
        return self.data["sweep"]["delta_jz"]

    def with_overrides(self, overrides):
        return resolve(deep_merge(self.data, overrides))

    # two-mode builders

    def two_mode_params(self):
        tm = self.data["two_mode"]
        if tm["delta_jz"] is not None:
            return TwoModeParams.from_delta_jz(
                tm["chi"], tm["kappa"], tm["delta_jz"], tm["k_fb"], tm["N"], tm["beta0"]
            )
        return TwoModeParams(tm["chi"], tm["kappa"], tm["lambda"], tm["k_fb"], tm["N"], tm["beta0"])

    def schedule(self):
        s = self.data["schedule"]
        return ProtocolSchedule(s["tau"], s["t_p"], s["n_measurements"], s["dt"], s["t_total"])

    def record_points(self, schedule=None):
        schedule = schedule or self.schedule()
        out = self.data["output"]
        return default_record_points(schedule, out["record_every"], out["brackets"])

    def npw_calibration(self):
        return calibrate(self.two_mode_params(), self.data["npw"]["t_p_npw"], self.data["schedule"]["dt"])

    # field builders

    def grid(self):
        f = self.data["field"]
        return Grid1D(f["n_points"], f["length"])

    def field_params(self):
        f = self.data["field"]
        return FieldParams(
            g=f["g"],
            r_d=f["r_d"],
            lambda_pc=f["lambda"],
            beta0=f["beta0"],
            k_fb=f["k_fb"],
            mu=f["mu"],
            T_tilde=f["T_tilde"],
            gamma_growth=f["gamma_growth"],
            n_hg_modes=f["n_hg_modes"],
            omega0=f["omega0"],
            sigma_smooth=f["sigma_smooth"],
        )

    def thermal_metadata(self):
        """Everything a cached thermal ensemble depends on."""
        f = self.data["field"]
        keys = ("g", "omega0", "mu", "T_tilde", "gamma_growth", "n_hg_modes", "n_points", "length")
        meta = {k: f[k] for k in keys}
        meta.update(self.data["thermal"])
        meta.pop("cache", None)
        meta.pop("path", None)
        meta.pop("cache_dir", None)
        meta["master_seed"] = self.master_seed
        meta["n_traj"] = self.n_traj
        return meta

    def config_hash(self):
        return config_hash(self.data)


def semantic_view(data):
    out = copy.deepcopy(data)
    for path in NON_SEMANTIC:
        node = out
        for key in path[:-1]:
            node = node.get(key, {})
        node.pop(path[-1], None)
    return {k: v for k, v in out.items() if not k.startswith("_")}


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(data):
    """SHA-256 over the canonical JSON of the semantic fields."""
    return hashlib.sha256(canonical_json(semantic_view(data)).encode("utf-8")).hexdigest()


def _derive_schedule(data):
    s = data["schedule"]
    if data["experiment"] == "field":
        if s["tau"] is None:
            s["tau"] = 2.0 * math.pi / s["per_trap_period"]
        if s["dt"] is None:
            grid = Grid1D(data["field"]["n_points"], data["field"]["length"])
            s["dt"] = min(s["tau"] / 100.0, max_stable_dt(grid))
    else:
        if s["tau"] is None:
            s["tau"] = float(default_tau(data["two_mode"]["kappa"], 62, s["rabi_periods"]))
        if s["dt"] is None:
            s["dt"] = s["tau"] / 100.0
    if s["t_p"] is None:
        s["t_p"] = s["tau"] / 100.0
    if s["t_total"] is None:
        s["t_total"] = s["n_measurements"] * s["tau"]

    out = data["output"]
    if out["record_every"] is None:
        out["record_every"] = s["per_trap_period"] if data["experiment"] == "field" else 1
    npw = data["npw"]
    if npw["t_p_npw"] is None:
        npw["t_p_npw"] = s["dt"] / 10.0


def _physics_checks(data):
    if data["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"'experiment' must be one of {EXPERIMENTS}", key="experiment")
    if data["solver"] not in SOLVERS:
        raise ConfigError(f"'solver' must be one of {SOLVERS}", key="solver")
    if data["kraus"]["variant"] not in KRAUS_VARIANTS:
        raise ConfigError(f"'kraus.variant' must be one of {KRAUS_VARIANTS}", key="kraus.variant")
    if data["initial"]["kind"] not in INITIAL_KINDS:
        raise ConfigError(f"'initial.kind' must be one of {INITIAL_KINDS}", key="initial.kind")
    if len(data["initial"]["bloch"]) != 3:
        raise ConfigError("'initial.bloch' must hold three numbers", key="initial.bloch")

    tm = data["two_mode"]
    if tm["N"] < 1:
        raise ConfigError("constraint N >= 1 violated", key="two_mode.N", N=tm["N"])
    if not tm["beta0"] > 0:
        raise ConfigError("constraint beta0 > 0 violated", key="two_mode.beta0")
    if tm["lambda"] is None and tm["delta_jz"] is None:
        raise ConfigError("either 'two_mode.lambda' or 'two_mode.delta_jz' is required", key="two_mode.lambda")
    if data["seeds"]["n_traj"] < 2:
        raise ConfigError("constraint n_traj >= 2 violated", key="seeds.n_traj")
    if data["npw"]["n_particles"] < 2:
        raise ConfigError("constraint n_particles >= 2 violated", key="npw.n_particles")
    if data["npw"]["n_conditional"] < 2:
        raise ConfigError("constraint n_conditional >= 2 violated", key="npw.n_conditional")
    if data["output"]["n_resamples"] < 100:
        raise ConfigError("constraint n_resamples >= 100 violated", key="output.n_resamples")
    sweep = data["sweep"]["delta_jz"]
    if sweep is not None and not all(isinstance(v, NUMBER) and v > 0 for v in sweep):
        raise ConfigError("'sweep.delta_jz' must be a list of positive numbers", key="sweep.delta_jz")

    s = data["schedule"]
    if s["t_p"] > s["tau"] / 10.0 * (1 + 1e-12):
        raise ConfigError("constraint t_p <= tau/10 violated", key="schedule.t_p", t_p=s["t_p"], tau=s["tau"])
    if s["dt"] > s["tau"] / 20.0 * (1 + 1e-12):
        raise ConfigError("constraint dt <= tau/20 violated", key="schedule.dt", dt=s["dt"], tau=s["tau"])
    if s["n_measurements"] * s["tau"] > s["t_total"] * (1 + 1e-12):
        raise ConfigError(
            "constraint n_measurements * tau <= t_total violated",
            key="schedule.t_total",
            n_measurements=s["n_measurements"],
            tau=s["tau"],
            t_total=s["t_total"],
        )

    if data["experiment"] == "field":
        f = data["field"]
        try:
            grid = Grid1D(f["n_points"], f["length"])
        except ArgumentError as exc:
            raise ConfigError(exc.message, key="field.n_points") from exc
        if not f["r_d"] > grid.dx:
            raise ConfigError("constraint r_d > dx violated", key="field.r_d", r_d=f["r_d"], dx=grid.dx)
        if f["n_hg_modes"] > f["n_points"] // 2:
            raise ConfigError("constraint n_hg_modes <= n_points/2 violated", key="field.n_hg_modes")
        if s["dt"] > max_stable_dt(grid) * (1 + 1e-12):
            raise ConfigError(
                "constraint dt <= 2 pi / k_max^2 violated",
                key="schedule.dt",
                dt=s["dt"],
                limit=max_stable_dt(grid),
            )


def resolve(raw):
    """Validate a merged document and fill derived defaults."""
    check_schema(raw)
    data = deep_merge(DEFAULTS, raw)
    _derive_schedule(data)
    _physics_checks(data)
    try:
        built = ExperimentConfig(data)
        if data["experiment"] == "two_mode":
            built.two_mode_params()
            built.schedule()
        else:
            built.field_params()
            built.schedule()
    except ArgumentError as exc:
        raise ConfigError(exc.message, **exc.context) from exc
    return built


def load_config(path=None, preset=None, overrides=None):
    """Load and validate a configuration.

    ``preset`` names a shipped JSON preset; a file may also carry its own
    "_preset" entry. Overrides (a nested dict) are applied last.
    """
    document = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}", path=str(path))
        try:
            with open(path, encoding="utf-8") as handle:
                document = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}", path=str(path)) from exc
        if not isinstance(document, dict):
            raise ConfigError("config file must hold a JSON object", path=str(path))
    preset = preset or document.get("_preset")
    merged = load_preset(preset) if preset else {}
    merged = deep_merge(merged, document)
    merged = deep_merge(merged, overrides or {})
    config = resolve(merged)
    log.debug("resolved config %s (preset=%s)", config.config_hash()[:12], preset)
    return config


def to_jsonable(value):
    if isinstance(value, dict):
        return {k: to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value
