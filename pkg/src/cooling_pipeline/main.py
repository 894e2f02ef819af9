"""
Run orchestration: one function per CLI command.

run() dispatches a resolved config to its solver and writes the CSVs, the
plots and the manifest; compare() checks two finished runs against each
other; thermal_sample() fills the SPGPE cache.
"""

import os

import numpy as np

from cooling_pipeline.errors import ComparisonError, ConfigError
from cooling_pipeline.io.fbc_config import config_hash
from cooling_pipeline.io.fbc_output import (
    RunManifest,
    plot_profile,
    plot_series,
    read_manifest,
    read_series_csv,
    timestamp,
    write_distribution_csv,
    write_manifest,
    write_profile_csv,
    write_series_csv,
)
from cooling_pipeline.io.fbc_snapshot import load_snapshot, save_snapshot
from cooling_pipeline.tools.fbc_cfTwa import measurement_jumps, run_cf_protocol
from cooling_pipeline.tools.fbc_field1d import FieldEnsemble, record_profiles, run_field_protocol
from cooling_pipeline.tools.fbc_krausExact import (
    build_operators,
    css_density_matrix,
    run_mf_protocol,
    run_mf_quadrature,
    thermal_density_matrix,
)
from cooling_pipeline.tools.fbc_npwFilter import run_npw_protocol
from cooling_pipeline.tools.fbc_spgpe import spgpe_ensemble
from cooling_pipeline.tools.fbc_spinSystem import sample_css, sample_thermal_spin
from cooling_pipeline.utils.utils_log import getLogger
from cooling_pipeline.version import get_code_version

log = getLogger("main")

JUMP_OBSERVABLES = ("var_Jx", "var_Jy", "var_Jz")
CACHE_DIR_ENV = "FBCOOL_CACHE_DIR"
DEFAULT_CACHE_DIR = os.path.join("runs", ".thermal_cache")


# ---------------------------------------------------------------------------
# two-mode
# ---------------------------------------------------------------------------


def initial_sampler(config, params):
    """(n, master_seed, start_index) -> TwoModeEnsemble for the configured initial state."""
    initial = config["initial"]
    if initial["kind"] == "thermal":
        return lambda n, seed, start=0: sample_thermal_spin(params, n, seed, start)
    bloch = initial["bloch"]
    return lambda n, seed, start=0: sample_css(params, bloch, n, seed, start)


def initial_density_matrix(config, ops):
    if config["initial"]["kind"] == "thermal":
        return thermal_density_matrix(ops.N)
    return css_density_matrix(ops, config["initial"]["bloch"])


def run_two_mode(config, threads=None):
    params = config.two_mode_params()
    schedule = config.schedule()
    points = config.record_points(schedule)
    out = config.output
    seed = config.master_seed
    solver = config.solver

    if solver == "cf":
        ensemble = initial_sampler(config, params)(config.n_traj, seed)
        return run_cf_protocol(
            params,
            schedule,
            ensemble,
            points,
            seed,
            threads,
            out["level_sigmas"],
            out["n_resamples"],
            distributions=out["distributions"],
        )
    if solver == "kraus":
        ops = build_operators(params.N, params)
        rho0 = initial_density_matrix(config, ops)
        kraus = config["kraus"]
        if kraus["variant"] == "quadrature":
            return run_mf_quadrature(params, schedule, rho0, points, kraus["grid_points"], kraus["grid_width"])
        return run_mf_protocol(
            params,
            schedule,
            rho0,
            kraus["n_records"],
            points,
            seed,
            threads,
            out["level_sigmas"],
            out["n_resamples"],
        )
    npw = config["npw"]
    return run_npw_protocol(
        params,
        schedule,
        config.npw_calibration(),
        npw["n_conditional"],
        npw["n_particles"],
        initial_sampler(config, params),
        points,
        seed,
        threads,
        out["level_sigmas"],
        out["n_resamples"],
        npw["n_substeps"],
        npw["resample_threshold"],
    )


# ---------------------------------------------------------------------------
# field
# ---------------------------------------------------------------------------


def thermal_cache_dir(config):
    """thermal.cache_dir, else $FBCOOL_CACHE_DIR, else runs/.thermal_cache."""
    return config["thermal"]["cache_dir"] or os.environ.get(CACHE_DIR_ENV) or DEFAULT_CACHE_DIR


def thermal_cache_path(config):
    """Explicit thermal.path, else a file in the shared cache keyed by the thermal settings."""
    path = config["thermal"]["path"]
    if path:
        return path
    return os.path.join(thermal_cache_dir(config), f"thermal_{config_hash(config.thermal_metadata())[:12]}.npy")


def thermal_ensemble(config, threads=None, path=None, use_cache=None):
    """SPGPE samples for the configured field, read from or written to the cache.

    Returns (FieldEnsemble, warnings).
    """
    params = config.field_params()
    grid = config.grid()
    thermal = config["thermal"]
    meta = config.thermal_metadata()
    use_cache = thermal["cache"] if use_cache is None else use_cache
    if path and use_cache:
        cached = load_snapshot(path, meta)
        if cached is not None:
            log.info("using cached thermal ensemble %s", path)
            return FieldEnsemble(cached, grid), []
    ensemble, warnings = spgpe_ensemble(
        params, grid, config.n_traj, config.master_seed, thermal["t_equil"], thermal["dt"], threads
    )
    if path and use_cache:
        save_snapshot(path, ensemble.psi, meta)
    return ensemble, warnings


def run_field(config, threads=None):
    params = config.field_params()
    schedule = config.schedule()
    ensemble, warnings = thermal_ensemble(config, threads, thermal_cache_path(config))
    out = config.output
    result = run_field_protocol(
        params,
        schedule,
        ensemble,
        config.record_points(schedule),
        config.master_seed,
        threads,
        out["level_sigmas"],
        out["n_resamples"],
        keep_records=out["keep_records"],
        records_every=out["record_every"],
    )
    if result.records:
        result.profiles.update(record_profiles(result.records, ensemble.grid))
    result.warnings = warnings + result.warnings
    return result


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _jump_report(result):
    """Per-pulse jump statistics when the record points bracket the pulses."""
    if not any(p.before_pulse and p.time > 0 for p in result.record_points):
        return {}
    report = {}
    for name in JUMP_OBSERVABLES:
        summary = measurement_jumps(result.series[name], result.record_points)
        report[name] = {
            "events": int(len(summary.jumps)),
            "n_positive": summary.n_positive,
            "p_value": summary.p_value,
            "max_abs_z": summary.max_abs_z,
        }
    return report


def write_outputs(result, directory, plots=True):
    """CSV (and optional SVG) per observable; returns {name: relative path}."""
    os.makedirs(directory, exist_ok=True)
    outputs = {}
    for name, series in result.series.items():
        outputs[name] = write_series_csv(os.path.join(directory, f"{name}.csv"), series)
        if plots:
            plot_series(os.path.join(directory, f"{name}.svg"), series)
    for name, profile in getattr(result, "profiles", {}).items():
        outputs[name] = write_profile_csv(os.path.join(directory, f"{name}.csv"), profile)
        if plots:
            plot_profile(os.path.join(directory, f"{name}.svg"), profile)
    dist = getattr(result, "distributions", None)
    if dist:
        for axis in ("Jy", "Jz"):
            key = f"dist_{axis}"
            outputs[key] = write_distribution_csv(
                os.path.join(directory, f"{key}.csv"), dist["times"], dist["centers"], dist[axis]
            )
    return {name: os.path.relpath(path, directory) for name, path in outputs.items()}


def _extra(result):
    extra = {}
    for key, value in result.extra.items():
        if isinstance(value, np.generic):
            value = value.item()
        extra[key] = value
    return extra


def run_single(config, threads=None, directory=None):
    directory = directory or config.output["directory"]
    started = timestamp()
    log.info("run %s -> %s", config.solver, directory)
    if config.experiment == "field":
        result = run_field(config, threads)
    else:
        result = run_two_mode(config, threads)
    outputs = write_outputs(result, directory, config.output["plots"])

    extra = _extra(result)
    jumps = _jump_report(result) if config.experiment == "two_mode" else {}
    if jumps:
        extra["jumps"] = jumps
    manifest = RunManifest(
        config_hash=config.config_hash(),
        code_version=get_code_version(),
        experiment=config.experiment,
        solver=getattr(result, "solver", config.solver),
        level_sigmas=float(config.output["level_sigmas"]),
        started=started,
        finished=timestamp(),
        config=config.data,
        outputs=outputs,
        warnings=list(result.warnings),
        extra=extra,
    )
    write_manifest(directory, manifest)
    return manifest


def run(config, threads=None, out=None):
    """Run a resolved config; a strength sweep gives one sub-run per value.

    Returns the list of written manifests.
    """
    directory = out or config.output["directory"]
    values = config.sweep_values
    if not values:
        return [run_single(config, threads, directory)]
    manifests = []
    for value in values:
        sub = config.with_overrides({"two_mode": {"delta_jz": value}, "sweep": {"delta_jz": None}})
        manifests.append(run_single(sub, threads, os.path.join(directory, f"djz_{value:g}")))
    return manifests


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def compare(manifest_a, manifest_b, sigmas=3.0):
    """Flag every record time where two runs disagree by more than ``sigmas``.

    Each interval is turned back into a standard error (half width divided by
    its level in sigmas) and the two errors are combined in quadrature.
    Returns a result dict with status, issues, totals and ``passed``.
    """
    run_a, dir_a = read_manifest(manifest_a)
    run_b, dir_b = read_manifest(manifest_b)
    shared = sorted(set(run_a.outputs) & set(run_b.outputs))
    shared = [
        name
        for name in shared
        if not name.startswith(("dist_", "record_")) and name not in ("density", "g1")
    ]
    if not shared:
        raise ComparisonError("the runs share no scalar observables", a=manifest_a, b=manifest_b)

    issues = []
    checked = 0
    for name in shared:
        a = read_series_csv(os.path.join(dir_a, run_a.outputs[name]))
        b = read_series_csv(os.path.join(dir_b, run_b.outputs[name]))
        if len(a["time"]) != len(b["time"]) or not np.allclose(a["time"], b["time"], rtol=1e-9, atol=1e-12):
            raise ComparisonError("record grids differ", observable=name)
        sa = 0.5 * (a["ci_upper"] - a["ci_lower"]) / max(run_a.level_sigmas, 1e-300)
        sb = 0.5 * (b["ci_upper"] - b["ci_lower"]) / max(run_b.level_sigmas, 1e-300)
        combined = np.hypot(sa, sb)
        diff = np.abs(a["value"] - b["value"])
        for t, d, s in zip(a["time"], diff, combined):
            checked += 1
            bad = d > sigmas * s if s > 0 else d > 1e-12
            if bad or not np.isfinite(d):
                issues.append(
                    {
                        "object": f"{name}@t={t:.6g}",
                        "message": f"difference {d:.4g} exceeds {sigmas:g} x combined sigma {s:.4g}",
                        "fixed": False,
                    }
                )
    passed = not issues
    return {
        "status": "passed" if passed else "failed",
        "issues": issues,
        "total_checked": checked,
        "total_issues": len(issues),
        "passed": passed,
    }


# ---------------------------------------------------------------------------
# thermal-sample
# ---------------------------------------------------------------------------


def thermal_sample(config, out, threads=None):
    """Generate (or reuse) the SPGPE ensemble for a field config and store it at ``out``."""
    if config.experiment != "field":
        raise ConfigError("thermal-sample needs a field experiment", key="experiment")
    ensemble, warnings = thermal_ensemble(config, threads, out, use_cache=True)
    return out, ensemble.atom_number(), warnings
