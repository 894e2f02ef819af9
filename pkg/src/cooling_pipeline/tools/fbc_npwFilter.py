"""
Number-phase Wigner particle filter.

One conditional trajectory is represented by a swarm of weighted
fictitious trajectories that share a single measurement-noise stream dW.
During a measurement pulse of duration t_p every particle picks up its own
relative-phase noise dV and the weights follow the measured current

    dy = <J_z> dt + dW / (2 sqrt(gamma)),

with gamma t_p = lambda^2 beta0^2 tying the filter to the stroboscopic
pulse strength. Weights are kept as logs and max-normalized each substep.
"""

from dataclasses import dataclass

import numpy as np

from cooling_pipeline.errors import ArgumentError, FilterCollapseError
from cooling_pipeline.tools.fbc_cfTwa import (
    MODE_SIGN,
    PULSE,
    TwoModeRunResult,
    build_timeline,
    default_record_points,
    evolve,
    series_from_features,
    wigner_drift,
)
from cooling_pipeline.tools.fbc_spinSystem import (
    FEATURES,
    jz_wigner,
    renormalize_to_N,
    wigner_features,
    wigner_shell,
)
from cooling_pipeline.utils.utils_log import getLogger
from cooling_pipeline.utils.utils_parallel import TrajectoryPool
from cooling_pipeline.utils.utils_rng import RngStream, StreamPurpose
from cooling_pipeline.utils.utils_sde import midpoint_step
from cooling_pipeline.utils.utils_stats import BootstrapPlan

log = getLogger("npw_filter")

DEFAULT_SUBSTEPS = 20
DEFAULT_RESAMPLE_THRESHOLD = 0.5

# l_m = (-1)^m
MODE_L = -MODE_SIGN


@dataclass(frozen=True)
class NpwCalibration:
    gamma: float
    t_p_npw: float

    @property
    def strength(self):
        """gamma * t_p, equal to lambda^2 beta0^2."""
        return self.gamma * self.t_p_npw


def calibrate(params, t_p_npw, dt_cf=None):
    """gamma = lambda^2 beta0^2 / t_p; warns when the pulse is not short against dt_cf."""
    if not t_p_npw > 0:
        raise ArgumentError("t_p_npw must be positive", t_p_npw=t_p_npw)
    if dt_cf is not None and t_p_npw >= dt_cf:
        log.warning("NPW pulse %.3g is not short against the CF step %.3g", t_p_npw, dt_cf)
    return NpwCalibration((params.lam * params.beta0) ** 2 / t_p_npw, t_p_npw)


class NpwSwarm:
    """Particles of one conditional trajectory plus its two noise streams."""

    def __init__(self, alpha, record_stream, particle_stream, log_weight=None):
        self.alpha = np.asarray(alpha, dtype=complex)
        n = self.alpha.shape[0]
        self.log_weight = np.zeros(n) if log_weight is None else np.asarray(log_weight, dtype=float)
        self.record_stream = record_stream
        self.particle_stream = particle_stream
        self.resample_count = 0

    @property
    def n_particles(self):
        return self.alpha.shape[0]

    def weights(self):
        """Normalized weights."""
        w = np.exp(self.log_weight - np.max(self.log_weight))
        return w / w.sum()

    def normalize(self):
        top = np.max(self.log_weight)
        if not np.isfinite(top):
            raise FilterCollapseError("all particle weights vanished")
        self.log_weight = self.log_weight - top

    def conditional_features(self, params):
        """Weighted feature row: the conditional expectations of this swarm."""
        return self.weights() @ wigner_features(self.alpha, params)


def ess(swarm_or_log_weights):
    """(sum w)^2 / sum w^2."""
    if isinstance(swarm_or_log_weights, NpwSwarm):
        lw = swarm_or_log_weights.log_weight
    else:
        lw = np.asarray(swarm_or_log_weights, dtype=float)
    w = np.exp(lw - np.max(lw))
    return float(w.sum() ** 2 / np.sum(w**2))


def systematic_indices(weights, uniform):
    """Systematic resampling: one uniform offset, positions (k + U)/n against the CDF."""
    n = len(weights)
    positions = (np.arange(n) + uniform) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right")


def kitagawa_resample(swarm, stream=None):
    """Replace the particles by systematic offspring; weights reset to uniform."""
    stream = stream or swarm.particle_stream
    gen = stream.generator if isinstance(stream, RngStream) else stream
    idx = systematic_indices(swarm.weights(), gen.uniform())
    swarm.alpha = swarm.alpha[idx]
    swarm.log_weight = np.zeros(swarm.n_particles)
    swarm.resample_count += 1
    return swarm


def npw_measurement_pulse(
    swarm,
    calibration,
    params=None,
    u_held=0.0,
    n_substeps=DEFAULT_SUBSTEPS,
    resample_threshold=None,
    freeze_atoms=False,
):
    """Integrate one pulse; returns (swarm, J_z estimate).

    The estimate is the integrated current over t_p. With gamma = 0 the
    weights are left alone and the estimate is NaN (no information).
    ``freeze_atoms`` drops the Hamiltonian drift (the phase noise never
    changes J_z).
    """
    gamma = calibration.gamma
    h = calibration.t_p_npw / n_substeps
    sqrt_h = np.sqrt(h)
    sg = np.sqrt(gamma)
    record = swarm.record_stream.generator
    particles = swarm.particle_stream.generator
    total_current = 0.0

    for _ in range(n_substeps):
        dW = record.standard_normal() * sqrt_h
        dV = particles.standard_normal(swarm.n_particles) * sqrt_h
        phase_kick = -0.5j * sg * MODE_L * dV[:, None]

        def increment(a):
            inc = phase_kick * a
            if not freeze_atoms:
                inc = inc + wigner_drift(a, params, u_held) * h
            return inc

        swarm.alpha, half = midpoint_step(swarm.alpha, increment)
        if gamma == 0:
            continue

        j_mid = jz_wigner(half)
        w = swarm.weights()
        mean = float(w @ j_mid)
        swarm.log_weight = (
            swarm.log_weight - 2.0 * gamma * (j_mid - mean) ** 2 * h + 2.0 * sg * j_mid * dW
        )
        swarm.normalize()
        total_current += mean * h + dW / (2.0 * sg)
        if resample_threshold is not None and ess(swarm) < resample_threshold * swarm.n_particles:
            kitagawa_resample(swarm)

    if gamma == 0:
        return swarm, float("nan")
    return swarm, total_current / calibration.t_p_npw


def estimate_variance(calibration):
    """Variance of the single-pulse estimate, 1/(4 gamma t_p) = 1/(2 lambda beta0)^2."""
    return 1.0 / (4.0 * calibration.gamma * calibration.t_p_npw)


def run_npw_protocol(
    params,
    schedule,
    calibration,
    n_conditional,
    n_particles,
    initial_sampler,
    record_points=None,
    master_seed=0,
    threads=None,
    level_sigmas=2.0,
    n_resamples=1000,
    n_substeps=DEFAULT_SUBSTEPS,
    resample_threshold=DEFAULT_RESAMPLE_THRESHOLD,
    chunk_size=8,
):
    """Unconditional moments from ``n_conditional`` filtered trajectories.

    ``initial_sampler(n, master_seed, start_index)`` returns a TwoModeEnsemble
    of n particles; conditional trajectory c uses particle streams
    c * n_particles .. (c + 1) * n_particles - 1. Feedback uses the filter's
    J_z estimate directly: u = k_fb (J_j - J_{j-1}) / tau.
    """
    if n_particles < 2:
        raise ArgumentError("n_particles must be >= 2", n_particles=n_particles)
    if n_conditional < 2:
        raise ArgumentError("n_conditional must be >= 2", n_conditional=n_conditional)
    if record_points is None:
        record_points = default_record_points(schedule)
    timeline = build_timeline(schedule, record_points)
    log.info(
        "npw: %d conditional x %d particles, gamma=%.4g, t_p=%.4g",
        n_conditional,
        n_particles,
        calibration.gamma,
        calibration.t_p_npw,
    )
    shell = wigner_shell(params.N)
    resamples = []

    def run_chunk(start, stop):
        rows = np.empty((stop - start, len(record_points), len(FEATURES)))
        for c in range(start, stop):
            init = initial_sampler(n_particles, master_seed, c * n_particles)
            swarm = NpwSwarm(
                renormalize_to_N(init.alpha, shell),
                RngStream(master_seed, c, StreamPurpose.RECORD),
                RngStream(master_seed, c, StreamPurpose.PARTICLE),
            )
            t, u, est_prev = 0.0, 0.0, None
            for time, kind, idx in timeline:
                swarm.alpha = evolve(swarm.alpha, params, u, time - t, schedule.dt, t)
                t = time
                if kind == PULSE:
                    swarm, est = npw_measurement_pulse(
                        swarm,
                        calibration,
                        params,
                        u,
                        n_substeps,
                        resample_threshold,
                    )
                    kitagawa_resample(swarm)
                    swarm.alpha = renormalize_to_N(swarm.alpha, shell)
                    if est_prev is None or not np.isfinite(est) or not np.isfinite(est_prev):
                        u = 0.0
                    else:
                        u = params.k_fb * (est - est_prev) / schedule.tau
                    est_prev = est
                else:
                    rows[c - start, idx] = swarm.conditional_features(params)
            resamples.append(swarm.resample_count)
        return rows

    pool = TrajectoryPool(threads, desc="npw")
    rows = np.concatenate(pool.map_chunks(run_chunk, n_conditional, chunk_size))
    plan = BootstrapPlan.for_run(n_conditional, n_resamples, master_seed)
    snapshots = [rows[:, r, :] for r in range(len(record_points))]
    series = series_from_features(snapshots, record_points, plan, level_sigmas)
    result = TwoModeRunResult("npw", series, list(record_points))
    result.extra["resamples"] = int(sum(resamples))
    return result
