"""
Coherent-feedback truncated-Wigner solver for the two-mode system.

Each trajectory carries its own light noise and therefore its own
measurement record: between pulses the amplitudes follow the Wigner drift of
    H = chi (n1^2 + n2^2) / 2 + kappa (a1+ a2 + a2+ a1) + u J_z,
each stroboscopic pulse is applied through its analytic map, and the
feedback strength u is rebuilt from the difference of the last two
quadrature readouts. Observables are reduced over trajectories afterwards,
in trajectory order.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import binomtest

from cooling_pipeline.errors import ArgumentError
from cooling_pipeline.tools.fbc_spinSystem import (
    OBSERVABLES,
    jz_wigner,
    renormalize_to_N,
    spin_histograms,
    summarize_features,
    wigner_features,
    wigner_shell,
)
from cooling_pipeline.utils.utils_log import getLogger
from cooling_pipeline.utils.utils_parallel import TrajectoryPool
from cooling_pipeline.utils.utils_rng import RngStream, StreamPurpose, sample_complex_gaussian
from cooling_pipeline.utils.utils_sde import check_finite
from cooling_pipeline.utils.utils_stats import BootstrapPlan, ObservableSeries

log = getLogger("cf_twa")

# per-mode sign of J_z: +1 for mode 1, -1 for mode 2
MODE_SIGN = np.array([1.0, -1.0])

LIGHT_NOISE_VARIANCE = 0.5

# event ordering at equal times
RECORD_BEFORE, PULSE, RECORD_AFTER = 0, 1, 2
_TIME_TOL = 1e-9


# ---------------------------------------------------------------------------
# schedule and timeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolSchedule:
    """Stroboscopic protocol: pulses at t_j = j * tau, j = 0 .. n_measurements-1."""

    tau: float
    t_p: float
    n_measurements: int
    dt: float
    t_total: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ArgumentError("tau must be positive", tau=self.tau)
        if self.n_measurements < 0:
            raise ArgumentError("n_measurements must be >= 0", n_measurements=self.n_measurements)
        if not 0 < self.t_p <= self.tau / 10.0 * (1 + 1e-12):
            raise ArgumentError("pulse width must satisfy 0 < t_p <= tau/10", t_p=self.t_p, tau=self.tau)
        if not 0 < self.dt <= self.tau / 20.0 * (1 + 1e-12):
            raise ArgumentError("integrator step must satisfy 0 < dt <= tau/20", dt=self.dt, tau=self.tau)
        if self.n_measurements * self.tau > self.t_total * (1 + 1e-12):
            raise ArgumentError(
                "schedule must satisfy n_measurements * tau <= t_total",
                n_measurements=self.n_measurements,
                tau=self.tau,
                t_total=self.t_total,
            )

    @classmethod
    def with_defaults(cls, n_measurements, tau, dt=None, t_p=None, t_total=None):
        return cls(
            tau=tau,
            t_p=tau / 100.0 if t_p is None else t_p,
            n_measurements=n_measurements,
            dt=tau / 100.0 if dt is None else dt,
            t_total=n_measurements * tau if t_total is None else t_total,
        )

    def measurement_times(self):
        return [j * self.tau for j in range(self.n_measurements)]


def default_tau(kappa, n_measurements=62, rabi_periods=1.0):
    """Spacing that lets n_measurements span ``rabi_periods`` Rabi periods pi/kappa.

    The feedback turns the spin by k_fb * (J_z,j - J_z,j-1) per interval, a
    loop gain that grows with tau.
    """
    return rabi_periods * (np.pi / kappa) / n_measurements


@dataclass(frozen=True)
class RecordPoint:
    """Observation time; ``before_pulse`` puts it just ahead of a pulse at that time."""

    time: float
    before_pulse: bool = False


def default_record_points(schedule, every=1, brackets=False):
    """Initial state, every ``every``-th post-pulse state and the final state.

    With ``brackets`` every pulse gets a before/after pair (for jump analysis).
    """
    points = [RecordPoint(0.0, before_pulse=True)]
    times = schedule.measurement_times()
    for j, t in enumerate(times):
        if brackets:
            if j > 0:
                points.append(RecordPoint(t, before_pulse=True))
            points.append(RecordPoint(t))
        elif j % every == 0:
            points.append(RecordPoint(t))
    last = times[-1] if times else 0.0
    if schedule.t_total > last + _TIME_TOL * max(1.0, schedule.tau) or not times:
        points.append(RecordPoint(schedule.t_total))
    return points


def pulse_bracketing_points(schedule):
    """Before/after record pairs at every pulse."""
    points = []
    for t in schedule.measurement_times():
        points.append(RecordPoint(t, before_pulse=True))
        points.append(RecordPoint(t))
    return points


def build_timeline(schedule, record_points):
    """Sorted (time, kind, index) events; record times are snapped onto pulse times."""
    tol = _TIME_TOL * max(1.0, schedule.tau)
    pulse_times = schedule.measurement_times()
    events = [(t, PULSE, j) for j, t in enumerate(pulse_times)]
    for r, point in enumerate(record_points):
        t = float(point.time)
        if t < -tol or t > schedule.t_total + tol:
            raise ArgumentError("record time outside the protocol", time=t, t_total=schedule.t_total)
        for tp in pulse_times:
            if abs(t - tp) <= tol:
                t = tp
                break
        t = min(max(t, 0.0), schedule.t_total)
        events.append((t, RECORD_BEFORE if point.before_pulse else RECORD_AFTER, r))
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    return events


def segment_steps(span, dt):
    """Number of equal steps (each <= dt) covering ``span`` and their size."""
    if span <= 0:
        return 0, 0.0
    n = int(np.ceil(span / dt - 1e-9))
    n = max(n, 1)
    return n, span / n


# ---------------------------------------------------------------------------
# single-step physics
# ---------------------------------------------------------------------------


def epsilon_scale(params):
    """Quadrature-to-J_z scale 1/(2 lambda beta0); equals the single-shot uncertainty."""
    if not params.lam > 0 or not params.beta0 > 0:
        raise ArgumentError("lambda and beta0 must be positive", lam=params.lam, beta0=params.beta0)
    return 1.0 / (2.0 * params.lam * params.beta0)


def wigner_drift(alpha, params, u):
    """d(alpha)/dt between pulses; ``u`` is a scalar or one value per trajectory."""
    p = np.abs(alpha) ** 2
    u = np.asarray(u, dtype=float)
    level = 0.5 * params.chi * (2.0 * p - 1.0) + 0.5 * MODE_SIGN * u[..., None]
    return -1j * (level * alpha + params.kappa * alpha[..., ::-1])


def hamiltonian_step(alpha, params, u_held, dt):
    """One classical RK4 step of the deterministic drift with the feedback held at u_held."""
    k1 = wigner_drift(alpha, params, u_held)
    k2 = wigner_drift(alpha + 0.5 * dt * k1, params, u_held)
    k3 = wigner_drift(alpha + 0.5 * dt * k2, params, u_held)
    k4 = wigner_drift(alpha + dt * k3, params, u_held)
    return alpha + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def evolve(alpha, params, u_held, span, dt, t_start=0.0, offset=0):
    """Integrate over ``span`` in steps of at most ``dt``; divergence is reported with its time."""
    n, h = segment_steps(span, dt)
    for _ in range(n):
        alpha = hamiltonian_step(alpha, params, u_held, h)
    if n:
        check_finite(alpha, t_start + span, offset)
    return alpha


def entangling_pulse(alpha, params, stream=None, theta=None, counter_rotate=True):
    """Analytic atom-light pulse.

    The light enters as beta0 + Theta with E|Theta|^2 = 1/2 (drawn from
    ``stream`` unless ``theta`` is given). Mode m picks up the phase
    -s_m lambda (|beta_in|^2 - 1/2) / 2 and the light the phase -lambda J_z
    (J_z taken before the pulse). The counter-rotation removes the mean
    lambda |beta0|^2 part. Returns (alpha, beta_out).
    """
    alpha = np.asarray(alpha, dtype=complex)
    if theta is None:
        if stream is None:
            raise ArgumentError("entangling_pulse needs a stream or explicit light noise")
        size = alpha.shape[:-1] or None
        theta = sample_complex_gaussian(stream, LIGHT_NOISE_VARIANCE, size=size)
    theta = np.asarray(theta, dtype=complex)
    beta0 = params.beta0
    jz = jz_wigner(alpha)

    # |beta_in|^2 - beta0^2 written out to avoid cancelling two large numbers
    excess = 2.0 * beta0 * theta.real + np.abs(theta) ** 2
    photons = excess - 0.5 if counter_rotate else beta0**2 + excess - 0.5
    phase = -0.5 * params.lam * MODE_SIGN * np.asarray(photons)[..., None]
    alpha_out = alpha * np.exp(1j * phase)
    beta_out = (beta0 + theta) * np.exp(-1j * params.lam * jz)
    return alpha_out, beta_out


def quadrature(beta):
    """Homodyne readout y = i(beta - beta*) = -2 Im(beta)."""
    return -2.0 * np.imag(beta)


def feedback_update(y_j, y_jm1, params, schedule):
    """Held feedback u = eps k_fb (y_j - y_{j-1}) / tau; zero when there is no previous readout."""
    y_j = np.asarray(y_j, dtype=float)
    if y_jm1 is None or params.k_fb == 0:
        return np.zeros_like(y_j)
    return epsilon_scale(params) * params.k_fb * (y_j - np.asarray(y_jm1, dtype=float)) / schedule.tau


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------


@dataclass
class TwoModeRunResult:
    solver: str
    series: Dict[str, ObservableSeries]
    record_points: List[RecordPoint]
    distributions: Optional[dict] = None
    warnings: List[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def series_from_features(snapshots, record_points, plan, level_sigmas, names=OBSERVABLES):
    """One ObservableSeries per name from per-record feature tables."""
    series = {name: ObservableSeries(name) for name in names}
    for point, features in zip(record_points, snapshots):
        cis = summarize_features(features, plan, level_sigmas, names)
        for name in names:
            series[name].append(point.time, cis[name])
    return series


def run_cf_protocol(
    params,
    schedule,
    initial,
    record_points=None,
    master_seed=0,
    threads=None,
    level_sigmas=2.0,
    n_resamples=1000,
    pulses=True,
    light_noise=True,
    distributions=False,
    chunk_size=256,
):
    """Unconditional CF-TWA run; returns a TwoModeRunResult.

    ``pulses=False`` switches the measurement off entirely (pure Hamiltonian
    reference), ``light_noise=False`` keeps the pulses but drops Theta.
    """
    if record_points is None:
        record_points = default_record_points(schedule)
    n_traj = initial.n_traj
    if n_traj < 2:
        raise ArgumentError("at least two trajectories are required", n_traj=n_traj)
    timeline = build_timeline(schedule, record_points)
    n_meas = schedule.n_measurements
    log.info(
        "cf-twa: %d trajectories, %d measurements, %d record points",
        n_traj,
        n_meas,
        len(record_points),
    )

    def run_chunk(start, stop):
        shell = wigner_shell(params.N)
        alpha = renormalize_to_N(initial.alpha[start:stop], shell, offset=start)
        n = stop - start
        theta = np.zeros((n, n_meas), dtype=complex)
        if light_noise and n_meas:
            for i in range(n):
                stream = RngStream(master_seed, start + i, StreamPurpose.LIGHT)
                theta[i] = sample_complex_gaussian(stream, LIGHT_NOISE_VARIANCE, size=n_meas)
        u = np.zeros(n)
        y_prev = None
        t = 0.0
        snaps = [None] * len(record_points)
        for time, kind, idx in timeline:
            alpha = evolve(alpha, params, u, time - t, schedule.dt, t, start)
            t = time
            if kind == PULSE:
                if not pulses:
                    continue
                alpha, beta = entangling_pulse(alpha, params, theta=theta[:, idx])
                y = quadrature(beta)
                u = feedback_update(y, y_prev, params, schedule)
                y_prev = y
                alpha = renormalize_to_N(alpha, shell, offset=start)
            else:
                snaps[idx] = (wigner_features(alpha, params), alpha.copy() if distributions else None)
        return snaps

    pool = TrajectoryPool(threads, desc="cf-twa")
    chunks = pool.map_chunks(run_chunk, n_traj, chunk_size)

    plan = BootstrapPlan.for_run(n_traj, n_resamples, master_seed)
    features = [np.concatenate([c[r][0] for c in chunks]) for r in range(len(record_points))]
    series = series_from_features(features, record_points, plan, level_sigmas)
    result = TwoModeRunResult("cf", series, list(record_points))

    if distributions:
        dist = {"times": [], "Jy": [], "Jz": []}
        for r, point in enumerate(record_points):
            alpha = np.concatenate([c[r][1] for c in chunks])
            centers, hist = spin_histograms(alpha, params.N)
            dist["times"].append(point.time)
            dist["Jy"].append(hist["Jy"])
            dist["Jz"].append(hist["Jz"])
        dist["centers"] = centers
        result.distributions = dist
    return result


# ---------------------------------------------------------------------------
# measurement-jump analysis
# ---------------------------------------------------------------------------


@dataclass
class JumpSummary:
    times: np.ndarray
    jumps: np.ndarray
    sigmas: np.ndarray
    n_positive: int
    p_value: float

    @property
    def max_abs_z(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.jumps) / self.sigmas
        z = np.where(self.sigmas > 0, z, np.where(self.jumps == 0, 0.0, np.inf))
        return float(np.max(z)) if len(z) else 0.0


def measurement_jumps(series, record_points):
    """Change of an observable across every pulse bracketed by a before/after pair.

    The p-value is a one-sided sign test for "jumps are positive".
    """
    times, jumps, sigmas = [], [], []
    for i in range(len(record_points) - 1):
        a, b = record_points[i], record_points[i + 1]
        same_time = abs(a.time - b.time) <= _TIME_TOL * max(1.0, abs(a.time))
        if a.before_pulse and not b.before_pulse and same_time:
            ca, cb = series.cis[i], series.cis[i + 1]
            times.append(a.time)
            jumps.append(cb.point_estimate - ca.point_estimate)
            sigmas.append(np.hypot(ca.sigma, cb.sigma))
    jumps = np.asarray(jumps)
    n_pos = int(np.sum(jumps > 0))
    p = binomtest(n_pos, len(jumps), 0.5, alternative="greater").pvalue if len(jumps) else 1.0
    return JumpSummary(np.asarray(times), jumps, np.asarray(sigmas), n_pos, float(p))
