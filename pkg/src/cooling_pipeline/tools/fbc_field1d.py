"""
Quasi-1D field engine: truncated-Wigner evolution of a trapped condensate
under stroboscopic phase-contrast imaging and density-derivative feedback.

Units are harmonic-oscillator units (length x0, energy hbar w0, time 1/w0).
Wigner fields carry half a quantum of noise per lattice site, so every
density estimator subtracts 1/(2 dx) and delta functions become
delta_xx' / dx.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from cooling_pipeline.errors import ArgumentError, NumericalDegeneracyError
from cooling_pipeline.tools.fbc_cfTwa import (
    PULSE,
    build_timeline,
    default_record_points,
    segment_steps,
)
from cooling_pipeline.utils.utils_log import getLogger
from cooling_pipeline.utils.utils_parallel import TrajectoryPool
from cooling_pipeline.utils.utils_rng import RngStream, StreamPurpose, sample_complex_gaussian
from cooling_pipeline.utils.utils_sde import check_finite
from cooling_pipeline.utils.utils_stats import (
    BootstrapPlan,
    ObservableSeries,
    ProfileSeries,
    coverage,
    make_ci,
)

log = getLogger("field1d")

FIELD_SCALARS = ("f_frac", "var_p", "N_est")
FIELD_PROFILES = ("density", "g1")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid1D:
    n_points: int
    length: float

    def __post_init__(self):
        n = int(self.n_points)
        if n < 2 or n & (n - 1):
            raise ArgumentError("n_points must be a power of two", n_points=self.n_points)
        if not self.length > 0:
            raise ArgumentError("length must be positive", length=self.length)

    @property
    def dx(self):
        return self.length / self.n_points

    @property
    def x(self):
        return -0.5 * self.length + self.dx * np.arange(self.n_points)

    @property
    def k(self):
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    @property
    def dk(self):
        return 2.0 * np.pi / self.length

    @property
    def k_max(self):
        return np.pi / self.dx

    @property
    def origin_index(self):
        return int(np.argmin(np.abs(self.x)))


@dataclass(frozen=True)
class FieldParams:
    g: float
    r_d: float
    lambda_pc: float
    beta0: float
    k_fb: float
    mu: float = 15.13
    T_tilde: float = 0.0
    gamma_growth: float = 0.0
    n_hg_modes: int = 100
    omega0: float = 1.0
    sigma_smooth: Optional[float] = None

    def __post_init__(self):
        if not self.r_d > 0:
            raise ArgumentError("r_d must be positive", r_d=self.r_d)
        if not self.beta0 > 0:
            raise ArgumentError("beta0 must be positive", beta0=self.beta0)
        if self.omega0 < 0 or self.gamma_growth < 0 or self.T_tilde < 0:
            raise ArgumentError(
                "omega0, gamma_growth and T_tilde must be non-negative",
                omega0=self.omega0,
                gamma_growth=self.gamma_growth,
                T_tilde=self.T_tilde,
            )
        if self.n_hg_modes < 1:
            raise ArgumentError("n_hg_modes must be >= 1", n_hg_modes=self.n_hg_modes)

    @property
    def smoothing(self):
        return self.r_d if self.sigma_smooth is None else self.sigma_smooth

    @property
    def strength(self):
        """lambda * beta0."""
        return self.lambda_pc * self.beta0

    def check_grid(self, grid):
        if not self.r_d > grid.dx:
            raise ArgumentError("diffraction limit is not resolved: need r_d > dx", r_d=self.r_d, dx=grid.dx)
        if self.n_hg_modes > grid.n_points // 2:
            raise ArgumentError(
                "n_hg_modes must be <= n_points/2",
                n_hg_modes=self.n_hg_modes,
                n_points=grid.n_points,
            )


class FieldEnsemble:
    """Wigner fields on a grid, ``psi`` of shape (n_traj, n_points)."""

    def __init__(self, psi, grid):
        psi = np.asarray(psi, dtype=complex)
        if psi.ndim != 2 or psi.shape[1] != grid.n_points:
            raise ArgumentError("psi must have shape (n_traj, n_points)", shape=psi.shape)
        self.psi = psi
        self.grid = grid

    @property
    def n_traj(self):
        return self.psi.shape[0]

    @property
    def trajectories(self):
        return list(self.psi)

    def norms(self):
        return np.sum(np.abs(self.psi) ** 2, axis=1) * self.grid.dx

    def atom_number(self):
        """N_est = sum(<|psi|^2> - 1/(2dx)) dx."""
        return float(self.norms().mean() - 0.5 * self.grid.n_points)


@dataclass
class DensityEstimateRecord:
    """Per-trajectory estimates from one pulse; rows are trajectories ``offset``, ``offset + 1``, ..."""

    n_est: np.ndarray
    n_smoothed: np.ndarray
    V_fb: Optional[np.ndarray] = None
    density: Optional[np.ndarray] = None
    time: Optional[float] = None
    offset: int = 0


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def diffraction_kernel(grid, r_d):
    """Spectral imaging filter exp(-r_d^4 k^4 / 16), equal to 1 at k = 0."""
    if not r_d > 0:
        raise ArgumentError("r_d must be positive", r_d=r_d)
    return np.exp(-(r_d**4) * grid.k**4 / 16.0)


def smoothing_kernel(grid, sigma):
    """Spectral Gaussian exp(-k^2 sigma^2 / 2) (unit area in real space)."""
    return np.exp(-0.5 * (grid.k * sigma) ** 2)


def spectral_convolve(values, kernel):
    """Circular convolution along the last axis with a spectral filter."""
    return np.fft.ifft(np.fft.fft(values, axis=-1) * kernel, axis=-1)


def trap_potential(params, grid):
    return 0.5 * params.omega0**2 * grid.x**2


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------


def max_stable_dt(grid):
    """Spectral stability bound 0.5 * 2 pi / (k_max^2 / 2)."""
    return 2.0 * np.pi / grid.k_max**2


class SplitStepper:
    """Strang splitting with the half kinetic phases cached per step size."""

    def __init__(self, params, grid):
        self.params = params
        self.grid = grid
        self.trap = trap_potential(params, grid)
        self._kinetic = {}

    def half_kinetic(self, dt):
        key = float(dt)
        if key not in self._kinetic:
            self._kinetic[key] = np.exp(-0.25j * self.grid.k**2 * dt)
        return self._kinetic[key]

    def step(self, psi, V_fb, dt):
        half = self.half_kinetic(dt)
        psi = np.fft.ifft(np.fft.fft(psi, axis=-1) * half, axis=-1)
        potential = self.trap + V_fb + self.params.g * np.abs(psi) ** 2
        psi = psi * np.exp(-1j * potential * dt)
        return np.fft.ifft(np.fft.fft(psi, axis=-1) * half, axis=-1)


def split_step(psi, params, grid, V_fb, dt, stepper=None):
    """One Strang step for every row of ``psi`` under the held potential.

    ``V_fb`` may be a single profile or one row per trajectory.
    """
    if not 0 < dt <= max_stable_dt(grid) * (1 + 1e-12):
        raise ArgumentError("dt violates the spectral stability bound", dt=dt, limit=max_stable_dt(grid))
    stepper = stepper or SplitStepper(params, grid)
    if isinstance(psi, FieldEnsemble):
        out = stepper.step(psi.psi, np.asarray(V_fb, dtype=float), dt)
        check_finite(out, dt)
        return FieldEnsemble(out, grid)
    out = stepper.step(np.asarray(psi, dtype=complex), np.asarray(V_fb, dtype=float), dt)
    check_finite(out, dt)
    return out


def evolve_field(psi, stepper, V_fb, span, dt, t_start=0.0, offset=0):
    n, h = segment_steps(span, dt)
    for _ in range(n):
        psi = stepper.step(psi, V_fb, h)
    check_finite(psi, t_start + span, offset)
    return psi


def field_energy(psi, params, grid):
    """Mean GP energy sum(|d_x psi|^2/2 + V|psi|^2 + g|psi|^4/2) dx, spectral derivative."""
    psi = psi.psi if isinstance(psi, FieldEnsemble) else np.atleast_2d(psi)
    deriv = np.fft.ifft(1j * grid.k * np.fft.fft(psi, axis=-1), axis=-1)
    dens = np.abs(psi) ** 2
    per_traj = (
        0.5 * np.abs(deriv) ** 2 + trap_potential(params, grid) * dens + 0.5 * params.g * dens**2
    ).sum(axis=-1) * grid.dx
    return float(per_traj.mean())


# ---------------------------------------------------------------------------
# measurement and feedback
# ---------------------------------------------------------------------------


def draw_light_noise(grid, streams):
    """Theta(x) per trajectory, E|Theta|^2 = 1/(2 dx) at each site."""
    return np.stack([sample_complex_gaussian(s, 0.5 / grid.dx, size=grid.n_points) for s in streams])


def phase_contrast_measure(psi, params, grid, streams=None, theta=None, kernel=None):
    """Image every trajectory once; returns (psi_after, DensityEstimateRecord).

    Either ``streams`` (one per row) or an explicit ``theta`` must be given;
    ``theta = 0`` switches the light noise off.
    """
    as_ensemble = isinstance(psi, FieldEnsemble)
    fields = psi.psi if as_ensemble else np.atleast_2d(np.asarray(psi, dtype=complex))
    if kernel is None:
        kernel = diffraction_kernel(grid, params.r_d)
    if theta is None:
        if streams is None or len(streams) != fields.shape[0]:
            raise ArgumentError("one light-noise stream per trajectory is required")
        theta = draw_light_noise(grid, streams)
    theta = np.broadcast_to(np.asarray(theta, dtype=complex), fields.shape)

    n_in = np.abs(fields) ** 2 - 0.5 / grid.dx
    n_inf = spectral_convolve(n_in, kernel).real
    strength = params.strength
    if strength != 0:
        kick = 2.0 * spectral_convolve(theta, kernel).real
        fields = fields * np.exp(-1j * strength * kick)
        n_est = n_inf - theta.imag / strength
    else:
        # no coupling: the readout carries only light noise
        n_est = -2.0 * theta.imag
    n_smoothed = spectral_convolve(n_est, smoothing_kernel(grid, params.smoothing)).real
    record = DensityEstimateRecord(n_est, n_smoothed, density=n_in)
    if as_ensemble:
        return FieldEnsemble(fields, grid), record
    return fields, record


def feedback_potential(record_j, record_jm1, params, tau):
    """V_fb = k_fb (n~_j - n~_{j-1}) / tau; zero for the first interval."""
    current = record_j.n_smoothed if isinstance(record_j, DensityEstimateRecord) else record_j
    current = np.asarray(current, dtype=float)
    if record_jm1 is None:
        return np.zeros_like(current)
    previous = record_jm1.n_smoothed if isinstance(record_jm1, DensityEstimateRecord) else record_jm1
    return params.k_fb * (current - np.asarray(previous, dtype=float)) / tau


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------


@dataclass
class FieldObservables:
    x: np.ndarray
    density: tuple
    g1: tuple
    f_frac: object
    var_p: object
    N_est: object
    rho: Optional[np.ndarray] = None


def _counts_and_plan(n_traj, plan, n_resamples, seed):
    if n_traj < 2:
        raise ArgumentError("at least two trajectories are required", n_traj=n_traj)
    if plan is None:
        plan = BootstrapPlan.for_run(n_traj, n_resamples, seed)
    return plan


def _top_eigenvalue(gram, weights):
    """Largest eigenvalue of sum_t w_t psi_t* psi_t^T via the trajectory Gram matrix."""
    root = np.sqrt(weights)
    return float(np.linalg.eigvalsh(root[:, None] * gram * root[None, :])[-1])


def _g1_from(cross, dens, origin):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(cross) / np.sqrt(dens[..., origin, None] * dens)
    return np.where((dens > 0) & (dens[..., origin, None] > 0), out, np.nan)


def field_observables(
    ensemble,
    grid=None,
    level_sigmas=2.0,
    n_resamples=200,
    seed=0,
    plan=None,
    full_rho=False,
):
    """Density, g1(x, 0), condensate fraction, momentum variance and N_est.

    The one-body matrix rho(x, x') = <psi*(x) psi(x')> - delta_xx'/(2dx) is
    never formed on the grid: its top eigenvalue comes from the n x n Gram
    matrix of the trajectories, shifted by the half quantum.
    """
    if isinstance(ensemble, FieldEnsemble):
        grid = ensemble.grid
        psi = ensemble.psi
    else:
        psi = np.asarray(ensemble, dtype=complex)
        if grid is None:
            raise ArgumentError("a grid is required for raw field arrays")
    n = psi.shape[0]
    plan = _counts_and_plan(n, plan, n_resamples, seed)
    dx, floor = grid.dx, 0.5 / grid.dx
    origin = grid.origin_index

    occupation = np.abs(psi) ** 2
    norms = occupation.sum(axis=1) * dx
    n_atoms = float(norms.mean() - 0.5 * grid.n_points)
    if not n_atoms > 0:
        raise NumericalDegeneracyError("ensemble has no atoms above the vacuum floor", N_est=n_atoms)
    n_atoms_reps = plan.means(norms) - 0.5 * grid.n_points

    # density and g1
    dens = occupation.mean(axis=0) - floor
    dens_reps = plan.means(occupation) - floor
    cross_terms = np.conj(psi[:, origin, None]) * psi
    cross = cross_terms.mean(axis=0)
    cross[origin] -= floor
    cross_reps = plan.means(cross_terms)
    cross_reps[:, origin] -= floor
    g1 = _g1_from(cross, dens, origin)
    g1_reps = _g1_from(cross_reps, dens_reps, origin)

    # condensate fraction
    gram = psi @ psi.conj().T
    flat = np.full(n, 1.0 / n)
    top = dx * _top_eigenvalue(gram, flat) - 0.5
    frac = top / n_atoms
    frac_reps = np.array(
        [
            (dx * _top_eigenvalue(gram, row / n) - 0.5) / n_rep
            for row, n_rep in zip(plan.counts, n_atoms_reps)
        ]
    )

    # momentum variance
    k = grid.k
    psi_k = np.abs(np.fft.fft(psi, axis=-1) * dx / np.sqrt(2.0 * np.pi)) ** 2
    floor_k = 0.5 / grid.dk

    def momentum_variance(n_k):
        n_k = n_k - floor_k
        total = n_k.sum(axis=-1)
        m1 = (n_k * k).sum(axis=-1) / total
        m2 = (n_k * k**2).sum(axis=-1) / total
        return m2 - m1**2

    var_p = momentum_variance(psi_k.mean(axis=0))
    var_p_reps = momentum_variance(plan.means(psi_k))

    def band(point, reps):
        ci_lo, ci_hi = _pointwise_interval(point, reps, level_sigmas)
        return point, ci_lo, ci_hi

    rho = None
    if full_rho:
        rho = (psi.conj().T @ psi) / n - floor * np.eye(grid.n_points)
    return FieldObservables(
        x=grid.x,
        density=band(dens, dens_reps),
        g1=band(g1, g1_reps),
        f_frac=make_ci(frac, frac_reps, level_sigmas),
        var_p=make_ci(var_p, var_p_reps, level_sigmas),
        N_est=make_ci(n_atoms, n_atoms_reps, level_sigmas),
        rho=rho,
    )


def _pointwise_interval(point, reps, level_sigmas):
    tail = 50.0 * (1.0 - coverage(level_sigmas))
    with np.errstate(invalid="ignore"):
        lo = np.nanpercentile(reps, tail, axis=0)
        hi = np.nanpercentile(reps, 100.0 - tail, axis=0)
    return np.fmin(lo, point), np.fmax(hi, point)


def thomas_fermi_profile(params, N, grid=None):
    """Unit-area Thomas-Fermi density and mu_TF = (3 N g / (4 sqrt 2))^(2/3)."""
    if not params.g > 0:
        raise ArgumentError("Thomas-Fermi profile needs g > 0", g=params.g)
    mu = (3.0 * N * params.g / (4.0 * np.sqrt(2.0))) ** (2.0 / 3.0)
    if grid is None:
        return None, mu
    profile = np.maximum(mu - 0.5 * params.omega0**2 * grid.x**2, 0.0) / params.g
    profile /= profile.sum() * grid.dx
    return profile, mu


def bulk_relative_error(density, grid, profile, mu, fraction=0.8, omega0=1.0):
    """Max relative deviation of a unit-area density from n_TF inside fraction * R_TF."""
    radius = np.sqrt(2.0 * mu) / omega0
    inside = np.abs(grid.x) < fraction * radius
    density = np.asarray(density, dtype=float)
    density = density / (density.sum() * grid.dx)
    return float(np.max(np.abs(density[inside] - profile[inside]) / profile[inside]))


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------


@dataclass
class FieldRunResult:
    series: Dict[str, ObservableSeries]
    profiles: Dict[str, ProfileSeries]
    record_points: list
    final: Optional[FieldObservables] = None
    records: List[DensityEstimateRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


RECORD_PROFILES = {
    "record_density": "density",
    "record_estimate": "n_est",
    "record_smoothed": "n_smoothed",
    "record_V_fb": "V_fb",
}


def record_profiles(records, grid, trajectory=0):
    """One trajectory's kept records as profiles: true density, estimate, smoothed estimate, V_fb.

    A single trajectory has no interval, so the bounds equal the value.
    """
    profiles = {name: ProfileSeries(name, grid.x) for name in RECORD_PROFILES}
    for record in records:
        row = trajectory - record.offset
        if not 0 <= row < record.n_est.shape[0]:
            continue
        for name, attr in RECORD_PROFILES.items():
            values = getattr(record, attr)[row]
            profiles[name].append(record.time, values, values, values)
    return profiles


def run_field_protocol(
    params,
    schedule,
    ensemble,
    record_points=None,
    master_seed=0,
    threads=None,
    level_sigmas=2.0,
    n_resamples=200,
    measure=True,
    keep_records=False,
    chunk_size=16,
    records_every=1,
):
    """Measurement-based cooling of the field ensemble.

    Every trajectory gets its own light noise (FIELD_LIGHT stream i) and its
    own feedback potential, rebuilt from its last two smoothed estimates.
    ``measure=False`` skips the imaging (pure GPE evolution). With
    ``keep_records`` the estimates of every ``records_every``-th pulse come
    back in ``result.records``, chunk by chunk.
    """
    if records_every < 1:
        raise ArgumentError("records_every must be >= 1", records_every=records_every)
    grid = ensemble.grid
    params.check_grid(grid)
    if schedule.dt > max_stable_dt(grid) * (1 + 1e-12):
        raise ArgumentError("dt violates the spectral stability bound", dt=schedule.dt, limit=max_stable_dt(grid))
    if record_points is None:
        record_points = default_record_points(schedule)
    timeline = build_timeline(schedule, record_points)
    kernel = diffraction_kernel(grid, params.r_d)
    n_traj = ensemble.n_traj
    log.info(
        "field: %d trajectories on %d points, %d pulses, lambda*beta0=%.3g, k_fb=%.3g",
        n_traj,
        grid.n_points,
        schedule.n_measurements if measure else 0,
        params.strength,
        params.k_fb,
    )

    def run_chunk(start, stop):
        stepper = SplitStepper(params, grid)
        streams = [RngStream(master_seed, i, StreamPurpose.FIELD_LIGHT) for i in range(start, stop)]
        psi = ensemble.psi[start:stop].copy()
        V = np.zeros(psi.shape)
        snaps = np.empty((len(record_points),) + psi.shape, dtype=complex)
        previous, history = None, []
        t = 0.0
        for time, kind, idx in timeline:
            psi = evolve_field(psi, stepper, V, time - t, schedule.dt, t, start)
            t = time
            if kind == PULSE:
                if not measure:
                    continue
                psi, record = phase_contrast_measure(psi, params, grid, streams, kernel=kernel)
                V = feedback_potential(record, previous, params, schedule.tau)
                record.V_fb = V
                previous = record
                if keep_records and idx % records_every == 0:
                    record.time, record.offset = time, start
                    history.append(record)
            else:
                snaps[idx] = psi
        return snaps, history

    pool = TrajectoryPool(threads, desc="field")
    chunks = pool.map_chunks(run_chunk, n_traj, chunk_size)
    plan = BootstrapPlan.for_run(n_traj, n_resamples, master_seed)

    series = {name: ObservableSeries(name) for name in FIELD_SCALARS}
    profiles = {name: ProfileSeries(name, grid.x) for name in FIELD_PROFILES}
    result = FieldRunResult(series, profiles, list(record_points))
    for r, point in enumerate(record_points):
        psi_r = np.concatenate([snaps[r] for snaps, _ in chunks])
        obs = field_observables(FieldEnsemble(psi_r, grid), level_sigmas=level_sigmas, plan=plan)
        series["f_frac"].append(point.time, obs.f_frac)
        series["var_p"].append(point.time, obs.var_p)
        series["N_est"].append(point.time, obs.N_est)
        profiles["density"].append(point.time, *obs.density)
        profiles["g1"].append(point.time, *obs.g1)
        result.final = obs
        log.debug("t=%.4g f_frac=%.4f var_p=%.4g", point.time, obs.f_frac.point_estimate, obs.var_p.point_estimate)

    if keep_records:
        result.records = [rec for _, history in chunks for rec in history]
    result.extra["energy"] = field_energy(np.concatenate([s[-1] for s, _ in chunks]), params, grid)
    return result
