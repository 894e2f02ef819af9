"""
Simple-growth stochastic projected GPE in the Hermite-Gauss basis.

The field is kept as coefficients c_n on the lowest ``n_hg_modes`` trap
eigenfunctions. Each step solves

    dc_n = -(i + gamma)(eps_n - mu) c_n dt - (i + gamma) P{g |psi|^2 psi}_n dt + dW_n

with the linear part exactly (interaction picture RK4) and the noise added
as the exact Ornstein-Uhlenbeck increment of the linear part, so for g = 0
the stationary occupations are T / (eps_n - mu) at any step size. The
projected nonlinearity is evaluated on Gauss-Hermite nodes, which makes the
projection exact for the quartic integrand.
"""

import numpy as np
from numpy.polynomial.hermite import hermgauss

from cooling_pipeline.errors import ArgumentError
from cooling_pipeline.tools.fbc_field1d import FieldEnsemble
from cooling_pipeline.utils.utils_log import getLogger
from cooling_pipeline.utils.utils_parallel import TrajectoryPool
from cooling_pipeline.utils.utils_rng import RngStream, StreamPurpose, sample_complex_gaussian
from cooling_pipeline.utils.utils_sde import check_finite

log = getLogger("spgpe")

NORM_DRIFT_TOLERANCE = 0.01


def hg_basis(n_modes, x, omega0=1.0):
    """Orthonormal trap eigenfunctions phi_n(x), shape (n_modes, len(x)).

    phi_{n+1} = sqrt(2/(n+1)) xi phi_n - sqrt(n/(n+1)) phi_{n-1}, xi = sqrt(omega0) x.
    """
    if n_modes < 1:
        raise ArgumentError("n_modes must be >= 1", n_modes=n_modes)
    if not omega0 > 0:
        raise ArgumentError("the Hermite-Gauss basis needs a trap, omega0 > 0", omega0=omega0)
    x = np.asarray(x, dtype=float)
    xi = np.sqrt(omega0) * x
    phi = np.empty((n_modes,) + x.shape)
    phi[0] = omega0**0.25 * np.pi**-0.25 * np.exp(-0.5 * xi**2)
    if n_modes > 1:
        phi[1] = np.sqrt(2.0) * xi * phi[0]
    for n in range(1, n_modes - 1):
        phi[n + 1] = np.sqrt(2.0 / (n + 1)) * xi * phi[n] - np.sqrt(n / (n + 1.0)) * phi[n - 1]
    return phi


def hg_energies(n_modes, omega0=1.0):
    return omega0 * (np.arange(n_modes) + 0.5)


def thermal_occupations(params):
    """Non-interacting stationary occupations T / (eps_n - mu), NaN where eps_n <= mu."""
    eps = hg_energies(params.n_hg_modes, params.omega0)
    gap = eps - params.mu
    with np.errstate(divide="ignore", invalid="ignore"):
        occ = params.T_tilde / gap
    return np.where(gap > 0, occ, np.nan)


class HermiteGaussProjector:
    """Mode energies, quadrature nodes and the grid map for one basis size."""

    def __init__(self, n_modes, omega0=1.0):
        self.n_modes = int(n_modes)
        self.omega0 = float(omega0)
        self.energies = hg_energies(self.n_modes, self.omega0)
        # 2M nodes integrate products of four basis functions exactly
        z, w = hermgauss(2 * self.n_modes)
        scale = np.sqrt(2.0 * self.omega0)
        self.nodes = z / scale
        self.weights = np.exp(np.log(w) + z**2) / scale
        self.phi_nodes = hg_basis(self.n_modes, self.nodes, self.omega0)

    def to_nodes(self, c):
        return c @ self.phi_nodes

    def nonlinear(self, c, g):
        """P{g |psi|^2 psi}_n for each row of coefficients."""
        psi = self.to_nodes(c)
        return g * ((np.abs(psi) ** 2 * psi * self.weights) @ self.phi_nodes.T)

    def to_grid(self, c, x):
        return c @ hg_basis(self.n_modes, x, self.omega0)

    def from_grid(self, psi, grid):
        return (psi @ hg_basis(self.n_modes, grid.x, self.omega0).T) * grid.dx


class SpgpeIntegrator:
    """RK4 in the interaction picture plus exact OU noise for the linear part."""

    def __init__(self, params, dt, projector=None):
        if not dt > 0:
            raise ArgumentError("dt must be positive", dt=dt)
        self.params = params
        self.dt = float(dt)
        self.projector = projector or HermiteGaussProjector(params.n_hg_modes, params.omega0)
        gamma = params.gamma_growth
        eps_max = self.projector.energies[-1]
        if gamma * dt * eps_max >= 0.1:
            raise ArgumentError(
                "SPGPE step too large: need gamma * dt * eps_max < 0.1",
                gamma=gamma,
                dt=dt,
                eps_max=eps_max,
            )
        self.rate = (1j + gamma) * (self.projector.energies - params.mu)
        self.half = np.exp(-0.5 * self.rate * dt)
        self.full = self.half**2
        damping = 2.0 * self.rate.real * dt
        with np.errstate(divide="ignore", invalid="ignore"):
            shape = np.where(damping != 0, -np.expm1(-damping) / damping, 1.0)
        self.noise_variance = 2.0 * gamma * params.T_tilde * dt * shape

    def _nl(self, c):
        return -(1j + self.params.gamma_growth) * self.projector.nonlinear(c, self.params.g)

    def deterministic(self, c):
        h = self.dt
        if self.params.g == 0:
            return c * self.full
        c_i = c * self.half
        k1 = self.half * self._nl(c)
        k2 = self._nl(c_i + 0.5 * h * k1)
        k3 = self._nl(c_i + 0.5 * h * k2)
        k4 = self._nl(self.half * (c_i + h * k3))
        return self.half * (c_i + h * (k1 + 2.0 * k2 + 2.0 * k3) / 6.0) + h * k4 / 6.0

    def step(self, c, generators=None):
        out = self.deterministic(c)
        if generators is not None and self.params.gamma_growth > 0:
            noise = np.stack(
                [sample_complex_gaussian(gen, 1.0, size=self.projector.n_modes) for gen in generators]
            )
            out = out + noise * np.sqrt(self.noise_variance)
        return out


def norm_drift(norm_history):
    """Relative norm trend per unit time over the second half of the history.

    A least-squares slope, divided by the mean norm of the window, so the
    thermal number fluctuations of a few samples do not read as drift.
    None when fewer than two samples are in the window.
    """
    history = np.asarray(norm_history, dtype=float)
    window = history[len(history) // 2 :]
    if len(window) < 2:
        return None
    mean = window.mean()
    if mean <= 0:
        return None
    slope = np.polyfit(np.arange(len(window), dtype=float), window, 1)[0]
    return float(abs(slope) / mean)


def _drift_warning(norm_history, label):
    drift = norm_drift(norm_history)
    if drift is not None and drift > NORM_DRIFT_TOLERANCE:
        message = f"{label}: norm still drifting {100 * drift:.2f}% per unit time at the end of equilibration"
        log.warning(message)
        return message
    return None


def evolve_coefficients(c, integrator, t_span, generators=None, offset=0, norms=None):
    """Advance coefficients by t_span; appends the ensemble-mean norm every unit time to ``norms``."""
    n_steps = int(round(t_span / integrator.dt))
    per_unit = max(int(round(1.0 / integrator.dt)), 1)
    for s in range(1, n_steps + 1):
        c = integrator.step(c, generators)
        if s % per_unit == 0:
            check_finite(c, s * integrator.dt, offset)
            if norms is not None:
                norms.append(float(np.mean(np.sum(np.abs(c) ** 2, axis=-1))))
    check_finite(c, n_steps * integrator.dt, offset)
    return c


def spgpe_thermalize(params, grid, stream, t_equil, dt, c0=None):
    """One thermal field on the grid, from vacuum (or ``c0``) after t_equil."""
    integrator = SpgpeIntegrator(params, dt)
    gen = stream.generator if isinstance(stream, RngStream) else stream
    c = np.zeros((1, params.n_hg_modes), dtype=complex) if c0 is None else np.atleast_2d(c0).astype(complex)
    norms = []
    c = evolve_coefficients(c, integrator, t_equil, [gen], norms=norms)
    _drift_warning(norms, "spgpe")
    return integrator.projector.to_grid(c, grid.x)[0]


def spgpe_ensemble(params, grid, n_traj, master_seed, t_equil, dt, threads=None, chunk_size=8):
    """Independent thermal samples; trajectory i uses SPGPE stream i.

    Returns (FieldEnsemble, warnings).
    """
    params.check_grid(grid)
    log.info(
        "spgpe: %d samples, %d modes, mu=%.4g T=%.4g gamma=%.3g t_equil=%.3g",
        n_traj,
        params.n_hg_modes,
        params.mu,
        params.T_tilde,
        params.gamma_growth,
        t_equil,
    )
    integrator = SpgpeIntegrator(params, dt)
    basis = hg_basis(params.n_hg_modes, grid.x, params.omega0)
    warnings = []

    def run_chunk(start, stop):
        gens = [RngStream(master_seed, i, StreamPurpose.SPGPE).generator for i in range(start, stop)]
        c = np.zeros((stop - start, params.n_hg_modes), dtype=complex)
        norms = []
        c = evolve_coefficients(c, integrator, t_equil, gens, offset=start, norms=norms)
        message = _drift_warning(norms, f"spgpe chunk {start}-{stop}")
        if message:
            warnings.append(message)
        return c @ basis

    pool = TrajectoryPool(threads, desc="spgpe")
    psi = np.concatenate(pool.map_chunks(run_chunk, n_traj, chunk_size))
    return FieldEnsemble(psi, grid), sorted(warnings)


def mode_occupations(params, n_traj, master_seed, t_equil, t_average, dt, sample_every=1.0):
    """Time- and ensemble-averaged <|c_n|^2> after equilibration (basis-space check)."""
    integrator = SpgpeIntegrator(params, dt)
    gens = [RngStream(master_seed, i, StreamPurpose.SPGPE).generator for i in range(n_traj)]
    c = np.zeros((n_traj, params.n_hg_modes), dtype=complex)
    c = evolve_coefficients(c, integrator, t_equil, gens)
    total = np.zeros(params.n_hg_modes)
    n_samples = max(int(round(t_average / sample_every)), 1)
    for _ in range(n_samples):
        c = evolve_coefficients(c, integrator, sample_every, gens)
        total += np.mean(np.abs(c) ** 2, axis=0)
    return total / n_samples
