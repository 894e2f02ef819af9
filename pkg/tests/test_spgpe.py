import numpy as np
import pytest

from cooling_pipeline.errors import ArgumentError
from cooling_pipeline.tools.fbc_field1d import FieldParams, Grid1D
from cooling_pipeline.tools.fbc_spgpe import (
    HermiteGaussProjector,
    SpgpeIntegrator,
    evolve_coefficients,
    hg_basis,
    hg_energies,
    mode_occupations,
    norm_drift,
    spgpe_ensemble,
    spgpe_thermalize,
    thermal_occupations,
)
from cooling_pipeline.utils.utils_rng import RngStream, StreamPurpose


def _params(**kw):
    base = dict(
        g=0.0, r_d=0.52, lambda_pc=0.0, beta0=1.0, k_fb=0.0,
        mu=0.0, T_tilde=10.0, gamma_growth=0.05, n_hg_modes=10,
    )
    base.update(kw)
    return FieldParams(**base)


def test_basis_is_orthonormal_on_a_fine_grid():
    grid = Grid1D(1024, 30.0)
    phi = hg_basis(20, grid.x)
    overlap = phi @ phi.T * grid.dx
    assert np.allclose(overlap, np.eye(20), atol=1e-10)
    assert np.allclose(hg_energies(3), [0.5, 1.5, 2.5])


def test_basis_needs_a_trap():
    with pytest.raises(ArgumentError):
        hg_basis(4, np.zeros(3), omega0=0.0)


def test_gauss_hermite_projection_is_exact_for_quartic_products():
    projector = HermiteGaussProjector(8)
    grid = Grid1D(2048, 30.0)
    phi = hg_basis(8, grid.x)
    for a, b, c, d in [(0, 0, 0, 0), (1, 2, 3, 4), (7, 7, 6, 6), (0, 3, 5, 2)]:
        exact = np.sum(phi[a] * phi[b] * phi[c] * phi[d]) * grid.dx
        nodes = projector.phi_nodes
        quad = np.sum(projector.weights * nodes[a] * nodes[b] * nodes[c] * nodes[d])
        assert quad == pytest.approx(exact, abs=1e-12)


def test_grid_round_trip_of_coefficients():
    grid = Grid1D(512, 30.0)
    projector = HermiteGaussProjector(12)
    c = RngStream(1, 0).generator.standard_normal((3, 12)) + 0j
    assert np.allclose(projector.from_grid(projector.to_grid(c, grid.x), grid), c, atol=1e-10)


def test_thermal_occupations():
    occ = thermal_occupations(_params(mu=1.0, T_tilde=4.0))
    assert np.isnan(occ[0])
    assert occ[1] == pytest.approx(8.0)
    assert occ[3] == pytest.approx(4.0 / 2.5)


def test_step_size_guard():
    with pytest.raises(ArgumentError):
        SpgpeIntegrator(_params(gamma_growth=0.5), dt=0.1)
    with pytest.raises(ArgumentError):
        SpgpeIntegrator(_params(), dt=0.0)


def test_projected_gpe_conserves_norm_without_reservoir():
    params = _params(g=0.01, gamma_growth=0.0, T_tilde=0.0, n_hg_modes=16, mu=5.0)
    integrator = SpgpeIntegrator(params, 1e-3)
    gen = RngStream(2, 0).generator
    c = 3.0 * (gen.standard_normal((2, 16)) + 1j * gen.standard_normal((2, 16)))
    norms = []
    out = evolve_coefficients(c, integrator, 1.0, norms=norms)
    before = np.sum(np.abs(c) ** 2, axis=1)
    after = np.sum(np.abs(out) ** 2, axis=1)
    assert np.allclose(after, before, rtol=1e-8)
    assert len(norms) == 1


def test_noise_is_off_without_growth():
    params = _params(gamma_growth=0.0)
    integrator = SpgpeIntegrator(params, 0.01)
    c = np.ones((1, 10), dtype=complex)
    gens = [RngStream(3, 0).generator]
    assert np.allclose(np.abs(integrator.step(c, gens)), 1.0)


def test_noninteracting_occupations_quick():
    """g = 0 stationary occupations T / (eps_n - mu), coarse statistics."""
    params = _params()
    occ = mode_occupations(params, n_traj=400, master_seed=4, t_equil=200.0, t_average=200.0, dt=0.1)
    expected = thermal_occupations(params)
    assert np.all(np.abs(occ / expected - 1.0) < 0.1)


@pytest.mark.slow
def test_noninteracting_occupations():
    params = _params()
    occ = mode_occupations(params, n_traj=1000, master_seed=5, t_equil=200.0, t_average=2000.0, dt=0.1)
    expected = thermal_occupations(params)
    assert np.all(np.abs(occ / expected - 1.0) < 0.05)


def test_thermalize_single_sample():
    params = _params(n_hg_modes=8)
    grid = Grid1D(64, 20.0)
    psi = spgpe_thermalize(params, grid, RngStream(6, 0, StreamPurpose.SPGPE), t_equil=5.0, dt=0.1)
    assert psi.shape == (64,)
    assert np.all(np.isfinite(psi))


def test_ensemble_is_identical_for_any_thread_count():
    params = _params(g=1e-3, mu=4.0, T_tilde=50.0, n_hg_modes=8)
    grid = Grid1D(64, 20.0)
    a, warn_a = spgpe_ensemble(params, grid, 6, master_seed=7, t_equil=2.0, dt=0.01, threads=1, chunk_size=2)
    b, warn_b = spgpe_ensemble(params, grid, 6, master_seed=7, t_equil=2.0, dt=0.01, threads=3, chunk_size=2)
    assert np.array_equal(a.psi, b.psi)
    assert warn_a == warn_b
    assert a.psi.shape == (6, 64)
    # every trajectory draws its own noise
    assert not np.allclose(a.psi[0], a.psi[1])


def test_norm_drift_reads_a_trend_not_fluctuations():
    assert norm_drift([100.0]) is None
    assert norm_drift([100.0, 101.0]) is None
    ramp = 1000.0 + 20.0 * np.arange(40)
    assert norm_drift(ramp) == pytest.approx(20.0 / ramp[20:].mean())
    gen = np.random.default_rng(3)
    flat = 1000.0 * (1.0 + 0.05 * gen.standard_normal(60))
    assert norm_drift(flat) < 0.01


def test_equilibration_warning_clears_once_the_norm_settles():
    params = _params(g=1e-3, mu=4.0, T_tilde=50.0, n_hg_modes=8)
    grid = Grid1D(64, 20.0)
    _, early = spgpe_ensemble(params, grid, 8, master_seed=9, t_equil=6.0, dt=0.01, threads=1)
    assert early and "still drifting" in early[0]
    _, settled = spgpe_ensemble(params, grid, 8, master_seed=9, t_equil=160.0, dt=0.01, threads=1)
    assert settled == []
