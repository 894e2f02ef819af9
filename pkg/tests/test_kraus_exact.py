import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.linalg import expm

from cooling_pipeline.errors import CapabilityError, ConditioningUnderflowError
from cooling_pipeline.tools.fbc_cfTwa import ProtocolSchedule, default_tau
from cooling_pipeline.tools.fbc_krausExact import (
    DickeDensityMatrix,
    DickePropagator,
    apply_kraus,
    build_operators,
    css_density_matrix,
    expectation_features,
    ground_state_energy,
    measurement_centers,
    measurement_pdf,
    readout_grid,
    run_mf_protocol,
    run_mf_quadrature,
    sample_measurement,
    thermal_density_matrix,
    unitary_step,
)
from cooling_pipeline.tools.fbc_spinSystem import FEATURES, TwoModeParams
from cooling_pipeline.utils.utils_rng import RngStream, StreamPurpose

BETA0 = 3162.2776601683795


def _params(N, k_fb=0.1):
    return TwoModeParams(chi=0.01, kappa=0.09, lam=0.8e-4, k_fb=k_fb, N=N, beta0=BETA0)


def _expect(op, rho):
    return float(np.real(np.trace(op @ rho.rho)))


def test_angular_momentum_algebra():
    ops = build_operators(6, _params(6))
    assert np.allclose(ops.Jx @ ops.Jy - ops.Jy @ ops.Jx, 1j * ops.Jz)
    casimir = ops.Jx @ ops.Jx + ops.Jy @ ops.Jy + ops.Jz @ ops.Jz
    assert np.allclose(casimir, 3.0 * 4.0 * np.eye(7))
    assert np.allclose(ops.m, np.arange(-3, 4))


def test_operator_size_limits():
    with pytest.raises(CapabilityError):
        build_operators(2001, _params(10))


def test_css_density_matrix():
    ops = build_operators(20, _params(20))
    rho = css_density_matrix(ops, [0.5, 0.0, 0.0])
    assert rho.check()
    assert rho.purity() == pytest.approx(1.0)
    assert _expect(ops.Jx, rho) == pytest.approx(10.0)
    var_z = _expect(ops.Jz @ ops.Jz, rho) - _expect(ops.Jz, rho) ** 2
    assert var_z == pytest.approx(5.0)


def test_css_direction_matches_wigner_sampler():
    ops = build_operators(20, _params(20))
    rho = css_density_matrix(ops, [0.0, 0.4, -0.3])
    assert _expect(ops.Jy, rho) == pytest.approx(8.0)
    assert _expect(ops.Jz, rho) == pytest.approx(-6.0)


def test_thermal_state_moments():
    ops = build_operators(20, _params(20))
    rho = thermal_density_matrix(20)
    assert rho.check()
    assert _expect(ops.Jz @ ops.Jz, rho) == pytest.approx(10.0 * 11.0 / 3.0)
    row = expectation_features(rho, ops)
    assert row.shape == (len(FEATURES),)
    assert row[FEATURES.index("n1")] == pytest.approx(10.0)


def test_measurement_pdf_normalized_and_sampled_consistently():
    params = _params(20)
    ops = build_operators(20, params)
    rho = css_density_matrix(ops, [0.5, 0.0, 0.0])
    pdf = measurement_pdf(rho, params, ops)
    y = np.linspace(-30.0, 30.0, 6001)
    assert trapezoid(pdf(y), y) == pytest.approx(1.0, abs=1e-8)
    stream = RngStream(1, 0, StreamPurpose.RECORD)
    draws = np.array([sample_measurement(pdf, stream) for _ in range(4000)])
    assert abs(draws.mean() - pdf.mean()) < 0.1


def test_sampled_readouts_split_between_two_populations_by_weight():
    params = TwoModeParams(chi=0.01, kappa=0.09, lam=1e-3, k_fb=0.1, N=20, beta0=BETA0)
    ops = build_operators(20, params)
    populations = np.zeros(21)
    populations[15], populations[5] = 0.7, 0.3  # m = +5 and m = -5
    pdf = measurement_pdf(DickeDensityMatrix(np.diag(populations).astype(complex), 20), params, ops)
    upper, lower = measurement_centers(ops, params)[[15, 5]]
    assert upper - lower > 60.0
    stream = RngStream(4, 0, StreamPurpose.RECORD)
    draws = np.array([sample_measurement(pdf, stream) for _ in range(4000)])
    near_upper = np.abs(draws - upper) < np.abs(draws - lower)
    assert near_upper.mean() == pytest.approx(0.7, abs=0.025)
    assert np.all(np.minimum(np.abs(draws - upper), np.abs(draws - lower)) < 6.0)
    assert draws[near_upper].std() == pytest.approx(1.0, abs=0.06)


def test_kraus_update_keeps_a_valid_state_and_sharpens_jz():
    params = _params(20)
    ops = build_operators(20, params)
    rho = css_density_matrix(ops, [0.5, 0.0, 0.0])
    pdf = measurement_pdf(rho, params, ops)
    after = apply_kraus(rho, pdf.mean(), params, ops)
    assert after.check()
    var_before = _expect(ops.Jz @ ops.Jz, rho) - _expect(ops.Jz, rho) ** 2
    var_after = _expect(ops.Jz @ ops.Jz, after) - _expect(ops.Jz, after) ** 2
    assert var_after < 0.6 * var_before


def test_far_readout_underflows():
    params = _params(4)
    ops = build_operators(4, params)
    with pytest.raises(ConditioningUnderflowError):
        apply_kraus(thermal_density_matrix(4), 1e4, params, ops)


def test_unitary_step_preserves_trace_and_purity():
    params = _params(8)
    ops = build_operators(8, params)
    rho = css_density_matrix(ops, [0.3, 0.0, 0.4])
    propagator = DickePropagator(ops)
    out = unitary_step(rho, 0.2, 1.3, ops, propagator)
    assert out.check()
    assert out.purity() == pytest.approx(1.0)
    U = expm(-1j * (ops.H_s + 0.2 * ops.Jz) * 1.3)
    assert np.allclose(out.rho, U @ rho.rho @ U.conj().T)


def test_ground_state_is_below_any_css():
    params = _params(10)
    ops = build_operators(10, params)
    rho = css_density_matrix(ops, [0.0, 0.4, -0.3])
    assert ground_state_energy(ops) <= _expect(ops.H_s, rho) + 1e-12


def test_record_sampled_protocol_runs_and_is_thread_independent():
    params = _params(4)
    schedule = ProtocolSchedule.with_defaults(3, default_tau(0.09))
    rho0 = css_density_matrix(build_operators(4, params), [0.0, 0.4, -0.3])
    runs = [
        run_mf_protocol(params, schedule, rho0, 12, master_seed=2, threads=t, n_resamples=100, chunk_size=5)
        for t in (1, 2)
    ]
    for name, series in runs[0].series.items():
        assert np.all(np.isfinite(series.value))
        assert np.array_equal(series.value, runs[1].series[name].value)
    assert runs[0].series["mean_Jz"].value[0] == pytest.approx(-1.2)
    assert "e_ground" in runs[0].extra


def test_readout_grid_weights():
    params = _params(4)
    ops = build_operators(4, params)
    y, w = readout_grid(ops, params, points=101, width=8.0)
    c = measurement_centers(ops, params)
    assert y[0] == pytest.approx(c.min() - 8.0)
    assert w.sum() == pytest.approx(y[-1] - y[0])


def test_quadrature_conserves_probability():
    params = _params(4)
    schedule = ProtocolSchedule.with_defaults(3, default_tau(0.09))
    rho0 = css_density_matrix(build_operators(4, params), [0.0, 0.4, -0.3])
    result = run_mf_quadrature(params, schedule, rho0, points=101)
    assert np.allclose(result.extra["traces"], 1.0, atol=1e-6)
    assert result.solver == "kraus-quadrature"
    ci = result.series["var_Jz"].cis[-1]
    assert ci.lower == ci.upper == ci.point_estimate


def test_quadrature_without_feedback_matches_the_dephasing_channel():
    """Averaged over readouts, a pulse multiplies rho_mn by exp(-(c_m - c_n)^2 / 8)."""
    params = _params(4, k_fb=0.0)
    ops = build_operators(4, params)
    schedule = ProtocolSchedule.with_defaults(3, default_tau(0.09))
    rho0 = css_density_matrix(ops, [0.0, 0.4, -0.3])
    result = run_mf_quadrature(params, schedule, rho0, points=161)

    c = measurement_centers(ops, params)
    damp = np.exp(-((c[:, None] - c[None, :]) ** 2) / 8.0)
    U = expm(-1j * ops.H_s * schedule.tau)
    rho = rho0.rho
    for _ in range(3):
        rho = U @ (damp * rho) @ U.conj().T
    jz = float(np.real(np.trace(ops.Jz @ rho)))
    jz2 = float(np.real(np.trace(ops.Jz @ ops.Jz @ rho)))
    assert result.series["mean_Jz"].value[-1] == pytest.approx(jz, abs=1e-8)
    assert result.series["var_Jz"].value[-1] == pytest.approx(jz2 - jz**2, abs=1e-8)


def test_quadrature_refuses_large_systems():
    params = _params(41)
    schedule = ProtocolSchedule.with_defaults(3, default_tau(0.09))
    with pytest.raises(CapabilityError):
        run_mf_quadrature(params, schedule, thermal_density_matrix(41))


def test_record_sampling_error_shrinks_as_one_over_root_n():
    params = _params(4)
    schedule = ProtocolSchedule.with_defaults(3, default_tau(0.09))
    rho0 = css_density_matrix(build_operators(4, params), [0.0, 0.4, -0.3])

    def mean_width(n_records):
        result = run_mf_protocol(params, schedule, rho0, n_records, master_seed=8, n_resamples=400)
        widths = [ci.half_width for ci in result.series["mean_Jz"].cis[1:]]
        return np.mean(widths)

    ratio = mean_width(50) / mean_width(800)
    assert ratio == pytest.approx(4.0, rel=0.25)
