import numpy as np
import pytest

from cooling_pipeline.errors import ArgumentError
from cooling_pipeline.tools.fbc_cfTwa import (
    PULSE,
    RECORD_AFTER,
    RECORD_BEFORE,
    ProtocolSchedule,
    RecordPoint,
    build_timeline,
    default_record_points,
    default_tau,
    entangling_pulse,
    epsilon_scale,
    evolve,
    feedback_update,
    measurement_jumps,
    pulse_bracketing_points,
    quadrature,
    run_cf_protocol,
    segment_steps,
)
from cooling_pipeline.tools.fbc_spinSystem import (
    TwoModeEnsemble,
    TwoModeParams,
    jz_wigner,
    renormalize_to_N,
    sample_css,
    wigner_shell,
)
from cooling_pipeline.utils.utils_stats import ObservableSeries, make_ci


def test_default_tau_spans_one_rabi_period():
    assert default_tau(0.09) * 62 == pytest.approx(np.pi / 0.09)
    assert default_tau(0.09, rabi_periods=4.0) == pytest.approx(4.0 * default_tau(0.09))


def test_schedule_constraints():
    tau = 1.0
    with pytest.raises(ArgumentError):
        ProtocolSchedule(tau, 0.2, 5, 0.01, 5.0)
    with pytest.raises(ArgumentError):
        ProtocolSchedule(tau, 0.01, 5, 0.1, 5.0)
    with pytest.raises(ArgumentError):
        ProtocolSchedule(tau, 0.01, 6, 0.01, 5.0)
    schedule = ProtocolSchedule.with_defaults(4, tau)
    assert schedule.t_p == pytest.approx(0.01)
    assert schedule.t_total == pytest.approx(4.0)
    assert schedule.measurement_times() == [0.0, 1.0, 2.0, 3.0]


def test_record_points_and_timeline_ordering():
    schedule = ProtocolSchedule.with_defaults(3, 1.0)
    points = default_record_points(schedule, brackets=True)
    assert points[0] == RecordPoint(0.0, before_pulse=True)
    assert points[-1].time == pytest.approx(3.0)
    events = build_timeline(schedule, points)
    kinds_at_one = [kind for time, kind, _ in events if time == 1.0]
    assert kinds_at_one == [RECORD_BEFORE, PULSE, RECORD_AFTER]
    assert [e[0] for e in events] == sorted(e[0] for e in events)


def test_record_time_snaps_to_pulse():
    schedule = ProtocolSchedule.with_defaults(3, 1.0)
    events = build_timeline(schedule, [RecordPoint(2.0 + 1e-12)])
    assert (2.0, RECORD_AFTER, 0) in events
    with pytest.raises(ArgumentError):
        build_timeline(schedule, [RecordPoint(4.0)])


def test_segment_steps():
    assert segment_steps(0.0, 0.1) == (0, 0.0)
    n, h = segment_steps(1.0, 0.3)
    assert n == 4 and h == pytest.approx(0.25)


def test_quadrature_reads_the_light_phase():
    beta = 1.0 * np.exp(-1j * 0.1)
    assert quadrature(beta) == pytest.approx(2.0 * np.sin(0.1))


def test_pulse_is_qnd_for_jz(two_mode_params):
    alpha = sample_css(two_mode_params, [0.3, 0.0, 0.4], 50, master_seed=1).alpha
    theta = np.full(50, 0.3 - 0.2j)
    out, beta = entangling_pulse(alpha, two_mode_params, theta=theta)
    assert np.allclose(np.abs(out), np.abs(alpha), rtol=1e-13)
    assert np.allclose(jz_wigner(out), jz_wigner(alpha), rtol=1e-12)
    expected = (two_mode_params.beta0 + theta) * np.exp(-1j * two_mode_params.lam * jz_wigner(alpha))
    assert np.allclose(beta, expected)


def test_readout_mean_tracks_jz(two_mode_params):
    """Noise-free light: y = 2 beta0 sin(lambda J_z)."""
    alpha = sample_css(two_mode_params, [0.0, 0.0, 0.5], 3, master_seed=0, noise=False).alpha
    _, beta = entangling_pulse(alpha, two_mode_params, theta=np.zeros(3))
    y = quadrature(beta)
    expected = 2.0 * two_mode_params.beta0 * np.sin(two_mode_params.lam * 10.0)
    assert np.allclose(y, expected)
    assert y[0] / (2 * two_mode_params.lam * two_mode_params.beta0) == pytest.approx(10.0, rel=1e-6)


def test_counter_rotation_removes_the_mean_phase(two_mode_params):
    alpha = np.array([[1.0 + 0j, 1.0 + 0j]])
    kept, _ = entangling_pulse(alpha, two_mode_params, theta=np.zeros(1), counter_rotate=True)
    raw, _ = entangling_pulse(alpha, two_mode_params, theta=np.zeros(1), counter_rotate=False)
    shift = 0.5 * two_mode_params.lam * two_mode_params.beta0**2
    assert np.angle(raw[0, 0] / kept[0, 0]) == pytest.approx(np.angle(np.exp(-1j * shift)))


def test_pulse_needs_noise_source(two_mode_params):
    with pytest.raises(ArgumentError):
        entangling_pulse(np.ones((2, 2), dtype=complex), two_mode_params)


def test_feedback_update(two_mode_params, short_schedule):
    y = np.array([1.0, 2.0])
    assert np.all(feedback_update(y, None, two_mode_params, short_schedule) == 0)
    u = feedback_update(y, np.array([0.5, 2.0]), two_mode_params, short_schedule)
    eps = epsilon_scale(two_mode_params)
    assert u[0] == pytest.approx(eps * 0.1 * 0.5 / short_schedule.tau)
    assert u[1] == 0.0


def test_hamiltonian_drift_conserves_norm(two_mode_params):
    alpha = sample_css(two_mode_params, [0.3, 0.0, 0.4], 20, master_seed=2).alpha
    out = evolve(alpha, two_mode_params, 0.05, span=5.0, dt=0.01)
    before = np.sum(np.abs(alpha) ** 2, axis=1)
    after = np.sum(np.abs(out) ** 2, axis=1)
    assert np.allclose(before, after, rtol=1e-8)


def test_rabi_oscillation_without_interactions(two_mode_params):
    """kappa alone rotates J about x: J_z(t) = J_z(0) cos(2 kappa t)."""
    params = TwoModeParams(0.0, 0.09, 0.8e-4, 0.0, 20, two_mode_params.beta0)
    alpha = sample_css(params, [0.0, 0.0, 0.5], 1, master_seed=0, noise=False).alpha
    t = np.pi / (4 * 0.09)
    out = evolve(alpha, params, 0.0, span=t, dt=0.005)
    assert jz_wigner(out)[0] == pytest.approx(10.0 * np.cos(2 * 0.09 * t), abs=1e-6)


def test_protocol_is_identical_for_any_thread_count(two_mode_params, short_schedule):
    initial = sample_css(two_mode_params, [0.0, 0.4, -0.3], 48, master_seed=3)
    runs = [
        run_cf_protocol(
            two_mode_params, short_schedule, initial, master_seed=3, threads=t, n_resamples=100, chunk_size=10
        )
        for t in (1, 3)
    ]
    for name, series in runs[0].series.items():
        assert np.array_equal(series.value, runs[1].series[name].value)
        assert np.array_equal(series.lower, runs[1].series[name].lower)


def test_protocol_without_pulses_keeps_initial_moments_at_t0(two_mode_params, short_schedule):
    initial = sample_css(two_mode_params, [0.0, 0.4, -0.3], 64, master_seed=4)
    result = run_cf_protocol(two_mode_params, short_schedule, initial, pulses=False, n_resamples=100)
    jz = result.series["mean_Jz"]
    assert jz.times[0] == 0.0
    projected = renormalize_to_N(initial.alpha, wigner_shell(two_mode_params.N))
    assert jz.value[0] == pytest.approx(np.mean(jz_wigner(projected)))
    assert result.solver == "cf"


def test_protocol_starts_from_the_fixed_n_spin_state(two_mode_params, short_schedule):
    """Projected onto the N + 1 shell, Glauber samples carry the Dicke CSS moments."""
    initial = sample_css(two_mode_params, [0.0, 0.4, -0.3], 4000, master_seed=6)
    result = run_cf_protocol(two_mode_params, short_schedule, initial, pulses=False, n_resamples=200)
    # N = 20: <J> = (0, 8, -6), Var(J_y) = 5 * 0.36, Var(J_z) = 5 * 0.64
    assert result.series["mean_Jy"].value[0] == pytest.approx(8.0, abs=0.1)
    assert result.series["var_Jy"].value[0] == pytest.approx(1.8, abs=0.25)
    assert result.series["var_Jz"].value[0] == pytest.approx(3.2, abs=0.3)
    assert result.series["tmcf"].value[0] == pytest.approx(1.0, abs=0.01)


def test_protocol_renormalizes_after_pulses(two_mode_params, short_schedule):
    initial = sample_css(two_mode_params, [0.0, 0.4, -0.3], 32, master_seed=5)
    result = run_cf_protocol(two_mode_params, short_schedule, initial, n_resamples=100, distributions=True)
    tmcf = result.series["tmcf"]
    assert np.all(np.isfinite(tmcf.value))
    assert np.all(tmcf.value < 1.05)
    dist = result.distributions
    assert len(dist["times"]) == len(result.record_points)
    assert dist["Jz"][0].sum() == pytest.approx(1.0)


def test_reordering_trajectories_keeps_statistics_within_their_intervals(two_mode_params, short_schedule):
    """Pairing each sample with another light-noise stream is just another draw."""
    initial = sample_css(two_mode_params, [0.0, 0.4, -0.3], 2000, master_seed=7)
    order = np.random.default_rng(7).permutation(initial.n_traj)
    shuffled = TwoModeEnsemble(initial.alpha[order])
    a = run_cf_protocol(two_mode_params, short_schedule, initial, master_seed=7, n_resamples=200)
    b = run_cf_protocol(two_mode_params, short_schedule, shuffled, master_seed=7, n_resamples=200)
    for name, series in a.series.items():
        other = b.series[name]
        assert series.value[0] == pytest.approx(other.value[0], rel=1e-9, abs=1e-9)
        assert not np.array_equal(series.value[1:], other.value[1:])
        for ci_a, ci_b in zip(series.cis[1:], other.cis[1:]):
            combined = np.hypot(ci_a.sigma, ci_b.sigma)
            assert abs(ci_a.point_estimate - ci_b.point_estimate) <= 4.0 * combined, name


def test_energy_is_conserved_without_measurement(two_mode_params, short_schedule):
    initial = sample_css(two_mode_params, [0.0, 0.4, -0.3], 200, master_seed=8)
    quiet = run_cf_protocol(two_mode_params, short_schedule, initial, pulses=False, n_resamples=100)
    energy = quiet.series["energy"].value
    assert np.allclose(energy, energy[0], rtol=1e-7)


def test_protocol_needs_two_trajectories(two_mode_params, short_schedule):
    initial = sample_css(two_mode_params, [0.0, 0.4, -0.3], 1, master_seed=5)
    with pytest.raises(ArgumentError):
        run_cf_protocol(two_mode_params, short_schedule, initial)


def _ci(value, half):
    return make_ci(value, [value - half, value + half] * 50, 2.0)


def test_pulse_bracketing_points():
    schedule = ProtocolSchedule.with_defaults(3, 1.0)
    points = pulse_bracketing_points(schedule)
    assert [(p.time, p.before_pulse) for p in points] == [
        (0.0, True), (0.0, False), (1.0, True), (1.0, False), (2.0, True), (2.0, False),
    ]


def test_measurement_jumps_pair_bracketed_records():
    points = [RecordPoint(0.0, True), RecordPoint(0.0), RecordPoint(1.0, True), RecordPoint(1.0), RecordPoint(1.5)]
    series = ObservableSeries("var_Jz")
    for point, (v, h) in zip(points, [(10, 1), (12, 1), (11, 1), (15, 1), (14, 1)]):
        series.append(point.time, _ci(v, h))
    summary = measurement_jumps(series, points)
    assert np.allclose(summary.times, [0.0, 1.0])
    assert np.allclose(summary.jumps, [2.0, 4.0])
    assert summary.n_positive == 2
    assert summary.p_value == pytest.approx(0.25)
    assert summary.max_abs_z > 0
