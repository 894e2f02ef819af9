"""
Exact measurement-feedback solver in the Dicke basis.

States are (N+1)x(N+1) density matrices indexed by k = m + N/2. A pulse
followed by homodyne detection of the light acts on the atoms through the
diagonal Kraus operator
    K(y)_mm = (2 pi)^(-1/4) exp(-(y - 2 beta0 sin(lambda m))^2 / 4),
and between pulses the state evolves under H_s + u J_z.

Two ways to build unconditional moments:
    * run_mf_protocol      - sample measurement records and average over them
    * run_mf_quadrature    - integrate over the readout on a grid (small N, no
                             sampling noise)
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from cooling_pipeline.errors import (
    ArgumentError,
    CapabilityError,
    ConditioningUnderflowError,
    SamplerDegeneracyError,
)
from cooling_pipeline.tools.fbc_cfTwa import (
    PULSE,
    TwoModeRunResult,
    build_timeline,
    default_record_points,
    feedback_update,
    series_from_features,
)
from cooling_pipeline.tools.fbc_spinSystem import (
    FEATURES,
    OBSERVABLES,
    css_amplitudes,
    stats_from_means,
)
from cooling_pipeline.utils.utils_log import getLogger
from cooling_pipeline.utils.utils_parallel import TrajectoryPool
from cooling_pipeline.utils.utils_rng import RngStream, StreamPurpose
from cooling_pipeline.utils.utils_stats import BootstrapCI, BootstrapPlan, ObservableSeries

log = getLogger("kraus_exact")

MAX_DENSE_N = 2000
MAX_QUADRATURE_N = 40
ENVELOPE_WIDTH = 1.5
HERMITIAN_TOL = 1e-12
_LOG_TINY = np.log(1e-300)


@dataclass
class SpinOperatorSet:
    Jx: np.ndarray
    Jy: np.ndarray
    Jz: np.ndarray
    H_s: np.ndarray
    constant: float
    N: int

    @property
    def m(self):
        return np.diag(self.Jz).real


class DickeDensityMatrix:
    """Density matrix on the symmetric N-atom subspace."""

    def __init__(self, rho, N=None):
        rho = np.asarray(rho, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ArgumentError("rho must be square", shape=rho.shape)
        self.rho = rho
        self.N = rho.shape[0] - 1 if N is None else N

    def check(self, herm_tol=1e-12, trace_tol=1e-10, psd_tol=1e-10):
        """Hermiticity, unit trace and positivity within the given tolerances."""
        rho = self.rho
        return (
            np.max(np.abs(rho - rho.conj().T)) <= herm_tol
            and abs(np.trace(rho).real - 1.0) <= trace_tol
            and np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() >= -psd_tol
        )

    def purity(self):
        return float(np.real(np.trace(self.rho @ self.rho)))


def build_operators(N, params):
    """Angular-momentum matrices for j = N/2 and H_s = chi J_z^2 + 2 kappa J_x + chi N^2/4."""
    if N > MAX_DENSE_N:
        raise CapabilityError("dense Dicke matrices are limited to N <= 2000", N=N)
    if N < 1:
        raise ArgumentError("N must be >= 1", N=N)
    j = N / 2.0
    m = np.arange(N + 1) - j
    # J+ |m> = sqrt(j(j+1) - m(m+1)) |m+1>
    plus = np.diag(np.sqrt(j * (j + 1.0) - m[:-1] * (m[:-1] + 1.0)), k=-1).astype(complex)
    minus = plus.conj().T
    Jx = 0.5 * (plus + minus)
    Jy = -0.5j * (plus - minus)
    Jz = np.diag(m).astype(complex)
    constant = params.chi * N**2 / 4.0
    H_s = params.chi * Jz @ Jz + 2.0 * params.kappa * Jx + constant * np.eye(N + 1)
    return SpinOperatorSet(Jx, Jy, Jz, H_s, constant, N)


def css_density_matrix(ops, bloch_triplet):
    """Pure CSS along the Bloch triplet: top eigenvector of n.J."""
    v = np.asarray(bloch_triplet, dtype=float)
    # reuse the amplitude convention of the Wigner sampler for the direction
    amp = css_amplitudes(1, v)
    cross = np.conj(amp[0]) * amp[1]
    n = np.array([cross.real, cross.imag, 0.5 * (abs(amp[0]) ** 2 - abs(amp[1]) ** 2)]) * 2.0
    _, vecs = eigh(n[0] * ops.Jx + n[1] * ops.Jy + n[2] * ops.Jz)
    psi = vecs[:, -1]
    return DickeDensityMatrix(np.outer(psi, psi.conj()), ops.N)


def thermal_density_matrix(N):
    return DickeDensityMatrix(np.eye(N + 1, dtype=complex) / (N + 1), N)


def ground_state_energy(ops):
    """Lowest eigenvalue of H_s including its constant."""
    return float(eigh(ops.H_s, eigvals_only=True)[0])


def measurement_centers(ops, params):
    return 2.0 * params.beta0 * np.sin(params.lam * ops.m)


class MeasurementPdf:
    """P(y) = sum_m rho_mm (2 pi)^(-1/2) exp(-(y - c_m)^2 / 2)."""

    def __init__(self, centers, weights):
        weights = np.clip(np.real(weights), 0.0, None)
        total = weights.sum()
        if not total > 0:
            raise ArgumentError("measurement distribution has no weight")
        self.centers = np.asarray(centers, dtype=float)
        self.weights = weights / total

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        z = y[..., None] - self.centers
        return np.sum(self.weights * np.exp(-0.5 * z**2), axis=-1) / np.sqrt(2.0 * np.pi)

    def mean(self):
        return float(np.sum(self.weights * self.centers))


def measurement_pdf(rho, params, ops=None):
    if ops is None:
        ops = build_operators(rho.N, params)
    return MeasurementPdf(measurement_centers(ops, params), np.diag(rho.rho))


def sample_measurement(pdf, stream, width=ENVELOPE_WIDTH, max_attempts=1000):
    """Rejection sample from P using the same mixture widened to ``width``.

    Each unit Gaussian is bounded by ``width`` times its widened partner, so the
    acceptance ratio is P(y) / (width q(y)).
    """
    gen = stream.generator if isinstance(stream, RngStream) else stream
    for _ in range(max_attempts):
        k = gen.choice(len(pdf.weights), p=pdf.weights)
        y = pdf.centers[k] + width * gen.standard_normal()
        z = y - pdf.centers
        q = np.sum(pdf.weights * np.exp(-0.5 * z**2 / width**2)) / (width * np.sqrt(2.0 * np.pi))
        if gen.uniform() * width * q <= pdf(y):
            return float(y)
    # no acceptance in max_attempts draws: rate below 1/max_attempts
    raise SamplerDegeneracyError("rejection sampler acceptance below 1e-3", attempts=max_attempts)


def apply_kraus(rho, y, params, ops=None):
    """Condition on readout y: K rho K / Tr(K rho K), computed with log-shifted K."""
    if ops is None:
        ops = build_operators(rho.N, params)
    log_k = -((y - measurement_centers(ops, params)) ** 2) / 4.0
    shift = log_k.max()
    k = np.exp(log_k - shift)
    out = k[:, None] * rho.rho * k[None, :]
    tr = np.trace(out).real
    log_trace = (2.0 * shift + np.log(tr) if tr > 0 else -np.inf) - 0.5 * np.log(2.0 * np.pi)
    if log_trace < _LOG_TINY:
        raise ConditioningUnderflowError("conditioned state has vanishing trace", y=y)
    return DickeDensityMatrix(out / tr, rho.N)


class DickePropagator:
    """exp(-i (H_s + u J_z) t), with the eigenbasis cached per feedback value."""

    def __init__(self, ops, cache_size=64):
        self.ops = ops
        self.cache_size = cache_size
        self._cache = {}
        self.resymmetrizations = 0

    def eigensystem(self, u):
        key = float(u)
        hit = self._cache.get(key)
        if hit is None:
            hit = eigh(self.ops.H_s + key * self.ops.Jz)
            if len(self._cache) >= self.cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit

    def unitary(self, u, t):
        w, v = self.eigensystem(u)
        return (v * np.exp(-1j * w * t)) @ v.conj().T

    def step(self, rho, u_held, dt):
        if dt == 0:
            return rho
        if dt < 0:
            raise ArgumentError("dt must be non-negative", dt=dt)
        U = self.unitary(u_held, dt)
        out = U @ rho.rho @ U.conj().T
        if np.max(np.abs(out - out.conj().T)) > HERMITIAN_TOL:
            out = 0.5 * (out + out.conj().T)
            self.resymmetrizations += 1
        return DickeDensityMatrix(out, rho.N)


def unitary_step(rho, u_held, dt, ops, propagator=None):
    """rho -> U rho U+ with U = exp(-i (H_s + u J_z) dt)."""
    propagator = propagator or DickePropagator(ops)
    return propagator.step(rho, u_held, dt)


def expectation_features(rho, ops):
    """Feature row (same columns as the Wigner table) from exact expectations."""
    tr = np.real(np.einsum("oij,ji->o", np.stack(_feature_operators(ops)), rho.rho))
    return _features_from_traces(tr, ops.N)


def _feature_operators(ops):
    """Jx, Jy, Jz, their squares and H_s; the feature row is linear in their expectations."""
    return [ops.Jx, ops.Jy, ops.Jz, ops.Jx @ ops.Jx, ops.Jy @ ops.Jy, ops.Jz @ ops.Jz, ops.H_s]


def _features_from_traces(tr, N):
    """Assemble feature rows from traces of (Jx, Jy, Jz, Jx2, Jy2, Jz2, H) over a batch."""
    jx, jy, jz, jx2, jy2, jz2, e = (tr[..., i] for i in range(7))
    return np.stack([jx, jy, jz, jx2, jy2, jz2, N / 2.0 + jz, N / 2.0 - jz, jx, jy, e], axis=-1)


# ---------------------------------------------------------------------------
# record-sampled protocol
# ---------------------------------------------------------------------------


def run_mf_protocol(
    params,
    schedule,
    rho0,
    n_records,
    record_points=None,
    master_seed=0,
    threads=None,
    level_sigmas=2.0,
    n_resamples=1000,
    pulses=True,
    chunk_size=16,
):
    """Unconditional moments from ``n_records`` sampled measurement records.

    Unconditional variances are E[<J^2>] - (E[<J>])^2 over records.
    """
    if record_points is None:
        record_points = default_record_points(schedule)
    if n_records < 2:
        raise ArgumentError("at least two records are required", n_records=n_records)
    ops = build_operators(rho0.N, params)
    timeline = build_timeline(schedule, record_points)
    log.info("kraus: N=%d, %d records, %d measurements", rho0.N, n_records, schedule.n_measurements)
    resym = []

    def run_chunk(start, stop):
        propagator = DickePropagator(ops)
        rows = np.empty((stop - start, len(record_points), len(FEATURES)))
        for i in range(start, stop):
            stream = RngStream(master_seed, i, StreamPurpose.RECORD)
            rho = rho0
            t, u, y_prev = 0.0, 0.0, None
            for time, kind, idx in timeline:
                if time > t:
                    rho = propagator.step(rho, u, time - t)
                t = time
                if kind == PULSE:
                    if not pulses:
                        continue
                    pdf = measurement_pdf(rho, params, ops)
                    y = sample_measurement(pdf, stream)
                    rho = apply_kraus(rho, y, params, ops)
                    u = float(feedback_update(y, y_prev, params, schedule))
                    y_prev = y
                else:
                    rows[i - start, idx] = expectation_features(rho, ops)
        resym.append(propagator.resymmetrizations)
        return rows

    pool = TrajectoryPool(threads, desc="kraus")
    rows = np.concatenate(pool.map_chunks(run_chunk, n_records, chunk_size))

    result = _result_from_rows("kraus", rows, record_points, master_seed, n_resamples, level_sigmas)
    if sum(resym):
        msg = f"density matrix re-symmetrized {sum(resym)} times"
        log.warning(msg)
        result.warnings.append(msg)
    result.extra["e_ground"] = ground_state_energy(ops)
    return result


def _result_from_rows(solver, rows, record_points, master_seed, n_resamples, level_sigmas):
    plan = BootstrapPlan.for_run(rows.shape[0], n_resamples, master_seed)
    snapshots = [rows[:, r, :] for r in range(len(record_points))]
    series = series_from_features(snapshots, record_points, plan, level_sigmas)
    return TwoModeRunResult(solver, series, list(record_points))


# ---------------------------------------------------------------------------
# readout-integrated protocol
# ---------------------------------------------------------------------------


def readout_grid(ops, params, points=401, width=8.0):
    """Uniform grid spanning +-width around all Gaussian centers, with trapezoid weights."""
    c = measurement_centers(ops, params)
    y = np.linspace(c.min() - width, c.max() + width, points)
    w = np.full(points, y[1] - y[0])
    w[0] = w[-1] = 0.5 * (y[1] - y[0])
    return y, w


def _split_blocks(timeline):
    """Records before the first pulse, then (pulse_time, following records) per pulse."""
    leading, blocks = [], []
    for event in timeline:
        if event[1] == PULSE:
            blocks.append((event[0], []))
        elif blocks:
            blocks[-1][1].append(event)
        else:
            leading.append(event)
    return leading, blocks


def run_mf_quadrature(params, schedule, rho0, record_points=None, points=401, width=8.0):
    """Deterministic unconditional evolution integrated over every readout.

    The state is kept as one unnormalized branch per value of the last
    readout (probability-weighted, so traces sum to one). After a pulse every
    (previous, current) readout pair feeds back with its own u, which depends
    only on the grid offset between the two; pairs are merged onto the current
    readout at the next pulse. Intervals in the result have zero width.
    """
    N = rho0.N
    if N > MAX_QUADRATURE_N:
        raise CapabilityError("readout integration is limited to small N", N=N, limit=MAX_QUADRATURE_N)
    if record_points is None:
        record_points = default_record_points(schedule)
    ops = build_operators(N, params)
    timeline = build_timeline(schedule, record_points)
    y, w = readout_grid(ops, params, points, width)
    G = len(y)
    centers = measurement_centers(ops, params)
    k_diag = np.exp(-((y[:, None] - centers[None, :]) ** 2) / 4.0) / (2.0 * np.pi) ** 0.25
    offsets = np.arange(-(G - 1), G)
    u_of_offset = np.asarray(feedback_update(offsets * (y[1] - y[0]), 0.0, params, schedule))
    eig = [eigh(ops.H_s + u * ops.Jz) for u in u_of_offset]
    feat_ops = np.stack(_feature_operators(ops))
    log.info("kraus quadrature: N=%d, %d grid points, %d pulses", N, G, schedule.n_measurements)

    unitary_cache = {}

    def unitaries(span):
        key = round(span, 15)
        if key not in unitary_cache:
            unitary_cache[key] = np.stack([(v * np.exp(-1j * e * span)) @ v.conj().T for e, v in eig])
        return unitary_cache[key]

    def propagate(states, offset_index, span):
        if span <= 0:
            return states
        U = unitaries(span)[offset_index]
        return U @ states @ np.conj(np.swapaxes(U, -1, -2))

    def traces(states):
        total = states.reshape(-1, N + 1, N + 1).sum(axis=0)
        return np.real(np.einsum("oij,ji->o", feat_ops, total)), float(np.real(np.trace(total)))

    raw = np.zeros((len(record_points), 7))
    norm = np.zeros(len(record_points))
    zero = G - 1
    leading, blocks = _split_blocks(timeline)

    state = rho0.rho[None, :, :]
    t = 0.0
    for time, _, idx in leading:
        state = propagate(state, np.array([zero]), time - t)
        t = time
        raw[idx], norm[idx] = traces(state)
    if not blocks:
        return _quadrature_result(raw, norm, record_points, ops)

    # state before a pulse times the previous-readout axis; (1, n, n) before the first
    branches = propagate(state, np.array([zero]), blocks[0][0] - t)
    for b, (t_pulse, events) in enumerate(blocks):
        next_time = blocks[b + 1][0] if b + 1 < len(blocks) else None
        first = b == 0
        merged = np.zeros((G, N + 1, N + 1), dtype=complex) if next_time is not None else None
        for h in range(G):
            kk = np.outer(k_diag[h], k_diag[h])
            X = w[h] * kk[None, :, :] * branches
            index = np.full(len(branches), zero) if first else h - np.arange(G) + zero
            t = t_pulse
            for time, _, idx in events:
                X = propagate(X, index, time - t)
                t = time
                tr, nr = traces(X)
                raw[idx] += tr
                norm[idx] += nr
            if next_time is not None:
                X = propagate(X, index, next_time - t)
                merged[h] = X.sum(axis=0)
        if merged is not None:
            branches = merged
    return _quadrature_result(raw, norm, record_points, ops)


def _quadrature_result(raw, norm, record_points, ops):
    series = {name: ObservableSeries(name) for name in OBSERVABLES}
    for point, tr in zip(record_points, raw):
        stats = stats_from_means(_features_from_traces(tr, ops.N))
        for name in OBSERVABLES:
            v = float(stats[name])
            series[name].append(point.time, BootstrapCI(v, v, v, 0.0, 0))
    result = TwoModeRunResult("kraus-quadrature", series, list(record_points))
    result.extra["traces"] = [float(x) for x in norm]
    result.extra["e_ground"] = ground_state_energy(ops)
    return result
