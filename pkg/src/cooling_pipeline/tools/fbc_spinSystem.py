"""
Two-mode (pseudo-spin) state sampling and estimators.

Wigner amplitudes (alpha_1, alpha_2) map to the Schwinger spin
    J_z = (|a1|^2 - |a2|^2) / 2,  J_x = Re(a1* a2),  J_y = Im(a1* a2).
Symmetric ordering shifts each spin variance by +1/8 and each mode
occupation by +1/2; the estimators here remove both. A fixed-N state sits on
the Wigner shell |a1|^2 + |a2|^2 = N + 1, which is where the protocols
renormalize their trajectories.

All estimators go through a per-trajectory feature table (see
``wigner_features``) so the exact and particle-filter solvers can feed the
same reduction with their own conditional expectations.
"""

from dataclasses import dataclass

import numpy as np

from cooling_pipeline.errors import ArgumentError, NumericalDegeneracyError, NumericalError
from cooling_pipeline.utils.utils_rng import RngStream, StreamPurpose, sample_complex_gaussian
from cooling_pipeline.utils.utils_stats import BootstrapPlan, make_ci

SPIN_VARIANCE_SHIFT = 1.0 / 8.0
MODE_OCCUPATION_SHIFT = 0.5

# columns of a feature table
FEATURES = ("Jx", "Jy", "Jz", "Jx2", "Jy2", "Jz2", "n1", "n2", "g12_re", "g12_im", "energy")
_COL = {name: i for i, name in enumerate(FEATURES)}

MOMENT_OBSERVABLES = ("mean_Jx", "mean_Jy", "mean_Jz", "var_Jx", "var_Jy", "var_Jz")
OBSERVABLES = MOMENT_OBSERVABLES + ("tmcf", "energy")


@dataclass(frozen=True)
class TwoModeParams:
    chi: float
    kappa: float
    lam: float
    k_fb: float
    N: int
    beta0: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ArgumentError("N must be a positive integer", N=self.N)
        if not self.beta0 > 0:
            raise ArgumentError("beta0 must be positive", beta0=self.beta0)
        for name in ("chi", "kappa", "lam", "k_fb", "beta0"):
            if not np.isfinite(getattr(self, name)):
                raise ArgumentError(f"{name} must be finite", **{name: getattr(self, name)})

    @classmethod
    def from_delta_jz(cls, chi, kappa, delta_jz, k_fb, N, beta0):
        """Parameters for a given single-shot uncertainty dJz = 1/(2 lambda beta0)."""
        if not delta_jz > 0:
            raise ArgumentError("delta_jz must be positive", delta_jz=delta_jz)
        return cls(chi, kappa, 1.0 / (2.0 * beta0 * delta_jz), k_fb, N, beta0)


class TwoModeEnsemble:
    """Wigner samples of the two-mode state, ``alpha`` of shape (n_traj, 2)."""

    def __init__(self, alpha):
        alpha = np.asarray(alpha, dtype=complex)
        if alpha.ndim != 2 or alpha.shape[1] != 2:
            raise ArgumentError("alpha must have shape (n_traj, 2)", shape=alpha.shape)
        self.alpha = alpha

    @property
    def n_traj(self):
        return self.alpha.shape[0]

    @property
    def trajectories(self):
        return [tuple(row) for row in self.alpha]


@dataclass(frozen=True)
class SpinMoments:
    mean_Jx: object
    mean_Jy: object
    mean_Jz: object
    var_Jx: object
    var_Jy: object
    var_Jz: object


# ---------------------------------------------------------------------------
# spin components
# ---------------------------------------------------------------------------


def spin_components(alpha):
    """(J_x, J_y, J_z) Wigner values per trajectory, each shape (n,)."""
    a1, a2 = alpha[..., 0], alpha[..., 1]
    cross = np.conj(a1) * a2
    return cross.real, cross.imag, 0.5 * (np.abs(a1) ** 2 - np.abs(a2) ** 2)


def jz_wigner(alpha):
    return 0.5 * (np.abs(alpha[..., 0]) ** 2 - np.abs(alpha[..., 1]) ** 2)


def bloch_angles(bloch_triplet):
    v = np.asarray(bloch_triplet, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ArgumentError("Bloch triplet has zero length; direction undefined")
    if norm > 0.5 + 1e-12:
        raise ArgumentError("Bloch triplet must have length <= 1/2", length=norm)
    n = v / norm
    theta = np.arccos(np.clip(n[2], -1.0, 1.0))
    phi = np.arctan2(n[1], n[0])
    return theta, phi


def css_amplitudes(N, bloch_triplet):
    """Mean amplitudes of the spin-coherent state pointing along the triplet."""
    theta, phi = bloch_angles(bloch_triplet)
    return np.array(
        [np.sqrt(N) * np.cos(theta / 2.0), np.sqrt(N) * np.sin(theta / 2.0) * np.exp(1j * phi)]
    )


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def sample_css(params, bloch_triplet, n_traj, master_seed, start_index=0, noise=True):
    """CSS Wigner samples: mean amplitudes plus half-quantum vacuum noise per mode."""
    mean = css_amplitudes(params.N, bloch_triplet)
    alpha = np.tile(mean, (n_traj, 1))
    if noise:
        for i in range(n_traj):
            stream = RngStream(master_seed, start_index + i, StreamPurpose.INIT)
            alpha[i] += sample_complex_gaussian(stream, 0.5, size=2)
    return TwoModeEnsemble(alpha)


def sample_thermal_spin(params, n_traj, master_seed, start_index=0):
    """Samples of the maximally mixed state I/(N+1).

    A uniform direction on the sphere of radius sqrt(J(J+1)) fixes J_z and
    the relative phase; the mode populations share (N+1)/2 around J_z and the
    global phase is uniform.
    """
    N = params.N
    J = N / 2.0
    radius = np.sqrt(J * (J + 1.0))
    alpha = np.empty((n_traj, 2), dtype=complex)
    for i in range(n_traj):
        gen = RngStream(master_seed, start_index + i, StreamPurpose.INIT).generator
        u = gen.standard_normal(3)
        u /= np.linalg.norm(u)
        jx, jy, jz = radius * u
        global_phase = gen.uniform(0.0, 2.0 * np.pi)
        rel = np.arctan2(jy, jx)
        amp1 = np.sqrt((N + 1) / 2.0 + jz)
        amp2 = np.sqrt((N + 1) / 2.0 - jz)
        alpha[i, 0] = amp1 * np.exp(1j * global_phase)
        alpha[i, 1] = amp2 * np.exp(1j * (global_phase + rel))
    return TwoModeEnsemble(alpha)


def wigner_shell(N):
    """Wigner value of n1 + n2 for N atoms: each mode adds half a quantum."""
    return N + 2.0 * MODE_OCCUPATION_SHIFT


def renormalize_to_N(ensemble, N, offset=0):
    """Scale every trajectory to |a1|^2 + |a2|^2 = N, phases untouched."""
    alpha = ensemble.alpha if isinstance(ensemble, TwoModeEnsemble) else ensemble
    norm = np.sum(np.abs(alpha) ** 2, axis=-1)
    if np.any(norm == 0):
        index = int(np.argmax(norm == 0)) + offset
        raise NumericalError("zero-norm trajectory cannot be renormalized", trajectory=index)
    scaled = alpha * np.sqrt(N / norm)[..., None]
    return TwoModeEnsemble(scaled) if isinstance(ensemble, TwoModeEnsemble) else scaled


# ---------------------------------------------------------------------------
# feature tables and reductions
# ---------------------------------------------------------------------------


def wigner_features(alpha, params=None):
    """Per-trajectory physical estimators from Wigner samples.

    Every column averages to the corresponding quantum expectation value:
    squared spin components carry the -1/8 shift, occupations the -1/2 shift,
    and the energy column uses <n^2> = <|a|^4>_W - <|a|^2>_W.
    """
    jx, jy, jz = spin_components(alpha)
    p = np.abs(alpha) ** 2
    cross = np.conj(alpha[:, 0]) * alpha[:, 1]
    if params is None:
        energy = np.zeros(len(alpha))
    else:
        energy = 0.5 * params.chi * np.sum(p**2 - p, axis=1) + 2.0 * params.kappa * cross.real
    return np.column_stack(
        [
            jx,
            jy,
            jz,
            jx**2 - SPIN_VARIANCE_SHIFT,
            jy**2 - SPIN_VARIANCE_SHIFT,
            jz**2 - SPIN_VARIANCE_SHIFT,
            p[:, 0] - MODE_OCCUPATION_SHIFT,
            p[:, 1] - MODE_OCCUPATION_SHIFT,
            cross.real,
            cross.imag,
            energy,
        ]
    )


def _tmcf_from_means(m):
    """Largest eigenvalue over trace of the 2x2 one-body matrix, vectorized over rows."""
    g11 = m[..., _COL["n1"]]
    g22 = m[..., _COL["n2"]]
    g12 = np.hypot(m[..., _COL["g12_re"]], m[..., _COL["g12_im"]])
    trace = g11 + g22
    top = 0.5 * trace + np.sqrt(0.25 * (g11 - g22) ** 2 + g12**2)
    return top, trace


def stats_from_means(m):
    """Dict of observable -> value computed from feature means (vectorized)."""
    out = {}
    for axis in ("x", "y", "z"):
        mean = m[..., _COL["J" + axis]]
        out["mean_J" + axis] = mean
        out["var_J" + axis] = m[..., _COL["J" + axis + "2"]] - mean**2
    top, trace = _tmcf_from_means(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        out["tmcf"] = top / trace
    out["energy"] = m[..., _COL["energy"]]
    return out


def summarize_features(features, plan, level_sigmas=2.0, names=OBSERVABLES):
    """BootstrapCI per observable from a feature table (one row per sample)."""
    features = np.asarray(features, dtype=float)
    point = stats_from_means(features.mean(axis=0))
    reps = stats_from_means(plan.means(features))
    if "tmcf" in names:
        _, trace = _tmcf_from_means(features.mean(axis=0))
        if not trace > 0:
            raise NumericalDegeneracyError("one-body matrix has non-positive trace", trace=float(trace))
    return {name: make_ci(point[name], reps[name], level_sigmas) for name in names}


def _plan_for(n_traj, plan, n_resamples, seed):
    if n_traj < 2:
        raise ArgumentError("at least two trajectories are required", n_traj=n_traj)
    if plan is None:
        plan = BootstrapPlan.for_run(n_traj, n_resamples, seed)
    return plan


def spin_moments(ensemble, params=None, level_sigmas=2.0, n_resamples=1000, seed=0, plan=None):
    """Means and ordering-corrected variances of J_x, J_y, J_z with bootstrap intervals."""
    plan = _plan_for(ensemble.n_traj, plan, n_resamples, seed)
    cis = summarize_features(wigner_features(ensemble.alpha, params), plan, level_sigmas, MOMENT_OBSERVABLES)
    return SpinMoments(**cis)


def two_mode_condensate_fraction(ensemble, level_sigmas=2.0, n_resamples=1000, seed=0, plan=None):
    plan = _plan_for(ensemble.n_traj, plan, n_resamples, seed)
    return summarize_features(wigner_features(ensemble.alpha), plan, level_sigmas, ("tmcf",))["tmcf"]


def two_mode_energy(ensemble, params, level_sigmas=2.0, n_resamples=1000, seed=0, plan=None):
    plan = _plan_for(ensemble.n_traj, plan, n_resamples, seed)
    return summarize_features(wigner_features(ensemble.alpha, params), plan, level_sigmas, ("energy",))["energy"]


def spin_histograms(alpha, N, bins=61):
    """Normalized histograms of the J_y and J_z Wigner values on a fixed grid."""
    edges = np.linspace(-0.6 * N - 1.0, 0.6 * N + 1.0, bins + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    _, jy, jz = spin_components(alpha)
    out = {}
    for name, values in (("Jy", jy), ("Jz", jz)):
        counts, _ = np.histogram(values, bins=edges)
        out[name] = counts / max(len(values), 1)
    return centers, out
