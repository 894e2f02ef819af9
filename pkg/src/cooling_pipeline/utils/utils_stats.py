"""
Bootstrap statistics shared by every solver.

Confidence intervals are percentile bootstrap intervals whose coverage
matches a Gaussian interval of ``level_sigmas`` standard deviations
(2 sigma -> 95.45 %).
"""

from dataclasses import dataclass, field
from typing import Callable, List, Union

import numpy as np
from scipy.special import erf

from cooling_pipeline.errors import ArgumentError
from cooling_pipeline.utils.utils_rng import RngStream, StreamPurpose

DEFAULT_RESAMPLES = 1000


@dataclass(frozen=True)
class BootstrapCI:
    point_estimate: float
    lower: float
    upper: float
    level_sigmas: float
    n_resamples: int

    @property
    def half_width(self):
        return 0.5 * (self.upper - self.lower)

    @property
    def sigma(self):
        """Gaussian-equivalent standard error implied by the interval."""
        return self.half_width / self.level_sigmas if self.level_sigmas > 0 else 0.0


def coverage(level_sigmas):
    """Two-sided Gaussian coverage of +-level_sigmas."""
    return float(erf(level_sigmas / np.sqrt(2.0)))


def percentile_interval(point, replicates, level_sigmas):
    """Percentile bounds along axis 0 of ``replicates``, clamped to contain ``point``."""
    c = coverage(level_sigmas)
    lo, hi = np.quantile(replicates, [(1.0 - c) / 2.0, (1.0 + c) / 2.0], axis=0)
    lo = np.minimum(lo, point)
    hi = np.maximum(hi, point)
    return lo, hi


def make_ci(point, replicates, level_sigmas):
    replicates = np.asarray(replicates, dtype=float)
    lo, hi = percentile_interval(point, replicates, level_sigmas)
    return BootstrapCI(float(point), float(lo), float(hi), float(level_sigmas), len(replicates))


class BootstrapPlan:
    """A fixed set of bootstrap resamples of ``n_samples`` items.

    The plan is drawn once and reused for every observable and record time,
    so all intervals of a run share the same resamples. Each resample is
    stored as a row of multiplicities.
    """

    def __init__(self, n_samples, n_resamples=DEFAULT_RESAMPLES, stream=None):
        if n_samples < 1:
            raise ArgumentError("bootstrap needs at least one sample", n_samples=n_samples)
        if n_resamples < 1:
            raise ArgumentError("n_resamples must be positive", n_resamples=n_resamples)
        if stream is None:
            stream = RngStream(0, 0, StreamPurpose.BOOTSTRAP)
        self.n_samples = int(n_samples)
        self.n_resamples = int(n_resamples)
        idx = stream.generator.integers(0, n_samples, size=(n_resamples, n_samples))
        # bincount over row-offset indices gives all multiplicities at once
        offsets = (np.arange(n_resamples) * n_samples)[:, None]
        counts = np.bincount((idx + offsets).ravel(), minlength=n_resamples * n_samples)
        self.counts = counts.reshape(n_resamples, n_samples).astype(float)

    @classmethod
    def for_run(cls, n_samples, n_resamples, master_seed):
        return cls(n_samples, n_resamples, RngStream(master_seed, 0, StreamPurpose.BOOTSTRAP))

    def means(self, values):
        """Resampled means, shape (n_resamples,) + values.shape[1:]."""
        values = np.asarray(values)
        if values.shape[0] != self.n_samples:
            raise ArgumentError(
                "values do not match the plan",
                expected=self.n_samples,
                got=values.shape[0],
            )
        flat = values.reshape(self.n_samples, -1)
        out = self.counts @ flat / self.n_samples
        return out.reshape((self.n_resamples,) + values.shape[1:])


def bootstrap_ci(
    samples,
    statistic: Union[str, Callable] = "mean",
    level_sigmas=2.0,
    n_resamples=DEFAULT_RESAMPLES,
    stream=None,
):
    """Percentile bootstrap interval for the mean, the variance or a callable statistic."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ArgumentError("samples must be non-empty")
    if n_resamples < 100:
        raise ArgumentError("n_resamples must be at least 100", n_resamples=n_resamples)
    plan = BootstrapPlan(len(samples), n_resamples, stream)
    n = len(samples)

    if statistic == "mean":
        point = samples.mean()
        reps = plan.means(samples)
    elif statistic == "variance":
        ddof = n / (n - 1) if n > 1 else 1.0
        point = samples.var() * ddof
        reps = (plan.means(samples**2) - plan.means(samples) ** 2) * ddof
    elif callable(statistic):
        point = statistic(samples)
        reps = np.array(
            [statistic(np.repeat(samples, row.astype(int))) for row in plan.counts]
        )
    else:
        raise ArgumentError("unknown statistic", statistic=statistic)
    return make_ci(point, reps, level_sigmas)


@dataclass
class ObservableSeries:
    """A named scalar observable sampled at record times."""

    name: str
    times: List[float] = field(default_factory=list)
    cis: List[BootstrapCI] = field(default_factory=list)

    def append(self, time, ci):
        self.times.append(float(time))
        self.cis.append(ci)

    @property
    def value(self):
        return np.array([c.point_estimate for c in self.cis])

    @property
    def lower(self):
        return np.array([c.lower for c in self.cis])

    @property
    def upper(self):
        return np.array([c.upper for c in self.cis])

    def __len__(self):
        return len(self.times)


@dataclass
class ProfileSeries:
    """A spatial observable f(x) sampled at record times, with pointwise intervals."""

    name: str
    x: np.ndarray
    times: List[float] = field(default_factory=list)
    value: List[np.ndarray] = field(default_factory=list)
    lower: List[np.ndarray] = field(default_factory=list)
    upper: List[np.ndarray] = field(default_factory=list)

    def append(self, time, value, lower, upper):
        self.times.append(float(time))
        self.value.append(np.asarray(value, dtype=float))
        self.lower.append(np.asarray(lower, dtype=float))
        self.upper.append(np.asarray(upper, dtype=float))
