"""
Run output: observable CSVs, the run manifest and quick-look plots.

Floats are written with repr() so identical runs give identical bytes.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from cooling_pipeline.errors import ComparisonError  # noqa: E402
from cooling_pipeline.utils.utils_log import getLogger  # noqa: E402

log = getLogger("output")

SERIES_HEADER = ["time", "value", "ci_lower", "ci_upper"]
PROFILE_HEADER = ["time", "x", "value", "ci_lower", "ci_upper"]
DIST_HEADER = ["time", "bin_center", "probability"]
MANIFEST_NAME = "manifest.json"


def fmt(value):
    return repr(float(value))


def timestamp():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    experiment: str
    solver: str
    level_sigmas: float
    started: str
    finished: str = ""
    config: dict = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def _open_csv(path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8")


def write_series_csv(path, series):
    with _open_csv(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SERIES_HEADER)
        for t, ci in zip(series.times, series.cis):
            writer.writerow([fmt(t), fmt(ci.point_estimate), fmt(ci.lower), fmt(ci.upper)])
    return path


def write_profile_csv(path, profile):
    with _open_csv(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PROFILE_HEADER)
        for t, value, lower, upper in zip(profile.times, profile.value, profile.lower, profile.upper):
            for x, v, lo, hi in zip(profile.x, value, lower, upper):
                writer.writerow([fmt(t), fmt(x), fmt(v), fmt(lo), fmt(hi)])
    return path


def write_distribution_csv(path, times, centers, histograms):
    with _open_csv(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(DIST_HEADER)
        for t, hist in zip(times, histograms):
            for c, p in zip(centers, hist):
                writer.writerow([fmt(t), fmt(c), fmt(p)])
    return path


def write_json_atomic(path, payload):
    """Write JSON through a temporary file and os.replace."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)
    return path


def write_manifest(directory, manifest):
    path = os.path.join(directory, MANIFEST_NAME)
    write_json_atomic(path, manifest.to_dict())
    log.info("manifest written: %s", path)
    return path


# ---------------------------------------------------------------------------
# readers
# ---------------------------------------------------------------------------


def read_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise ComparisonError(f"manifest not found: {path}", path=str(path))
    with open(path, encoding="utf-8") as handle:
        return RunManifest.from_dict(json.load(handle)), os.path.dirname(os.path.abspath(path))


def read_series_csv(path):
    """Columns of a scalar-observable CSV as float arrays."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if header != SERIES_HEADER:
            raise ComparisonError("not a scalar observable file", path=str(path), header=",".join(header))
        rows = [[float(v) for v in row] for row in reader]
    table = np.array(rows, dtype=float).reshape(-1, len(SERIES_HEADER))
    return {name: table[:, i] for i, name in enumerate(SERIES_HEADER)}


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------


def plot_series(path, series, title=None):
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    times = np.asarray(series.times)
    ax.fill_between(times, series.lower, series.upper, alpha=0.3, linewidth=0)
    ax.plot(times, series.value, linewidth=1.2)
    ax.set_xlabel("time")
    ax.set_ylabel(series.name)
    ax.set_title(title or series.name)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_profile(path, profile, title=None):
    """First, middle and last recorded profiles with their bands."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    n = len(profile.times)
    for i in sorted({0, n // 2, n - 1}) if n else []:
        ax.fill_between(profile.x, profile.lower[i], profile.upper[i], alpha=0.25, linewidth=0)
        ax.plot(profile.x, profile.value[i], linewidth=1.0, label=f"t={profile.times[i]:.3g}")
    ax.set_xlabel("x")
    ax.set_ylabel(profile.name)
    ax.set_title(title or profile.name)
    if n:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
