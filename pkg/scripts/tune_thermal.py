#!/usr/bin/env python3
"""
Thermal-state tuning sweep for the field presets.

Scans a grid of (mu, T) values, prepares a few SPGPE samples for each and
prints N_est and the condensate fraction, so a preset can be steered to a
target atom number and initial fraction.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cooling_pipeline.errors import CoolingError  # noqa: E402
from cooling_pipeline.io.fbc_config import load_config  # noqa: E402
from cooling_pipeline.tools.fbc_field1d import field_observables  # noqa: E402
from cooling_pipeline.tools.fbc_spgpe import spgpe_ensemble  # noqa: E402


def parse_values(text):
    return [float(v) for v in text.split(",") if v.strip()]


def scan(config, mus, temperatures, n_samples, threads=None):
    """Rows of (mu, T, N_est, f_frac) for every grid point."""
    grid = config.grid()
    thermal = config["thermal"]
    rows = []
    for mu in mus:
        for temperature in temperatures:
            trial = config.with_overrides(
                {"field": {"mu": mu, "T_tilde": temperature}, "seeds": {"n_traj": n_samples}}
            )
            ensemble, _ = spgpe_ensemble(
                trial.field_params(),
                grid,
                n_samples,
                trial.master_seed,
                thermal["t_equil"],
                thermal["dt"],
                threads,
            )
            obs = field_observables(ensemble, n_resamples=100)
            rows.append((mu, temperature, obs.N_est.point_estimate, obs.f_frac.point_estimate))
            print(
                f"   mu={mu:8.3f}  T={temperature:10.4g}  "
                f"N_est={obs.N_est.point_estimate:10.4g}  f_frac={obs.f_frac.point_estimate:6.3f}"
            )
    return rows


def main():
    parser = argparse.ArgumentParser(description="Scan SPGPE (mu, T) for a field preset")
    parser.add_argument("--preset", default="fig4")
    parser.add_argument("--mu", default="3,4,5", help="comma-separated chemical potentials")
    parser.add_argument("--temperature", default="1e4,2.5e4,5e4", help="comma-separated temperatures")
    parser.add_argument("--samples", type=int, default=8)
    parser.add_argument("--target-n", type=float, default=1e5)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    print("🚀 fbcool thermal tuning")
    print("=" * 40)
    try:
        config = load_config(preset=args.preset)
        rows = scan(config, parse_values(args.mu), parse_values(args.temperature), args.samples, args.threads)
    except CoolingError as error:
        print(f"❌ {error.diagnostic()}")
        return 1
    if not rows:
        print("❌ Empty scan grid")
        return 1

    table = np.array(rows)
    best = table[np.argmin(np.abs(np.log(table[:, 2].clip(1.0) / args.target_n)))]
    print(f"\n🎯 Closest to N={args.target_n:.3g}: mu={best[0]:g}, T={best[1]:g} (N_est={best[2]:.4g}, f_frac={best[3]:.3f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
