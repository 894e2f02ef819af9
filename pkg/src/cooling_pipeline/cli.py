# CLI commands for fbcool

import json
import sys

import click

from cooling_pipeline import main
from cooling_pipeline.errors import CoolingError
from cooling_pipeline.io.fbc_config import available_presets, load_config
from cooling_pipeline.utils.utils_log import set_verbose
from cooling_pipeline.version import get_version_string

EXIT_COMPARISON_FAILED = 4


def _fail(error):
    click.echo(f"❌ {error.diagnostic()}", err=True)
    sys.exit(error.exit_code)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
@click.version_option(get_version_string(), prog_name="fbcool")
def cli(verbose):
    """Feedback-cooling simulations: two-mode benchmarks and 1D field cooling."""
    if verbose:
        set_verbose(True)


@cli.command()
@click.argument("config_path", required=False, type=click.Path(dir_okay=False))
@click.option("--preset", help="Named preset: " + ", ".join(available_presets()))
@click.option("--seed", type=int, help="Override seeds.master_seed.")
@click.option("--threads", type=int, help="Worker threads (default: FBCOOL_THREADS or CPU count).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--no-plots", is_flag=True, help="Skip the SVG quick-look plots.")
def simulate(config_path, preset, seed, threads, out_dir, no_plots):
    """Run a configured experiment and write CSVs plus manifest.json."""
    if config_path is None and preset is None:
        raise click.UsageError("give a config file, --preset, or both")
    overrides = {}
    if seed is not None:
        overrides["seeds"] = {"master_seed": seed}
    if no_plots:
        overrides["output"] = {"plots": False}
    try:
        config = load_config(config_path, preset, overrides)
        manifests = main.run(config, threads, out_dir)
    except CoolingError as error:
        _fail(error)
    for manifest in manifests:
        click.echo(f"✅ {manifest.solver} run finished ({manifest.config_hash[:12]})")
        for warning in manifest.warnings:
            click.echo(f"⚠️  {warning}")
    click.echo(f"📁 Output: {out_dir or config.output['directory']}")


@cli.command()
@click.argument("manifest_a", type=click.Path(exists=True))
@click.argument("manifest_b", type=click.Path(exists=True))
@click.option("--sigmas", default=3.0, show_default=True, type=float, help="Tolerance in combined standard errors.")
@click.option("--json", "as_json", is_flag=True, help="Print the full report as JSON.")
def compare(manifest_a, manifest_b, sigmas, as_json):
    """Compare the scalar observables of two finished runs."""
    try:
        report = main.compare(manifest_a, manifest_b, sigmas)
    except CoolingError as error:
        _fail(error)
    if as_json:
        click.echo(json.dumps(report, indent=2))
    else:
        click.echo(f"🔍 Checked {report['total_checked']} points, {report['total_issues']} flagged")
        for issue in report["issues"][:20]:
            click.echo(f"   • {issue['object']}: {issue['message']}")
        if report["total_issues"] > 20:
            click.echo(f"   … {report['total_issues'] - 20} more")
    if report["passed"]:
        click.echo("✅ Runs agree")
    else:
        click.echo("❌ Runs disagree", err=True)
        sys.exit(EXIT_COMPARISON_FAILED)


@cli.command("thermal-sample")
@click.argument("config_path", required=False, type=click.Path(dir_okay=False))
@click.option("--preset", help="Named preset (field experiments only).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Target .npy file.")
@click.option("--seed", type=int, help="Override seeds.master_seed.")
@click.option("--threads", type=int)
def thermal_sample(config_path, preset, out_path, seed, threads):
    """Prepare (or reuse) the SPGPE thermal ensemble of a field config."""
    if config_path is None and preset is None:
        raise click.UsageError("give a config file, --preset, or both")
    overrides = {"seeds": {"master_seed": seed}} if seed is not None else {}
    try:
        config = load_config(config_path, preset, overrides)
        path, n_atoms, warnings = main.thermal_sample(config, out_path, threads)
    except CoolingError as error:
        _fail(error)
    for warning in warnings:
        click.echo(f"⚠️  {warning}")
    click.echo(f"✅ Thermal ensemble: {config.n_traj} samples, N_est={n_atoms:.4g}")
    click.echo(f"📁 {path}")


if __name__ == "__main__":
    cli()
