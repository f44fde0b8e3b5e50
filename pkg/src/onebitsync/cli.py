"""Command-line interface for the simulation harness.

Configuration precedence: built-in defaults, then the YAML file given by
``--config``, then any explicitly passed flag of the same name.
"""

from __future__ import annotations

import logging

import click
import numpy as np
import yaml

from .experiment import (
    ExperimentConfig,
    emit_objective_curve,
    run_crb_sweep,
    run_sweep,
    run_trial,
)

_FLAT_KEYS = (
    "n_t", "n_r", "channel_family", "sigma_h_sq", "n_clusters", "rays_per_cluster",
    "angle_spread_deg", "antenna_spacing_ratio", "cfo_unit", "n_trials", "base_seed",
    "output", "workers", "include_timing", "figures",
)
_LIST_KEYS = ("snr_db_list", "np_list", "cfo_list", "baselines")
_CFO_SEARCH_KEYS = {"n1": "n1", "n2": "n2", "refine_max_iters": "refine_max_iters"}
_GAMP_KEYS = {
    "gamp_max_iters": "max_iters",
    "gamp_damping": "damping",
    "gamp_tol": "tol",
    "em_max_iters": "em_max_iters",
}


def config_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="YAML config file; flags override its keys."),
        click.option("--n-t", type=int, default=None, help="Transmit antennas."),
        click.option("--n-r", type=int, default=None, help="Receive antennas."),
        click.option("--channel-family", type=click.Choice(["gaussian", "mmwave"]),
                     default=None),
        click.option("--sigma-h-sq", type=float, default=None,
                     help="Gaussian prior variance per real dimension."),
        click.option("--n-clusters", type=int, default=None),
        click.option("--rays-per-cluster", type=int, default=None),
        click.option("--angle-spread-deg", type=float, default=None),
        click.option("--antenna-spacing-ratio", type=float, default=None),
        click.option("--snr-db-list", type=str, default=None,
                     help="Comma list, e.g. 0,5,10."),
        click.option("--np-list", type=str, default=None,
                     help="Comma list of training lengths, e.g. 64,256,512."),
        click.option("--cfo-list", type=str, default=None,
                     help="Comma list of CFO values (see --cfo-unit)."),
        click.option("--cfo-unit", type=click.Choice(["fraction", "radians"]),
                     default=None),
        click.option("--n-trials", type=int, default=None),
        click.option("--base-seed", type=int, default=None),
        click.option("--baselines", type=str, default=None,
                     help="Comma list: unknown-cfo,known-cfo,no-compensation."),
        click.option("--output", type=str, default=None, help="Metrics CSV path."),
        click.option("--workers", type=int, default=None,
                     help="Process pool size for trials."),
        click.option("--include-timing/--no-include-timing", "include_timing",
                     default=None, help="Add wall-clock columns to the metrics CSV "
                     "(breaks byte-level reproducibility)."),
        click.option("--figures/--no-figures", "figures", default=None),
        click.option("--n1", type=int, default=None, help="Coarse detection grid size."),
        click.option("--n2", type=int, default=None, help="Refined detection factor."),
        click.option("--refine-max-iters", type=int, default=None),
        click.option("--gamp-max-iters", type=int, default=None),
        click.option("--gamp-damping", type=float, default=None),
        click.option("--gamp-tol", type=float, default=None),
        click.option("--em-max-iters", type=int, default=None),
        click.option("--no-em", is_flag=True, default=False,
                     help="Disable EM hyperparameter learning."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _parse_list(text, cast):
    return tuple(cast(part) for part in str(text).split(",") if part.strip())


def build_config(kwargs, defaults: dict | None = None) -> ExperimentConfig:
    """Merge defaults, YAML config, and explicit CLI flags into one config."""
    data = dict(defaults or {})
    if kwargs.get("config_path"):
        with open(kwargs["config_path"]) as fh:
            data.update(yaml.safe_load(fh) or {})

    for key in _FLAT_KEYS:
        if kwargs.get(key) is not None:
            data[key] = kwargs[key]
    for key in _LIST_KEYS:
        if kwargs.get(key) is not None:
            cast = {"np_list": int, "baselines": str}.get(key, float)
            data[key] = _parse_list(kwargs[key], cast)

    nested = dict(data.get("cfo_search") or {})
    for flag, field_name in _CFO_SEARCH_KEYS.items():
        if kwargs.get(flag) is not None:
            nested[field_name] = kwargs[flag]
    if nested:
        data["cfo_search"] = nested

    nested = dict(data.get("gamp") or {})
    for flag, field_name in _GAMP_KEYS.items():
        if kwargs.get(flag) is not None:
            nested[field_name] = kwargs[flag]
    if kwargs.get("no_em"):
        nested["em_enabled"] = False
    if nested:
        data["gamp"] = nested

    return ExperimentConfig.from_dict(data)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable info-level logging.")
def main(verbose):
    """Two-stage CFO + channel estimation with one-bit ADCs: simulation CLI."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@config_options
@click.option("--trial-index", type=int, default=0, show_default=True)
def simulate(trial_index, **kwargs):
    """Run one verbose trial at the first grid point of the configuration."""
    config = build_config(kwargs)
    record = run_trial(config, config.np_list[0], config.snr_db_list[0],
                       config.cfo_rad_list[0], trial_index)
    click.echo(f"trial {record.trial_index} (seed {record.seed})")
    click.echo(f"  np={record.np_symbols} snr_db={record.snr_db:g} "
               f"channel={config.channel_family}")
    click.echo(f"  cfo_true      = {record.cfo_true:.8f} rad")
    click.echo(f"  cfo_coarse    = {record.cfo_coarse:.8f} rad")
    click.echo(f"  cfo_detection = {record.cfo_detection:.8f} rad")
    click.echo(f"  cfo_hat       = {record.cfo_hat:.8f} rad")
    if np.isfinite(record.cfo_sq_err) and record.cfo_sq_err > 0:
        click.echo(f"  cfo_sq_err    = {record.cfo_sq_err:.3e} "
                   f"({10 * np.log10(record.cfo_sq_err):.1f} dB)")
    if np.isfinite(record.crb_value):
        click.echo(f"  crb           = {record.crb_value:.3e} "
                   f"({10 * np.log10(record.crb_value):.1f} dB)")
    for baseline, nmse in record.nmse.items():
        click.echo(f"  nmse[{baseline}] = {nmse:.4f} ({10 * np.log10(nmse):.2f} dB)")
    click.echo(f"  t_cfo={record.t_cfo_s:.3f}s t_chan={record.t_chan_s:.3f}s")
    for stage, error in record.errors.items():
        click.echo(f"  ERROR in {stage}: {error}", err=True)


@main.command()
@config_options
def sweep(**kwargs):
    """Full Monte Carlo sweep over (np, snr, cfo); writes CSV + figures."""
    config = build_config(kwargs, defaults={"output": "sweep.csv"})
    result = run_sweep(config)
    click.echo(f"wrote {result.csv_path} ({len(result.rows)} rows)")
    for path in result.figure_paths:
        click.echo(f"wrote {path}")


@main.command("cfo-sweep")
@config_options
def cfo_sweep(**kwargs):
    """Sweep the true CFO at fixed np / SNR (supplementary-style study)."""
    defaults = {
        "output": "cfo_sweep.csv",
        "np_list": (256,),
        "snr_db_list": (10.0,),
        "cfo_list": tuple(np.round(np.linspace(0.1, 6.1, 13), 4)),
        "cfo_unit": "radians",
    }
    config = build_config(kwargs, defaults=defaults)
    result = run_sweep(config)
    click.echo(f"wrote {result.csv_path} ({len(result.rows)} rows)")
    for path in result.figure_paths:
        click.echo(f"wrote {path}")


@main.command("objective-curve")
@config_options
@click.option("--np-symbols", type=int, default=512, show_default=True)
@click.option("--snr-db", type=float, default=10.0, show_default=True)
@click.option("--grid-size", type=int, default=4096, show_default=True)
@click.option("--trial-index", type=int, default=0, show_default=True)
def objective_curve(np_symbols, snr_db, grid_size, trial_index, **kwargs):
    """Emit one trial's S(omega) curve and its measured main-lobe width."""
    config = build_config(kwargs, defaults={"output": "objective_curve.csv"})
    curve = emit_objective_curve(config, np_symbols, snr_db, grid_size,
                                 trial_index, output=config.output)
    click.echo(f"wrote {config.output}")
    click.echo(f"peak at {curve.omega_peak:.6f} rad (true {curve.cfo_true:.6f})")
    click.echo(f"main-lobe width {curve.width_main_lobe:.6f} rad; "
               f"half-max width {curve.width_half_max:.6f} rad")


@main.command()
@config_options
def crb(**kwargs):
    """Bound-only sweep: averaged CRB per grid cell, same CSV schema."""
    config = build_config(kwargs, defaults={"output": "crb.csv"})
    result = run_crb_sweep(config)
    click.echo(f"wrote {result.csv_path} ({len(result.rows)} rows)")
    for path in result.figure_paths:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
