"""Figure rendering for sweep outputs (written next to the CSV files)."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_MARKERS = ("o", "s", "^", "d", "v", "*")


def _sibling(path: str, suffix: str) -> str:
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + suffix


def _finite(pairs):
    xs, ys = zip(*pairs) if pairs else ((), ())
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    keep = np.isfinite(ys)
    return xs[keep], ys[keep]


def _rows_for_snr(rows, snr_db):
    return sorted((r for r in rows if r.snr_db == snr_db), key=lambda r: r.np_symbols)


def plot_mse_vs_np(rows, path: str) -> str | None:
    """CFO MSE and CRB against the training length, one pair of lines per SNR."""
    snrs = sorted({r.snr_db for r in rows})
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    drew = False
    for marker, snr in zip(_MARKERS, snrs):
        cell = _rows_for_snr(rows, snr)
        xs, ys = _finite([(r.np_symbols, r.mse_cfo_db) for r in cell])
        if len(xs):
            ax.plot(xs, ys, marker=marker, label=f"MSE, SNR {snr:g} dB")
            drew = True
        xs, ys = _finite([(r.np_symbols, r.crb_db) for r in cell])
        if len(xs):
            ax.plot(xs, ys, linestyle="--", marker=marker, markerfacecolor="none",
                    label=f"CRB, SNR {snr:g} dB")
            drew = True
    if not drew:
        plt.close(fig)
        return None
    ax.set_xscale("log", base=2)
    ax.set_xlabel(r"training length $N_p$")
    ax.set_ylabel(r"MSE($\omega_e$) [dB]")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_nmse_vs_np(rows, path: str) -> str | None:
    """Channel NMSE against the training length for all recorded baselines."""
    snrs = sorted({r.snr_db for r in rows})
    series = (
        ("nmse_unknown_cfo_db", "unknown CFO", "-"),
        ("nmse_known_cfo_db", "known CFO", "--"),
        ("nmse_no_comp_db", "no compensation", ":"),
    )
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    drew = False
    for marker, snr in zip(_MARKERS, snrs):
        cell = _rows_for_snr(rows, snr)
        for attr, label, style in series:
            xs, ys = _finite([(r.np_symbols, getattr(r, attr)) for r in cell])
            if len(xs):
                ax.plot(xs, ys, style, marker=marker, label=f"{label}, SNR {snr:g} dB")
                drew = True
    if not drew:
        plt.close(fig)
        return None
    ax.set_xscale("log", base=2)
    ax.set_xlabel(r"training length $N_p$")
    ax.set_ylabel("NMSE [dB]")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_metric_vs_cfo(rows, attr: str, ylabel: str, path: str) -> str | None:
    """One metric against the true CFO at fixed (np, SNR)."""
    cells = sorted({(r.np_symbols, r.snr_db) for r in rows})
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    drew = False
    for marker, (np_symbols, snr) in zip(_MARKERS, cells):
        group = sorted(
            (r for r in rows if r.np_symbols == np_symbols and r.snr_db == snr),
            key=lambda r: r.cfo_true,
        )
        xs, ys = _finite([(r.cfo_true, getattr(r, attr)) for r in group])
        if len(xs):
            ax.plot(xs, ys, marker=marker, label=f"$N_p$={np_symbols}, SNR {snr:g} dB")
            drew = True
    if not drew:
        plt.close(fig)
        return None
    ax.set_xlabel(r"true CFO $\omega_e$ [rad]")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_sweep_figures(config, rows) -> list:
    """Standard figure set for a sweep CSV; skips figures with no data."""
    base = config.output
    paths = []
    if len({r.np_symbols for r in rows}) > 1 or len({r.cfo_true for r in rows}) == 1:
        paths.append(plot_mse_vs_np(rows, _sibling(base, "_mse_cfo.png")))
        paths.append(plot_nmse_vs_np(rows, _sibling(base, "_nmse.png")))
    if len({r.cfo_true for r in rows}) > 1:
        paths.append(plot_metric_vs_cfo(
            rows, "mse_cfo_db", r"MSE($\omega_e$) [dB]", _sibling(base, "_mse_vs_cfo.png")))
        paths.append(plot_metric_vs_cfo(
            rows, "nmse_unknown_cfo_db", "NMSE [dB]", _sibling(base, "_nmse_vs_cfo.png")))
    return [p for p in paths if p]


def render_crb_figure(config, rows) -> list:
    path = plot_mse_vs_np(rows, _sibling(config.output, "_crb.png"))
    return [path] if path else []


def render_objective_curve(curve, path: str) -> str:
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    ax.plot(curve.omega_grid, curve.s_values, lw=0.8)
    ax.axvline(curve.cfo_true, color="r", linestyle="--", lw=1.0, label=r"true $\omega_e$")
    ax.set_xlabel(r"$\omega$ [rad]")
    ax.set_ylabel(r"$S(\omega)$")
    ax.set_title(f"main lobe {curve.width_main_lobe:.4f} rad "
                 f"(half-max {curve.width_half_max:.4f} rad)", fontsize=9)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
