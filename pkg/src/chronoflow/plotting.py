"""SVG figure emission (deterministic, linear color scales, masked blanks).

Figures are written as SVG with a fixed hash salt and no embedded date so
that identical inputs produce byte-identical files.  All axes are labelled in
atomic units.  Masked (undefined or below-threshold) regions of heatmaps are
left blank rather than painted as zero.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import EmptyFieldError
from .factorization import DISPLAY_THRESHOLD

matplotlib.rcParams["svg.hashsalt"] = "chronoflow"

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}


def _new_axes(n=1, width=6.0, height=4.0):
    fig, axes = plt.subplots(1, n, figsize=(width * n, height), squeeze=False)
    return fig, axes[0]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return str(path)


def _heatmap(ax, grid, values, label, mask=None):
    data = np.ma.masked_invalid(np.asarray(values, dtype=float))
    if mask is not None:
        data = np.ma.masked_where(~mask, data)
    # imshow wants (rows=y, cols=x); our arrays are (R, r) with R outer
    ax.imshow(
        data.T,
        origin="lower",
        aspect="auto",
        interpolation="nearest",
        extent=(
            grid.grid_R.min, grid.grid_R.max,
            grid.grid_r.min, grid.grid_r.max,
        ),
    )
    ax.set_xlabel("R (bohr)")
    ax.set_ylabel("r (bohr)")
    ax.set_title(label)


def plot_potentials(bo, chi0_density, path):
    """Lowest two clock potentials with the initial marginal density overlay."""
    fig, (ax,) = _new_axes()
    R = bo.grid.grid_R.points
    for n in range(min(2, bo.n_states)):
        ax.plot(R, bo.epsilon[n], label=f"epsilon_{n} (hartree)")
    dens = np.asarray(chi0_density)
    scale = 0.5 * (bo.epsilon[: min(2, bo.n_states)].max() - bo.epsilon[0].min())
    ax.plot(
        R,
        bo.epsilon[0].min() + dens / dens.max() * scale,
        linestyle="--",
        label="|chi0|^2 (scaled)",
    )
    ax.set_xlabel("R (bohr)")
    ax.set_ylabel("energy (hartree)")
    ax.legend()
    return _save(fig, path)


def plot_snapshot_panel(state, potential_values, fact, path,
                        ensemble=None, threshold=DISPLAY_THRESHOLD):
    """Joint density with potential contours, marginal density, and the
    conditional density (masked below the display threshold) with optional
    trajectory overlay."""
    grid = state.grid
    fig, (ax_joint, ax_marg, ax_cond) = _new_axes(3, width=4.5)
    dens = np.abs(state.psi.values) ** 2
    _heatmap(ax_joint, grid, dens, f"|psi|^2, t = {state.t:g}")
    R, r = grid.meshgrid()
    levels = np.linspace(
        np.min(potential_values), min(np.max(potential_values), 2.0), 12
    )
    ax_joint.contour(
        R, r, potential_values, levels=levels, colors="white",
        linewidths=0.5, alpha=0.7,
    )

    marg = np.abs(fact.chi) ** 2
    ax_marg.plot(grid.grid_R.points, marg)
    ax_marg.set_xlabel("R (bohr)")
    ax_marg.set_ylabel("|chi|^2 (1/bohr)")
    ax_marg.set_title("marginal density")

    cond = np.abs(fact.phi) ** 2
    show = fact.region(threshold)[:, None] & np.isfinite(cond)
    _heatmap(ax_cond, grid, cond, "|phi|^2 (conditional)", mask=show)
    if ensemble is not None:
        i = int(np.argmin(np.abs(ensemble.times - state.t)))
        ax_cond.plot(
            ensemble.R[: i + 1], ensemble.r[: i + 1],
            color="white", linewidth=0.6, alpha=0.8,
        )
        ax_cond.plot(ensemble.R[i], ensemble.r[i], ".", color="red",
                     markersize=3)
    return _save(fig, path)


def plot_trajectories(ensembles, path):
    """Clock coordinate versus tau for one or more ensembles."""
    if not isinstance(ensembles, (list, tuple)):
        ensembles = [ensembles]
    if not ensembles:
        raise EmptyFieldError("no trajectory ensembles to plot")
    fig, (ax,) = _new_axes()
    styles = {"bohmian": "-", "clock_full": "-", "clock_simplified": "--"}
    for ens in ensembles:
        ax.plot(
            ens.times, ens.R, styles.get(ens.mode, "-"),
            linewidth=0.7, alpha=0.8,
        )
        ax.plot([], [], styles.get(ens.mode, "-"), label=ens.mode)
    ax.set_xlabel("tau (atomic time)")
    ax.set_ylabel("R (bohr)")
    ax.legend()
    return _save(fig, path)


def plot_residuals(reports, path):
    """RMS and relative RMS versus time, one curve per equation."""
    if not reports:
        raise EmptyFieldError("no residual reports to plot")
    fig, (ax_abs, ax_rel) = _new_axes(2, width=5.0)
    by_eq = {}
    for rep in reports:
        by_eq.setdefault(rep.equation, []).append(rep)
    for eq, reps in sorted(by_eq.items()):
        reps = sorted(reps, key=lambda rp: rp.t)
        ts = [rp.t for rp in reps]
        ax_abs.plot(ts, [rp.rms for rp in reps], marker=".", label=eq)
        ax_rel.plot(ts, [rp.relative_rms for rp in reps], marker=".", label=eq)
    for ax, name in ((ax_abs, "residual RMS"), (ax_rel, "relative RMS")):
        ax.set_xlabel("t (atomic time)")
        ax.set_ylabel(name)
        ax.set_yscale("log")
        ax.legend(fontsize=8)
    return _save(fig, path)
