"""Figure emitters: field maps, loss curves, per-generation progress, montages.

All functions write straight to a file through the Agg backend, so they work
in headless runs. Output format follows the file suffix.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigurationError
from .geometry import mirror_expand
from .solver import FieldSolution


def _field(entry, name):
    """Read ``name`` from a dataclass-like object or a plain dict."""
    if isinstance(entry, dict):
        return entry[name]
    return getattr(entry, name)


def _draw_rings(ax, spec):
    theta = np.linspace(0, 2 * np.pi, 256)
    for radius, style in ((spec.r_object, "-"), (spec.r_shell, "--")):
        ax.plot(radius * np.cos(theta), radius * np.sin(theta),
                style, color="white", linewidth=0.8)


def save_fields(sol: FieldSolution, path) -> None:
    """Two-panel map of |Hz| and Re(Hz), normalized to the incident amplitude."""
    spec = sol.pmap.spec
    h0 = float(np.abs(sol.hz_background).mean())
    hz = sol.hz_total / h0
    half = sol.pmap.n * sol.pmap.cell_size / 2.0
    extent = (-half, half, -half, half)

    fig, axes = plt.subplots(1, 2, figsize=(10, 4.4), constrained_layout=True)
    mag = axes[0].imshow(np.abs(hz), origin="lower", extent=extent, cmap="magma")
    axes[0].set_title(r"$|H_z| / |H_0|$")
    fig.colorbar(mag, ax=axes[0], shrink=0.85)

    re = np.real(hz)
    lim = float(np.abs(re).max())
    rim = axes[1].imshow(re, origin="lower", extent=extent,
                         cmap="RdBu_r", vmin=-lim, vmax=lim)
    axes[1].set_title(r"$\mathrm{Re}\,H_z / |H_0|$")
    fig.colorbar(rim, ax=axes[1], shrink=0.85)

    for ax in axes:
        _draw_rings(ax, spec)
        ax.set_xlabel("x (um)")
        ax.set_ylabel("y (um)")
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_losses(histories, path) -> None:
    """GAN loss curves vs epoch, one continuous axis across generations.

    ``histories`` is a list of per-generation histories, each a list of rows
    (epoch, l_d, l_g, l_f, l_t). Generation boundaries show as dashed lines.
    The forward loss lives on its own axis since its scale is set by alpha_f.
    """
    if not histories or all(not h for h in histories):
        raise ConfigurationError("no loss history to plot")
    fig, ax = plt.subplots(figsize=(8, 4.5), constrained_layout=True)
    axf = ax.twinx()
    offset = 0
    boundaries = []
    ld_all, lg_all, lf_all, xs = [], [], [], []
    for rows in histories:
        for row in rows:
            xs.append(offset + int(_field_row(row, 0)))
            ld_all.append(float(_field_row(row, 1)))
            lg_all.append(float(_field_row(row, 2)))
            lf_all.append(float(_field_row(row, 3)))
        offset = xs[-1] + 1 if xs else 0
        boundaries.append(offset)
    ax.plot(xs, ld_all, label=r"$L_d$", color="tab:blue")
    ax.plot(xs, lg_all, label=r"$L_g$", color="tab:orange")
    axf.plot(xs, lf_all, label=r"$L_f$", color="tab:green")
    for b in boundaries[:-1]:
        ax.axvline(b - 0.5, color="gray", linestyle="--", linewidth=0.7)
    ax.set_xlabel("epoch")
    ax.set_ylabel("adversarial loss")
    axf.set_ylabel("forward loss")
    lines = ax.get_lines()[: 2] + axf.get_lines()[: 1]
    ax.legend(lines, [ln.get_label() for ln in lines], loc="upper right")
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _field_row(row, index):
    if isinstance(row, dict):
        return list(row.values())[index]
    return row[index]


def save_progress(records, path, baseline: float | None = None) -> None:
    """Per-generation minimum (red) and mean (blue) of the simulated scattering."""
    if not records:
        raise ConfigurationError("no generation records to plot")
    gens = [int(_field(r, "generation")) for r in records]
    mins = [float(_field(r, "min_psi_r")) for r in records]
    means = [float(_field(r, "mean_psi_r")) for r in records]
    fig, ax = plt.subplots(figsize=(6.5, 4.2), constrained_layout=True)
    ax.semilogy(gens, means, "o-", color="tab:blue", label=r"mean $\Psi_r$")
    ax.semilogy(gens, mins, "s-", color="tab:red", label=r"min $\Psi_r$")
    if baseline is not None:
        ax.axhline(baseline, color="black", linestyle=":",
                   linewidth=1.0, label="bare object")
    ax.set_xlabel("generation")
    ax.set_ylabel(r"$\Psi_r$ (W/m)")
    ax.xaxis.set_major_locator(plt.MaxNLocator(integer=True))
    ax.legend()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_montage(images, path, cols: int = 5) -> None:
    """Grid of shell designs, each quadrant mirrored out to the full geometry."""
    images = list(images)
    if not images:
        raise ConfigurationError("no images to plot")
    rows = (len(images) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.6 * rows),
                             constrained_layout=True, squeeze=False)
    for ax in axes.flat:
        ax.set_axis_off()
    for ax, img in zip(axes.flat, images):
        ax.imshow(mirror_expand(np.asarray(img)), origin="lower",
                  cmap="gray_r", vmin=0, vmax=1, interpolation="nearest")
    fig.savefig(path, dpi=150)
    plt.close(fig)
