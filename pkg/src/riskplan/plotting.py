"""Report figures rendered to image files (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import PowerNorm  # noqa: E402

from .riskfield import RiskGrid, RiskStack  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_speed(metrics, path: Path, s_max: float | None = None) -> Path:
    """Ego speed and longitudinal/lateral acceleration over time."""
    t = np.asarray(metrics.series["t"])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.plot(t, metrics.series["speed"], label="speed")
    desired = np.asarray(metrics.series["desired_speed"], dtype=float)
    if np.isfinite(desired).any():
        ax1.plot(t, desired, "--", lw=1, label="desired")
    if s_max is not None:
        ax1.axhline(s_max, color="grey", lw=0.8, ls=":")
    ax1.set_ylabel("m/s")
    ax1.legend(loc="lower right")
    ax2.plot(t, metrics.series["a_lon"], label="a_lon")
    ax2.plot(t, metrics.series["a_lat"], label="a_lat")
    ax2.set_xlabel("t [s]")
    ax2.set_ylabel("m/s²")
    ax2.legend(loc="lower right")
    return _save(fig, path)


def plot_trajectory(metrics, scenario, path: Path) -> Path:
    """Top-down view: lanes, static features, agent tracks and the ego track."""
    fig, ax = plt.subplots(figsize=(9, 3.5))
    for lane in scenario.lanes.lanes:
        c = np.asarray(lane.centerline)
        ax.plot(c[:, 0], c[:, 1], color="0.8", lw=0.8, ls="--")
    for st in scenario.statics:
        p = st.points
        ax.plot(p[:, 0], p[:, 1], color="k" if st.kind == "barrier" else "0.5", lw=1.2)
    for aid, rows in sorted(metrics.agent_series.items()):
        r = np.asarray(rows)
        ax.plot(r[:, 1], r[:, 2], lw=1, label=aid)
    x = np.asarray(metrics.series["x"])
    y = np.asarray(metrics.series["y"])
    ax.plot(x, y, color="tab:red", lw=2, label="ego")
    ax.set_xlim(min(x.min(), 0) - 5, x.max() + 20)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="upper left", fontsize=7)
    return _save(fig, path)


def plot_grid(grid: RiskGrid, ax, vmax: float = 100.0):
    sp = grid.spec
    extent = (sp.origin.x, sp.origin.x + sp.nx * sp.resolution, sp.origin.y, sp.origin.y + sp.ny * sp.resolution)
    # gamma < 1 keeps the weak far field visible next to saturated footprints
    norm = PowerNorm(0.35, vmin=0.0, vmax=vmax)
    return ax.imshow(grid.energies.T, origin="lower", extent=extent, norm=norm, cmap="magma", aspect="auto")


def plot_stack(stack: RiskStack, path: Path, vmax: float = 100.0) -> Path:
    """One heatmap panel per stack frame."""
    n = len(stack.frames)
    fig, axes = plt.subplots(n, 1, figsize=(8, 1.3 * n + 0.6), sharex=True, squeeze=False)
    im = None
    for j, (ax, grid) in enumerate(zip(axes[:, 0], stack.frames)):
        im = plot_grid(grid, ax, vmax)
        ax.set_ylabel(f"+{j * stack.dt:.1f}s", fontsize=8)
    axes[-1, 0].set_xlabel("x [m]")
    fig.colorbar(im, ax=axes[:, 0].tolist(), shrink=0.8, label="energy")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def write_report_figures(sim, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    figs = [plot_speed(sim.metrics, out / "speed.png", sim.sc.speed_limit),
            plot_trajectory(sim.metrics, sim.sc, out / "trajectory.png")]
    if sim.first_stack is not None:
        figs.append(plot_stack(sim.first_stack[1], out / "risk_stack.png", sim.params.risk.potential.E_max))
    return figs
