"""Render the per-figure series of a run log to PNG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LABELS = {
    "ee_z": "EE z [m]",
    "ee_zd": "desired z [m]",
    "z_workbench": "workbench [m]",
    "f_ext_z": "external force z [N]",
    "f_contact_z": "bench contact force [N]",
    "E_tank": "tank energy [J]",
    "P_task": "task power [W]",
    "E_total": "total energy [J]",
    "lambda": "lambda [-]",
}


def _plot_pair(ax, t, series, names):
    # first column on the left axis, the rest on the right if units differ
    left = names[0]
    ax.plot(t, series[left], label=LABELS.get(left, left))
    ax.set_ylabel(LABELS.get(left, left))
    if len(names) > 1 and left in ("E_tank", "E_total"):
        twin = ax.twinx()
        for n in names[1:]:
            twin.plot(t, series[n], color="tab:orange", label=LABELS.get(n, n))
        twin.set_ylabel(", ".join(LABELS.get(n, n) for n in names[1:]))
    else:
        for n in names[1:]:
            ax.plot(t, series[n], label=LABELS.get(n, n))
        ax.legend(loc="best", fontsize=8)


def render_figures(groups: dict, out_dir, title: str = "") -> list[Path]:
    """Write one PNG per series group; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fig_name, series in groups.items():
        names = [k for k in series if k != "t"]
        fig, ax = plt.subplots(figsize=(8, 3.2))
        _plot_pair(ax, series["t"], series, names)
        ax.set_xlabel("t [s]")
        ax.grid(alpha=0.3)
        ax.set_title(f"{title} {fig_name}".strip())
        fig.tight_layout()
        path = out / f"{fig_name}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths
