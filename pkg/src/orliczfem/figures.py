"""Figure rendering for convergence reports, ratio tables, and FE fields.

Everything renders through the Agg backend straight to files; no window is
ever opened.  Figures are presentation artifacts: byte determinism is
promised for the CSV/JSON outputs, not for the PNGs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np

__all__ = ["render_convergence", "render_ratio_table", "render_solution"]


def render_convergence(report, path):
    """Log-log error-vs-h plot with a dashed reference of the expected rate.

    ``report`` is a ConvergenceReport; levels past a solver failure carry no
    error and are skipped.  Returns the output path.
    """
    recs = [r for r in report.levels if r.get("quasinorm_error") is not None]
    if not recs:
        raise ValueError("report holds no converged levels to plot")
    h = np.array([r["h"] for r in recs])
    err = np.array([r["quasinorm_error"] for r in recs])

    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.loglog(h, err, "o-", label="quasi-norm error")
    rate = report.data.get("expected_eoc", 1.0)
    ref = err[-1] * (h / h[-1]) ** rate
    ax.loglog(h, ref, "k--", linewidth=0.8, label=f"slope {rate:g}")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.set_title(report.case)
    ax.grid(True, which="both", linewidth=0.3, alpha=0.5)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_ratio_table(rows, path):
    """Per-kind max-ratio trace across refinement levels.

    ``rows`` are RatioRow objects (or dicts with the same keys) from the
    interpolation stability report; a flat trace means level-stable bounds.
    """
    dicts = [r if isinstance(r, dict) else r.as_dict() for r in rows]
    if not dicts:
        raise ValueError("no ratio rows to plot")
    kinds = sorted({d["kind"] for d in dicts})

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for kind in kinds:
        sub = sorted((d for d in dicts if d["kind"] == kind), key=lambda d: d["level"])
        ax.plot(
            [d["level"] for d in sub],
            [d["max_ratio"] for d in sub],
            "o-",
            label=kind,
        )
    ax.set_xlabel("level")
    ax.set_ylabel("max ratio")
    ax.set_yscale("log")
    ax.xaxis.set_major_locator(plt.MaxNLocator(integer=True))
    ax.grid(True, which="both", linewidth=0.3, alpha=0.5)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_solution(u, path, title=None):
    """Flat-shaded nodal field over its triangulation."""
    mesh = u.mesh
    tri = mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.cells)
    fig, ax = plt.subplots(figsize=(5.0, 4.4))
    im = ax.tripcolor(tri, u.coeffs, shading="gouraud")
    ax.triplot(tri, color="k", linewidth=0.1, alpha=0.3)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
