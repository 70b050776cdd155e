"""SVG rendering of sweep results: task accuracy against total file size."""

from __future__ import annotations

from pathlib import Path


def _num(v):
    if v is None or v == "":
        return None
    return float(v)


def plot_sweep(rows, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "privfan"
    rows = [r for r in rows if _num(r.get("total_bytes")) is not None]
    rows.sort(key=lambda r: _num(r["total_bytes"]))
    kb = [_num(r["total_bytes"]) / 1024 for r in rows]
    panels = (("miou", "mIoU"), ("rmse", "disparity RMSE (lower is better)"), ("cra", "CRA (%)"))
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for ax, (key, label) in zip(axes, panels):
        pts = [(x, _num(r.get(key))) for x, r in zip(kb, rows) if _num(r.get(key)) is not None]
        if pts:
            ax.plot(*zip(*pts), marker="o")
            for (x, y), r in zip(pts, rows):
                ax.annotate(f"QP{int(float(r['qp']))}", (x, y), textcoords="offset points", xytext=(3, 4), fontsize=7)
        ax.set_xlabel("total size (KB)")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_blur(rows, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "privfan"
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ax.plot([_num(r["mse"]) for r in rows], [_num(r["cra"]) for r in rows], marker="o")
    ax.set_xlabel("MSE (original vs blurred)")
    ax.set_ylabel("CRA (%)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
