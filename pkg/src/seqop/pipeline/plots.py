"""SVG figures for a report directory (needs matplotlib, the ``plot`` extra)."""
from __future__ import annotations

import numpy as np


def render(out, report, bundle, predictions, edges, counts, pts, coords_mm):
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("SVG output needs matplotlib (pip install 'seqop[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .evaluation import idw_sample

    written = []
    unit = bundle.units["fields"]

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="k")
    ax.set_xlabel("relative L2 error")
    ax.set_ylabel("test cases")
    ax.set_title(f"mean {report.mean:.3g}")
    fig.tight_layout()
    p = out / "histogram.svg"
    fig.savefig(p)
    plt.close(fig)
    written.append(p)

    pos = {int(c): i for i, c in enumerate(bundle.case_ids)}
    s = np.linalg.norm(pts - pts[0], axis=1)
    for cid in (report.best, report.median, report.worst):
        i = pos[cid]
        truth = bundle.fields[i]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(s, idw_sample(coords_mm, truth, pts), "k-", label="truth")
        for name, pred in predictions.items():
            ax.plot(s, idw_sample(coords_mm, pred[i], pts), "--", label=name)
        ax.set_xlabel("distance along line [mm]")
        ax.set_ylabel(unit)
        ax.legend()
        fig.tight_layout()
        p = out / f"line_{cid}.svg"
        fig.savefig(p)
        plt.close(fig)
        written.append(p)

        if bundle.problem == "plastic":
            n = 1 + len(predictions)
            fig, axes = plt.subplots(n, 1, figsize=(6, 2.2 * n))
            axes = np.atleast_1d(axes)
            vmin, vmax = float(truth.min()), float(truth.max())
            for ax, (name, vals) in zip(axes, [("truth", truth)] + [(k, v[i]) for k, v in predictions.items()]):
                sc = ax.scatter(coords_mm[:, 0], coords_mm[:, 1], c=vals, s=2, vmin=vmin, vmax=vmax)
                ax.set_aspect("equal")
                ax.set_title(name)
                fig.colorbar(sc, ax=ax, label=unit)
            fig.tight_layout()
            p = out / f"field_case_{cid}.svg"
            fig.savefig(p)
            plt.close(fig)
            written.append(p)
    return written
