"""Figure rendering with byte-reproducible SVG output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_curves(path, curves: dict[str, tuple[list[float], list[float]]],
                  xlabel: str = "radius", ylabel: str = "certified accuracy") -> None:
    """Write one SVG with a line per named curve.

    hashsalt and a cleared Date field keep the bytes identical across runs.
    """
    with plt.rc_context({"svg.hashsalt": "crosscert"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for name in curves:
            radii, values = curves[name]
            ax.plot(radii, values, marker="o", markersize=3.5, label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="upper right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
