"""Self-contained SVG plots of reduced-volume curves."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .reduced_volume import ReducedVolumeCurve  # noqa: E402


def curve_svg(curves: list[ReducedVolumeCurve] | ReducedVolumeCurve, title: str | None = None) -> str:
    """V~ against tau with error bars and the (4 pi)^{n/2} ceiling.

    The SVG embeds its glyphs as paths and carries no timestamp, so equal
    inputs give byte-identical files."""
    if isinstance(curves, ReducedVolumeCurve):
        curves = [curves]
    with plt.rc_context({"svg.hashsalt": "rgl", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        bounds = set()
        for c in curves:
            ax.errorbar(c.taus, c.values, yerr=c.errors, marker="o", capsize=3, label=c.model)
            bounds.add(c.n)
        for n in sorted(bounds):
            ax.axhline((4.0 * 3.141592653589793) ** (n / 2), color="0.5", ls="--", lw=0.8,
                       label=f"(4π)^{n}/2" if n % 2 else f"(4π)^{n // 2}")
        ax.set_xscale("log")
        ax.set_xlabel("τ")
        ax.set_ylabel("reduced volume")
        ax.set_title(title or ", ".join(c.model for c in curves))
        ax.legend(fontsize="small")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()
