"""Result emission: CSV tables, the run manifest, and SVG log-log plots.

CSV floats use repr-exact formatting so identical runs produce identical
bytes.  The SVG writer is self-contained (SVG 1.1): axes, error bars, the
fitted line, and a slope annotation.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time

__all__ = ["ResultWriter", "write_manifest", "svg_loglog", "file_sha256"]

RESULT_COLUMNS = ("experiment", "kernel_id", "density_id", "N", "order", "time",
                  "R", "estimate", "stderr", "detail", "master_seed", "config_hash")
FIT_COLUMNS = ("experiment", "order", "time", "slope", "ci_lo", "ci_hi",
               "degenerate", "sign_mixed", "master_seed", "config_hash")


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return f"{x:.17g}"
    return str(x)


class ResultWriter:
    """Collects result and fit rows; every row carries seed and config hash."""

    def __init__(self, master_seed: int, config_hash: str):
        self.master_seed = master_seed
        self.config_hash = config_hash
        self.result_rows: list[tuple] = []
        self.fit_rows: list[tuple] = []

    def add_result(self, experiment: str, kernel_id: str, density_id: str, n: int,
                   order: int, t: float, r: int, estimate: float, stderr: float,
                   detail: str = "") -> None:
        self.result_rows.append((experiment, kernel_id, density_id, n, order, t, r,
                                 estimate, stderr, detail, self.master_seed,
                                 self.config_hash))

    def add_fit(self, experiment: str, order: int, t: float, fit) -> None:
        self.fit_rows.append((experiment, order, t, fit.slope, fit.slope_ci[0],
                              fit.slope_ci[1], fit.degenerate, fit.sign_mixed,
                              self.master_seed, self.config_hash))

    def write(self, outdir: str) -> list[str]:
        os.makedirs(outdir, exist_ok=True)
        written = []
        path = os.path.join(outdir, "results.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(RESULT_COLUMNS) + "\n")
            for row in self.result_rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        written.append(path)
        if self.fit_rows:
            path = os.path.join(outdir, "fits.csv")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(",".join(FIT_COLUMNS) + "\n")
                for row in self.fit_rows:
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
            written.append(path)
        return written


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(outdir: str, config_hash: str, master_seed: int, experiment: str,
                   wall_time_s: float, outputs: list[str], log: list[str],
                   exit_status: int = 0) -> str:
    import numpy

    from . import __version__, accel

    try:
        import numba
        numba_version = numba.__version__
    except ImportError:  # pragma: no cover
        numba_version = None
    manifest = {
        "experiment": experiment,
        "config_hash": config_hash,
        "master_seed": master_seed,
        "mflab_version": __version__,
        "numpy_version": numpy.__version__,
        "numba_version": numba_version,
        "backend": accel.BACKEND,
        "wall_time_s": round(wall_time_s, 3),
        "created_unix": int(time.time()),
        "exit_status": exit_status,
        "outputs": {os.path.basename(p): file_sha256(p) for p in outputs},
        "log": log,
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# --- SVG ---------------------------------------------------------------------


def _ticks_log(lo: float, hi: float) -> list[float]:
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(lo_e, hi_e + 1)]


def svg_loglog(series: dict, path: str, title: str = "", fit=None,
               xlabel: str = "N", ylabel: str = "|estimate|") -> str:
    """Log-log scatter with error bars and an optional fitted power law.

    series: {label: list of (N, value, stderr)}.  Values enter as |value|;
    error bars are clipped at the decade floor so zero-crossing bars stay
    drawable on the log axis.
    """
    width, height = 560, 420
    ml, mr, mt, mb = 70, 20, 36, 56
    pts_all = [(n, abs(v), e) for pts in series.values() for (n, v, e) in pts if abs(v) > 0]
    if not pts_all:
        pts_all = [(1.0, 1.0, 0.0)]
    xs = [p[0] for p in pts_all]
    ys_lo = [max(p[1] - p[2], p[1] * 0.1) for p in pts_all]
    ys_hi = [p[1] + p[2] for p in pts_all]
    x0, x1 = min(xs) / 1.3, max(xs) * 1.3
    y0, y1 = min(ys_lo) / 1.5, max(ys_hi) * 1.5

    def px(x: float) -> float:
        return ml + (math.log10(x) - math.log10(x0)) / (math.log10(x1) - math.log10(x0)) * (width - ml - mr)

    def py(y: float) -> float:
        return height - mb - (math.log10(y) - math.log10(y0)) / (math.log10(y1) - math.log10(y0)) * (height - mt - mb)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14" font-family="sans-serif">{title}</text>',
    ]
    for tx in _ticks_log(x0, x1):
        if x0 <= tx <= x1:
            parts.append(f'<line x1="{px(tx):.1f}" y1="{mt}" x2="{px(tx):.1f}" y2="{height - mb}" stroke="#dddddd"/>')
            parts.append(f'<text x="{px(tx):.1f}" y="{height - mb + 16}" text-anchor="middle" font-size="11" font-family="sans-serif">{tx:g}</text>')
    for ty in _ticks_log(y0, y1):
        if y0 <= ty <= y1:
            parts.append(f'<line x1="{ml}" y1="{py(ty):.1f}" x2="{width - mr}" y2="{py(ty):.1f}" stroke="#dddddd"/>')
            parts.append(f'<text x="{ml - 6}" y="{py(ty):.1f}" text-anchor="end" font-size="11" font-family="sans-serif">{ty:.0e}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{width - ml - mr}" height="{height - mt - mb}" fill="none" stroke="black"/>')
    parts.append(f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12" font-family="sans-serif">{xlabel}</text>')
    parts.append(f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 16 {height / 2:.1f})">{ylabel}</text>')

    for ci, (label, pts) in enumerate(series.items()):
        color = colors[ci % len(colors)]
        for n, v, e in pts:
            av = abs(v)
            if av <= 0:
                continue
            cx, cy = px(n), py(av)
            lo = max(av - e, av * 0.1)
            hi = av + e
            parts.append(f'<line x1="{cx:.1f}" y1="{py(lo):.1f}" x2="{cx:.1f}" y2="{py(hi):.1f}" stroke="{color}"/>')
            parts.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="3.5" fill="{color}"/>')
        parts.append(f'<text x="{width - mr - 8}" y="{mt + 16 + 14 * ci}" text-anchor="end" font-size="11" font-family="sans-serif" fill="{color}">{label}</text>')

    if fit is not None and not fit.degenerate:
        na, nb = min(xs), max(xs)
        ya = math.exp(fit.intercept + fit.slope * math.log(na))
        yb = math.exp(fit.intercept + fit.slope * math.log(nb))
        parts.append(f'<line x1="{px(na):.1f}" y1="{py(ya):.1f}" x2="{px(nb):.1f}" y2="{py(yb):.1f}" stroke="#333333" stroke-dasharray="6,3"/>')
        parts.append(f'<text x="{ml + 10}" y="{mt + 16}" font-size="12" font-family="sans-serif">slope = {fit.slope:.3f}  CI [{fit.slope_ci[0]:.3f}, {fit.slope_ci[1]:.3f}]</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
    return path
