"""Tabular and graphical output of study results.

Numbers are written with 17 significant digits so that reading a CSV back
reproduces every float exactly.  Degenerate indices appear as ``-inf`` with
``degenerate=true``; grid points whose perturbation failed appear as
``nan`` rows and are listed in the summary.
"""

from __future__ import annotations

import csv
import json
import math
import os
from html import escape
from pathlib import Path
from typing import Iterable

import numpy as np

from relsa.estimation import IndexEstimate
from relsa.study import CurveRecord, StudyResult

CSV_COLUMNS = (
    "input",
    "constraint",
    "grid_value",
    "s_hat",
    "s_var",
    "ci_lo",
    "ci_hi",
    "p_hat",
    "p_delta_hat",
    "n",
    "degenerate",
)


def fmt(x) -> str:
    """17 significant digits; ``inf``, ``-inf`` and ``nan`` spelled out."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _curve_rows(rec: CurveRecord, n: int) -> Iterable[list[str]]:
    by_value = {v: e for v, e in rec.curve.points}
    for v in rec.grid_values:
        e: IndexEstimate | None = by_value.get(v)
        if e is None:
            nan = fmt(math.nan)
            yield [rec.input_name, rec.kind, fmt(v), nan, nan, nan, nan, nan, nan, str(n), "false"]
            continue
        yield [
            rec.input_name,
            rec.kind,
            fmt(v),
            fmt(e.s_hat),
            fmt(e.variance_hat),
            fmt(e.ci[0]),
            fmt(e.ci[1]),
            fmt(e.p_hat),
            fmt(e.p_delta_hat),
            str(e.n),
            "true" if e.degenerate else "false",
        ]


def emit_csv(result: StudyResult, path, replication: int = 0) -> Path:
    """Index curves of one replication followed by the probability row.

    A study without curves yields a header-only file.
    """
    path = Path(path)
    curves = result.curves_for(replication)
    p = result.probabilities[replication]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in curves:
            w.writerows(_curve_rows(rec, p.n))
        if curves:
            w.writerow([
                "", "probability", "", "", fmt(p.variance_hat), fmt(p.ci[0]), fmt(p.ci[1]),
                fmt(p.p_hat), "", str(p.n), "true" if p.degenerate else "false",
            ])
    return path


def emit_replications_csv(result: StudyResult, path) -> Path:
    """All replications, with a leading ``replication`` column and no probability rows."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("replication",) + CSV_COLUMNS)
        for rec in result.curves:
            n = result.probabilities[rec.replication].n
            for row in _curve_rows(rec, n):
                w.writerow([str(rec.replication)] + row)
    return path


def emit_form_csv(result: StudyResult, path) -> Path:
    dp = result.form
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("input", "u_star", "alpha", "importance_factor", "beta", "pf_form", "iterations", "model_calls", "converged"))
        for name, u, a in zip(result.input_names, dp.u_star, dp.alpha):
            w.writerow([
                name, fmt(u), fmt(a), fmt(a * a), fmt(dp.beta_hl), fmt(dp.pf_form),
                str(dp.iterations), str(dp.model_calls), str(dp.converged).lower(),
            ])
    return path


def emit_sobol_csv(result: StudyResult, path) -> Path:
    """First-order and total indices; mean and c.o.v. columns when replicated."""
    path = Path(path)
    reps = result.sobol_replications
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if reps is None:
            s = result.sobol
            w.writerow(("input", "first_order", "total", "n_base", "total_calls"))
            for j, name in enumerate(result.input_names):
                w.writerow([name, fmt(s.first_order[j]), fmt(s.total[j]), str(s.n_base), str(s.total_calls)])
        else:
            (m1, mt), (c1, ct) = reps.mean(), reps.cov()
            w.writerow(("input", "first_order_mean", "first_order_cov", "total_mean", "total_cov", "replications"))
            for j, name in enumerate(result.input_names):
                w.writerow([name, fmt(m1[j]), fmt(c1[j]), fmt(mt[j]), fmt(ct[j]), str(reps.replications)])
    return path


def summary(result: StudyResult) -> dict:
    p = result.probability
    out = {
        "model": result.config.model,
        "n": result.config.n,
        "seed": result.config.seed,
        "replications": result.config.replications,
        "p_hat": p.p_hat,
        "p_variance": p.variance_hat,
        "p_ci": list(p.ci),
        "p_hat_replications": [q.p_hat for q in result.probabilities],
        "model_calls": result.calls,
        "timings_s": result.timings,
        "point_failures": result.failures,
    }
    if result.form is not None:
        dp = result.form
        out["form"] = {
            "beta": dp.beta_hl,
            "pf_form": dp.pf_form,
            "converged": dp.converged,
            "importance_factors": (dp.alpha**2).tolist(),
            "model_calls": dp.model_calls,
        }
    return out


def emit_summary(result: StudyResult, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary(result), fh, indent=2, allow_nan=True)
        fh.write("\n")
    return path


# --- SVG ---------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
PANEL_W, PANEL_H = 480, 320
MARGIN = 50


def _finite_range(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if math.isfinite(x)])
    if v.size == 0:
        return -1.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _segments(xs, ys):
    """Split a polyline where ``ys`` is not finite."""
    seg = []
    for x, y in zip(xs, ys):
        if math.isfinite(y):
            seg.append((x, y))
        elif seg:
            yield seg
            seg = []
    if seg:
        yield seg


def _panel(records: list[CurveRecord], title: str, x0: float) -> list[str]:
    xs_all = [v for r in records for v, _ in r.curve.points]
    ys_all = [y for r in records for _, e in r.curve.points for y in (e.s_hat, *e.ci)]
    xlo, xhi = _finite_range(xs_all)
    ylo, yhi = _finite_range(ys_all)
    w, h = PANEL_W - 2 * MARGIN, PANEL_H - 2 * MARGIN

    def px(x):
        return x0 + MARGIN + (x - xlo) / (xhi - xlo) * w

    def py(y):
        return MARGIN + (yhi - y) / (yhi - ylo) * h

    out = [
        f'<rect x="{x0 + MARGIN:.2f}" y="{MARGIN}" width="{w}" height="{h}" fill="none" stroke="#444"/>',
        f'<text x="{x0 + PANEL_W / 2:.2f}" y="{MARGIN / 2:.2f}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{x0 + MARGIN - 4:.2f}" y="{MARGIN + 4}" text-anchor="end" font-size="10">{fmt_short(yhi)}</text>',
        f'<text x="{x0 + MARGIN - 4:.2f}" y="{MARGIN + h}" text-anchor="end" font-size="10">{fmt_short(ylo)}</text>',
        f'<text x="{x0 + MARGIN:.2f}" y="{MARGIN + h + 14}" text-anchor="middle" font-size="10">{fmt_short(xlo)}</text>',
        f'<text x="{x0 + MARGIN + w:.2f}" y="{MARGIN + h + 14}" text-anchor="middle" font-size="10">{fmt_short(xhi)}</text>',
    ]
    if ylo < 0 < yhi:
        out.append(
            f'<line x1="{px(xlo):.2f}" y1="{py(0):.2f}" x2="{px(xhi):.2f}" y2="{py(0):.2f}" stroke="#999" stroke-dasharray="4 3"/>'
        )
    for k, rec in enumerate(records):
        color = PALETTE[k % len(PALETTE)]
        xs = [v for v, _ in rec.curve.points]
        ests = [e for _, e in rec.curve.points]
        lo = [e.ci[0] for e in ests]
        hi = [e.ci[1] for e in ests]
        for seg_lo, seg_hi in zip(_segments(xs, lo), _segments(xs, hi)):
            pts = [(px(x), py(y)) for x, y in seg_lo] + [(px(x), py(y)) for x, y in reversed(seg_hi)]
            out.append(
                f'<polygon points="{_pts(pts)}" fill="{color}" fill-opacity="0.15" stroke="none"/>'
            )
        for seg in _segments(xs, [e.s_hat for e in ests]):
            out.append(
                f'<polyline points="{_pts([(px(x), py(y)) for x, y in seg])}" fill="none" '
                f'stroke="{color}" stroke-width="1.5" data-input="{escape(rec.input_name)}"/>'
            )
        ly = MARGIN + 14 + 14 * k
        out.append(
            f'<text x="{x0 + MARGIN + w - 4:.2f}" y="{ly}" text-anchor="end" font-size="11" fill="{color}">'
            f"{escape(rec.input_name)}</text>"
        )
    return out


def fmt_short(x: float) -> str:
    return format(x, ".3g")


def _pts(pts) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)


def emit_svg(result: StudyResult, path, replication: int = 0) -> Path:
    """One panel per perturbation block, one index polyline and CI band per input."""
    path = Path(path)
    groups: dict[str, list[CurveRecord]] = {}
    for rec in result.curves_for(replication):
        groups.setdefault(rec.block, []).append(rec)
    width = PANEL_W * max(1, len(groups))
    body = []
    for k, (label, recs) in enumerate(groups.items()):
        body += _panel(recs, f"{label} ({recs[0].kind})", k * PANEL_W)
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" '
        f'viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">',
        '<rect width="100%" height="100%" fill="white"/>',
        *body,
        "</svg>",
    ]
    path.write_text("\n".join(svg) + "\n", encoding="utf-8")
    return path


def write_outputs(result: StudyResult, out_dir) -> list[Path]:
    """Write every output file of a study into ``out_dir``."""
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    written = [emit_csv(result, out_dir / "curves.csv"), emit_svg(result, out_dir / "curves.svg")]
    if result.config.replications > 1:
        written.append(emit_replications_csv(result, out_dir / "curves_replications.csv"))
    if result.form is not None:
        written.append(emit_form_csv(result, out_dir / "form.csv"))
    if result.sobol is not None:
        written.append(emit_sobol_csv(result, out_dir / "sobol.csv"))
    written.append(emit_summary(result, out_dir / "summary.json"))
    return written
