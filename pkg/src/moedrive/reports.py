"""Tabular and plot artifacts: CSV files and a hand-written SVG line plot.

Every artifact starts with a comment line naming the manifest that produced
it, ``# manifest <sha256>``.  Output is a pure function of its inputs so
reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .experts import GLOBAL, N_SCENE
from .sim.evaluate import Metrics
from .sim.world import KIND_NAMES, ScenarioKind

EXPERT_NAMES = ["Global"] + [KIND_NAMES[k] for k in ScenarioKind]

# frozen CSV headers
EPISODE_HEADER = ["scenario", "seed", "success", "collisions", "violations", "timeout", "completion",
                  "driving_score"]
SUMMARY_HEADER = ["metric", "value"]
ABILITY_HEADER = ["ability", "success_rate"]
ROUTER_HEADER = ["scenario", "val_n", "val_accuracy", "closed_loop_accuracy"]
UTIL_HEADER = ["expert", "overall"] + [KIND_NAMES[k] for k in ScenarioKind]
TRACE_HEADER = ["scenario", "seed", "step", "selected", "uncertainty"] + [f"p_{KIND_NAMES[k]}" for k in ScenarioKind]
SWEEP_HEADER = ["tau", "driving_score", "success_rate", "ability_mean", "global_utilization"]
ABLATION_HEADER = ["variant", "driving_score", "success_rate", "ability_mean"]
ABLATION_SEED_HEADER = ["variant", "seed", "driving_score", "success_rate", "ability_mean"]


def canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.6f}"
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence], manifest_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# manifest {manifest_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} != header width {len(header)}")
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path: Path | str) -> tuple[str, list[dict]]:
    """Manifest hash and rows (as strings) of an artifact written by :func:`csv_text`."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# manifest "):
        raise ValueError(f"{path} has no manifest header")
    return lines[0].split()[-1], list(csv.DictReader(lines[1:]))


# ---------------------------------------------------------------- tables

def episode_rows(m: Metrics):
    for r in m.episodes:
        yield [KIND_NAMES[ScenarioKind(r.scenario_id)], r.seed, r.success, r.collisions, r.violations,
               r.timeout, r.completion, r.driving_score]


def summary_rows(m: Metrics, extra: dict | None = None):
    rows = [["success_rate", m.success_rate], ["driving_score", m.driving_score],
            ["ability_mean", m.ability_mean], ["episodes", len(m.episodes)]]
    for k, v in (extra or {}).items():
        rows.append([k, v])
    return rows


def ability_rows(m: Metrics):
    return [[name, math.nan if v is None else v] for name, v in m.per_ability.items()]


def utilization(m: Metrics) -> np.ndarray:
    """(6, 6) share of decision steps per expert; columns overall then each scenario."""
    counts = np.zeros((1 + N_SCENE, 1 + N_SCENE))
    for r in m.episodes:
        for t in r.trace:
            row = 0 if t.selected == GLOBAL else 1 + t.selected
            counts[row, 0] += 1
            counts[row, 1 + r.scenario_id] += 1
    totals = counts.sum(axis=0, keepdims=True)
    return np.divide(counts, totals, out=np.full_like(counts, np.nan), where=totals > 0)


def utilization_rows(m: Metrics):
    u = utilization(m)
    return [[EXPERT_NAMES[i]] + list(u[i]) for i in range(1 + N_SCENE)]


def global_share(m: Metrics) -> float:
    return float(utilization(m)[0, 0])


def trace_rows(m: Metrics):
    for r in m.episodes:
        for t in r.trace:
            sel = "Global" if t.selected == GLOBAL else KIND_NAMES[ScenarioKind(t.selected)]
            yield [KIND_NAMES[ScenarioKind(r.scenario_id)], r.seed, t.step, sel, t.uncertainty, *t.probs]


def closed_loop_router_accuracy(m: Metrics) -> dict[str, float]:
    hits = {k: [] for k in ScenarioKind}
    for r in m.episodes:
        for t in r.trace:
            hits[ScenarioKind(r.scenario_id)].append(int(np.argmax(t.probs)) == r.scenario_id)
    out = {KIND_NAMES[k]: float(np.mean(v)) if v else math.nan for k, v in hits.items()}
    allv = [x for v in hits.values() for x in v]
    out["overall"] = float(np.mean(allv)) if allv else math.nan
    return out


# ---------------------------------------------------------------- SVG

def line_plot_svg(xs, ys, manifest_hash: str, title: str, xlabel: str, ylabel: str,
                  width: int = 480, height: int = 320) -> str:
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    if len(xs) != len(ys) or not xs:
        raise ValueError("need matching non-empty x and y")
    ml, mr, mt, mb = 60, 20, 36, 48
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = min(xs), max(xs)
    finite = [y for y in ys if math.isfinite(y)]
    y0, y1 = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 1.0, y1 + 1.0
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<!-- manifest {manifest_hash} -->",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle" font-size="10">{xv:.2f}</text>')
        out.append(f'<text x="{ml - 6}" y="{py(yv) + 3:.1f}" text-anchor="end" font-size="10">{yv:.1f}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">{xlabel}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{ylabel}</text>')
    pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys) if math.isfinite(y))
    out.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>')
    for x, y in zip(xs, ys):
        if math.isfinite(y):
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="steelblue"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
