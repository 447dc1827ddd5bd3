"""Experiment orchestration: beta/eta sweeps, toll comparison, demand robustness.

Each experiment takes an :class:`ExperimentConfig` and returns a
:class:`SweepTable` (or a report dict). :func:`emit` writes CSV + JSON
artifacts, each embedding the fully resolved config.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .config import ExperimentConfig
from .dynamics import SimConfig, convergence_time, simulate, tail_distance
from .equilibrium import perturbed_equilibrium, social_optimum, total_latency, wardrop
from .errors import IoError, ValidationError

log = logging.getLogger(__name__)

COMPARED_POLICIES = ("marginal", "fixed")
# Tail distances closer than this are indistinguishable: the targets are only
# solved to ||dz||_1 <= 1e-12 and the trajectories settle at round-off level.
TAIL_RESOLUTION = 1e-10


@dataclass
class SweepTable:
    name: str
    parameter: str
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def select(self, **where) -> "SweepTable":
        idx = {k: self.columns.index(k) for k in where}
        rows = [r for r in self.rows if all(r[idx[k]] == v for k, v in where.items())]
        return SweepTable(self.name, self.parameter, self.columns, rows, self.summary)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def _sim_config(cfg: ExperimentConfig, eta: float | None = None, t_final: float | None = None) -> SimConfig:
    return SimConfig(eta=eta or cfg.eta, dt=cfg.dt, t_final=t_final or cfg.t_final,
                     record_stride=cfg.record_stride, demand=cfg.demand)


def _parallel_map(fn: Callable, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _beta_job(job):
    cfg, beta, policy_kind, f_star, latency_star = job
    paths, links = cfg.pathset(), cfg.link_array()
    policy = cfg.toll_policy(policy_kind, paths)
    traj = simulate(cfg.initial_z(paths), cfg.initial_x(), paths, links, policy, beta, _sim_config(cfg))
    f_end = traj.f[-1]
    return (float(beta), policy_kind, float(np.abs(f_end - f_star).sum()),
            float(total_latency(links, f_end).total_latency - latency_star))


def run_beta_sweep(cfg: ExperimentConfig, policies: Iterable[str] = COMPARED_POLICIES) -> SweepTable:
    """Distance ||f(T) - f*||_1 and latency gap L(f(T)) - L(f*) at the horizon, per beta and policy."""
    paths, links = cfg.pathset(), cfg.link_array()
    opt = social_optimum(paths, links, cfg.demand)
    l_star = total_latency(links, opt.f).total_latency
    jobs = [(cfg, float(b), p, opt.f, l_star) for b in sorted(cfg.beta_grid) for p in sorted(policies)]
    rows = _parallel_map(_beta_job, jobs, cfg.workers)
    table = SweepTable("beta_sweep", "beta", ["beta", "policy", "dist_l1", "latency_gap"], rows)
    for p in sorted(policies):
        d = table.select(policy=p).column("dist_l1")
        table.summary[p] = {"dist_nonincreasing": bool(all(b <= a for a, b in zip(d, d[1:]))),
                            "max_increase": float(max([b - a for a, b in zip(d, d[1:])], default=0.0))}
    table.summary["social_optimum"] = {"flows": opt.f.tolist(), "latency": l_star}
    return table


def _comparison_job(job):
    cfg, kind = job
    paths, links = cfg.pathset(), cfg.link_array()
    policy = cfg.toll_policy(kind, paths)
    target = perturbed_equilibrium(paths, links, policy, cfg.beta, cfg.demand)
    traj = simulate(cfg.initial_z(paths), cfg.initial_x(), paths, links, policy, cfg.beta, _sim_config(cfg))
    return kind, {
        "target_flows": target.f.tolist(),
        "convergence_time": convergence_time(traj, target.f, cfg.epsilon),
        "tail_distance": tail_distance(traj, target.f, cfg.tail_fraction),
        "final_flows": traj.f[-1].tolist(),
        "tolls": list(policy.constants) if policy.kind == "fixed" else policy.kind,
    }


def run_toll_comparison(cfg: ExperimentConfig, policies: Iterable[str] = COMPARED_POLICIES) -> dict:
    """Convergence time and tail distance to each policy's own perturbed equilibrium."""
    results = dict(_parallel_map(_comparison_job, [(cfg, p) for p in policies], cfg.workers))
    report = {
        "criterion": {"norm": "l1", "epsilon": cfg.epsilon, "tail_norm": "l2", "tail_fraction": cfg.tail_fraction,
                      "target": "perturbed (logit) equilibrium of the same policy"},
        "beta": cfg.beta, "eta": cfg.eta, "t_final": cfg.t_final,
        "policies": results,
    }
    if {"marginal", "fixed"} <= set(results):
        tm, tf = results["marginal"]["convergence_time"], results["fixed"]["convergence_time"]
        report["marginal_faster"] = tm is not None and (tf is None or tm < tf)
    return report


def comparison_table(report: dict) -> SweepTable:
    rows = [(k, v["convergence_time"] if v["convergence_time"] is not None else float("nan"), v["tail_distance"])
            for k, v in sorted(report["policies"].items())]
    return SweepTable("compare_tolls", "policy", ["policy", "convergence_time", "tail_distance"], rows,
                      {k: v for k, v in report.items() if k != "policies"})


def _eta_job(job):
    cfg, eta, target = job
    paths, links = cfg.pathset(), cfg.link_array()
    horizon = cfg.eta_horizon / eta
    traj = simulate(cfg.initial_z(paths), cfg.initial_x(), paths, links, cfg.toll_policy(paths=paths),
                    cfg.beta, _sim_config(cfg, eta=eta, t_final=horizon))
    return float(eta), float(horizon), tail_distance(traj, target, cfg.tail_fraction)


def nondecreasing(values, slack: float = 0.0) -> bool:
    return all(b >= a - slack for a, b in zip(values, values[1:]))


def run_eta_sweep(cfg: ExperimentConfig) -> SweepTable:
    """Tail distance to the perturbed equilibrium for each eta, horizon eta_horizon/eta."""
    paths, links = cfg.pathset(), cfg.link_array()
    target = perturbed_equilibrium(paths, links, cfg.toll_policy(paths=paths), cfg.beta, cfg.demand)
    jobs = [(cfg, float(e), target.f) for e in sorted(cfg.eta_grid)]
    rows = _parallel_map(_eta_job, jobs, cfg.workers)
    table = SweepTable("eta_sweep", "eta", ["eta", "t_final", "tail_distance"], rows)
    d = table.column("tail_distance")
    table.summary = {"target_flows": target.f.tolist(), "resolution": TAIL_RESOLUTION,
                     "nondecreasing": nondecreasing(d, TAIL_RESOLUTION),
                     "strictly_ordered": nondecreasing(d)}
    return table


def _robustness_job(job):
    cfg, lam, fixed = job
    paths, links = cfg.pathset(), cfg.link_array()
    opt = social_optimum(paths, links, lam)
    marg = wardrop(paths, links, cfg.toll_policy("marginal"), lam)
    stale = wardrop(paths, links, fixed, lam)
    lat = lambda f: total_latency(links, f).total_latency  # noqa: E731
    return float(lam), lat(marg.f), lat(stale.f), lat(opt.f)


def run_robustness(cfg: ExperimentConfig) -> SweepTable:
    """Total latency under marginal and stale fixed tolls vs the optimum, across demand."""
    paths = cfg.pathset()
    top = max(cfg.demand_grid)
    short = [l.id for l in cfg.links if not l.capacity > top]
    if short:
        raise ValidationError(f"demand grid up to {top} exceeds capacity of links {short}")
    fixed = cfg.toll_policy("fixed", paths)
    jobs = [(cfg, float(lam), fixed) for lam in sorted(cfg.demand_grid)]
    rows = _parallel_map(_robustness_job, jobs, cfg.workers)
    table = SweepTable("robustness", "demand",
                       ["demand", "latency_marginal", "latency_fixed_stale", "latency_optimum"], rows)
    table.summary = {
        "nominal_demand": cfg.nominal_demand, "fixed_tolls": list(fixed.constants),
        "max_marginal_excess": max(abs(m - o) for _, m, _, o in rows),
        "max_stale_excess": max(s - o for _, _, s, o in rows),
        "min_stale_excess": min(s - o for _, _, s, o in rows),
    }
    return table


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def emit(name: str, result, out_dir, cfg: ExperimentConfig) -> list[Path]:
    """Write ``<name>_seed<seed>.csv`` (tables only) and ``<name>_seed<seed>.json``."""
    out_dir = Path(out_dir)
    echo = _json_ready(cfg.to_dict())
    stem = f"{name}_seed{cfg.seed}"
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if isinstance(result, SweepTable):
            csv_path = out_dir / f"{stem}.csv"
            with open(csv_path, "w", newline="") as fh:
                fh.write(f"# tollnet {name}\n# config = {json.dumps(echo, sort_keys=True)}\n")
                fh.write(result.to_csv_text())
            written.append(csv_path)
            payload = {"experiment": name, "config": echo, "parameter": result.parameter,
                       "columns": result.columns, "rows": _json_ready(result.rows),
                       "summary": _json_ready(result.summary)}
        else:
            payload = {"experiment": name, "config": echo, "result": _json_ready(result)}
        json_path = out_dir / f"{stem}.json"
        json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written.append(json_path)
    except OSError as exc:
        raise IoError(f"cannot write results to {out_dir}: {exc}") from exc
    return written


def read_table(path) -> SweepTable:
    """Load an emitted CSV back into a SweepTable (comment lines skipped)."""
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    columns = next(reader)
    rows = []
    for raw in reader:
        row = []
        for v in raw:
            try:
                row.append(float(v))
            except ValueError:
                row.append(v)
        rows.append(tuple(row))
    return SweepTable(path.stem, columns[0], columns, rows)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def write_svg(table: SweepTable, path, x: str, ys: list[str], group: str | None = None,
              width: int = 480, height: int = 320) -> Path:
    """Minimal static plot: one polyline per series. CSV stays the authoritative output."""
    series = []
    if group is not None:
        for g in sorted({r[table.columns.index(group)] for r in table.rows}):
            sub = table.select(**{group: g})
            series += [(f"{g} {y}" if len(ys) > 1 else str(g), sub.column(x), sub.column(y)) for y in ys]
    else:
        series = [(y, table.column(x), table.column(y)) for y in ys]
    xs = np.array([v for _, sx, _ in series for v in sx], dtype=float)
    yv = np.array([v for _, _, sy in series for v in sy], dtype=float)
    ok = np.isfinite(yv)
    x0, x1 = xs.min(), xs.max()
    y0, y1 = (yv[ok].min(), yv[ok].max()) if ok.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    m = 40

    def px(v):
        return m + (v - x0) / (x1 - x0) * (width - 2 * m)

    def py(v):
        return height - m - (v - y0) / (y1 - y0) * (height - 2 * m)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="#999"/>',
             f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{x}</text>',
             f'<text x="{m}" y="{m - 8}" font-size="10">[{y0:.3g}, {y1:.3g}]</text>']
    for i, (label, sx, sy) in enumerate(series):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(sx, sy) if np.isfinite(b))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - m}" y="{m + 14 * (i + 1)}" text-anchor="end" font-size="11" '
                     f'fill="{colour}">{label}</text>')
    parts.append("</svg>")
    path = Path(path)
    try:
        path.write_text("\n".join(parts) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write plot to {path}: {exc}") from exc
    return path
