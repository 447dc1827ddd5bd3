"""tollnet: route choice, link dynamics and congestion tolls on o-d networks.

Exit codes: 0 success, 1 validation error, 2 numerical non-convergence, 3 I/O.
Set TOLLNET_LOG_LEVEL (DEBUG, INFO, WARNING, ...) for log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ExperimentConfig, bundled_config, load_config
from .dynamics import SimConfig, convergence_time, simulate, tail_distance
from .equilibrium import perturbed_equilibrium, social_optimum, total_latency, wardrop
from .errors import NotConverged, TollNetError

log = logging.getLogger("tollnet")

POLICY_CHOICES = ("none", "marginal", "fixed")


def _resolve(args) -> ExperimentConfig:
    path = args.config or bundled_config("wheatstone")
    cfg = load_config(path)
    cfg = cfg.with_overrides(policy=args.policy, beta=args.beta, eta=args.eta, demand=args.demand,
                             dt=args.dt, t_final=args.t_final, epsilon=args.epsilon)
    if args.workers is not None:
        cfg = cfg.with_overrides(workers=args.workers)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out or cfg.output_dir)


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    paths, links = cfg.pathset(), cfg.link_array()
    policy = cfg.toll_policy(paths=paths)
    sim = SimConfig(cfg.eta, cfg.dt, cfg.t_final, cfg.record_stride, cfg.demand)
    traj = simulate(cfg.initial_z(paths), cfg.initial_x(), paths, links, policy, cfg.beta, sim)
    target = perturbed_equilibrium(paths, links, policy, cfg.beta, cfg.demand)
    out = _out_dir(args, cfg)
    written = ex.emit("simulate", {
        "final": {"t": float(traj.t[-1]), "z": traj.z[-1], "x": traj.x[-1], "f": traj.f[-1]},
        "target_flows": target.f,
        "convergence_time": convergence_time(traj, target.f, cfg.epsilon),
        "tail_distance": tail_distance(traj, target.f, cfg.tail_fraction),
        "diagnostics": {"max_simplex_drift": traj.max_simplex_drift, "min_preference": traj.min_preference,
                        "min_density": traj.min_density},
        "criterion": {"norm": "l1", "epsilon": cfg.epsilon},
    }, out, cfg)
    written.append(traj.to_csv(out / f"trajectory_seed{cfg.seed}.csv", paths))
    _report(written)
    return 0


def cmd_equilibrium(args) -> int:
    cfg = _resolve(args)
    paths, links = cfg.pathset(), cfg.link_array()
    policy = cfg.toll_policy(paths=paths)
    opt = social_optimum(paths, links, cfg.demand)
    eq = wardrop(paths, links, policy, cfg.demand)
    pert = perturbed_equilibrium(paths, links, policy, cfg.beta, cfg.demand)
    results = {name: r.to_dict(paths) | {"total_latency": total_latency(links, r.f).total_latency}
               for name, r in (("social_optimum", opt), ("wardrop", eq), ("perturbed", pert))}
    _report(ex.emit("equilibrium", results, _out_dir(args, cfg), cfg))
    if not (opt.converged and eq.converged):
        raise NotConverged("an equilibrium solver stopped before reaching its tolerance")
    for name, r in results.items():
        print(f"{name:15s} f = {np.round(r['flows'], 6).tolist()}  gap = {r['wardrop_gap']:.2e}")
    return 0


def cmd_beta_sweep(args) -> int:
    cfg = _resolve(args)
    table = ex.run_beta_sweep(cfg)
    out = _out_dir(args, cfg)
    written = ex.emit("beta_sweep", table, out, cfg)
    if args.svg:
        written.append(ex.write_svg(table, out / f"beta_sweep_seed{cfg.seed}.svg", "beta", ["dist_l1"], "policy"))
    _report(written)
    return 0


def cmd_eta_sweep(args) -> int:
    cfg = _resolve(args)
    table = ex.run_eta_sweep(cfg)
    out = _out_dir(args, cfg)
    written = ex.emit("eta_sweep", table, out, cfg)
    if args.svg:
        written.append(ex.write_svg(table, out / f"eta_sweep_seed{cfg.seed}.svg", "eta", ["tail_distance"]))
    _report(written)
    return 0


def cmd_compare_tolls(args) -> int:
    cfg = _resolve(args)
    report = ex.run_toll_comparison(cfg)
    out = _out_dir(args, cfg)
    written = ex.emit("compare_tolls", ex.comparison_table(report), out, cfg)
    written += ex.emit("compare_tolls_report", report, out, cfg)
    _report(written)
    for kind, r in report["policies"].items():
        print(f"{kind:9s} convergence time = {r['convergence_time']}  tail distance = {r['tail_distance']:.3e}")
    return 0


def cmd_robustness(args) -> int:
    cfg = _resolve(args)
    table = ex.run_robustness(cfg)
    out = _out_dir(args, cfg)
    written = ex.emit("robustness", table, out, cfg)
    if args.svg:
        written.append(ex.write_svg(table, out / f"robustness_seed{cfg.seed}.svg", "demand",
                                    ["latency_marginal", "latency_fixed_stale", "latency_optimum"]))
    _report(written)
    return 0


def cmd_plot(args) -> int:
    table = ex.read_table(args.csv)
    ys = args.y or [c for c in table.columns[1:] if c != args.group]
    out = Path(args.svg_out or Path(args.csv).with_suffix(".svg"))
    _report([ex.write_svg(table, out, args.x or table.columns[0], ys, args.group)])
    return 0


def _report(paths) -> None:
    for p in paths:
        print(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tollnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, fn, help_, svg=False):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment config (default: bundled wheatstone.cfg)")
        p.add_argument("--out", help="output directory (default: config output.directory)")
        p.add_argument("--policy", choices=POLICY_CHOICES)
        p.add_argument("--beta", type=float)
        p.add_argument("--eta", type=float)
        p.add_argument("--demand", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--t-final", dest="t_final", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--workers", type=int, help="parallel processes for sweeps")
        if svg:
            p.add_argument("--svg", action="store_true", help="also write a quick-look SVG plot")
        p.set_defaults(func=fn)

    experiment("simulate", cmd_simulate, "integrate the coupled dynamics and write the trajectory")
    experiment("equilibrium", cmd_equilibrium, "solve social optimum, Wardrop and logit equilibria")
    experiment("beta-sweep", cmd_beta_sweep, "distance to the social optimum across beta", svg=True)
    experiment("eta-sweep", cmd_eta_sweep, "tail distance to the logit equilibrium across eta", svg=True)
    experiment("compare-tolls", cmd_compare_tolls, "convergence time, marginal vs fixed tolls")
    experiment("robustness", cmd_robustness, "total latency across demand levels", svg=True)

    p = sub.add_parser("plot", help="render an emitted sweep CSV as SVG")
    p.add_argument("csv")
    p.add_argument("--x")
    p.add_argument("--y", action="append")
    p.add_argument("--group")
    p.add_argument("--svg-out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TOLLNET_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TollNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
