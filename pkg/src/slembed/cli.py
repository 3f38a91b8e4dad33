"""Command-line entry point: ``slembed <subcommand> ...``.

Exit codes: 0 success, 2 usage or invalid argument, 3 invalid input file,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import (
    FeedbackConfig,
    Method,
    SimConfig,
    default_t_end,
    integrate_kuramoto,
    integrate_sl,
    integrate_sl_feedback,
    stable_dt,
    write_trajectory_csv,
)
from .errors import DivergenceError, InvalidArgumentError, NonConvergenceError, ValidationError
from .graphs import (
    ConstantFM,
    NormalMeanStd,
    RingSpec,
    UniformInterval,
    build_complete,
    build_ring,
    embed_triad,
    read_graph,
    read_sidecar,
    triad_frequencies,
    write_graph,
    write_sidecar,
)
from .harness import load_plan, run_plan, twisted_census
from .metrics import coherence_complete, coherence_triad, embedded_energy, unembedded_energy, winding_number, xy_energy
from .optimizer import BasinHoppingConfig, basin_hopping, brute_force_oracle

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_DIVERGENCE = 4

CENSUS_FORMAT_VERSION = 1


def sidecar_path(graph_path) -> Path:
    """Where the chain map of a triad graph file lives."""
    p = Path(graph_path)
    return p.with_name(p.name + ".triad.json")


def ring_neighbor_count(J: np.ndarray) -> Optional[int]:
    """``k`` if ``J`` is a uniform ``k``-nearest-neighbour ring, else ``None``."""
    n = J.shape[0]
    if n < 3:
        return None
    row = J[0]
    w = row[1]
    if w == 0:
        return None
    k = 0
    while k + 1 <= (n - 1) // 2 and row[k + 1] == w and row[n - k - 1] == w:
        k += 1
    if k == 0 or 2 * k == n - 1:
        # k == (n-1)/2 is the complete graph, which has no ring structure to wind around
        return None
    ring = build_ring(RingSpec(n, k, float(w))).couplings
    return k if np.array_equal(ring, J) else None


def _emit(payload: dict, args) -> None:
    text = json.dumps(payload, indent=2 if args.pretty else None, sort_keys=True)
    print(text)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


# -- subcommands --------------------------------------------------------------


def cmd_graph(args) -> int:
    if args.n < 2:
        raise InvalidArgumentError(f"--n must be at least 2, got {args.n}")
    if args.ring is not None:
        net = build_ring(RingSpec(args.n, args.ring, args.j))
    elif args.dist == "uniform":
        net = build_complete(args.n, UniformInterval(args.lo, args.hi), args.seed)
    elif args.dist == "fm":
        net = build_complete(args.n, ConstantFM(args.j), args.seed)
    else:
        net = build_complete(args.n, NormalMeanStd(args.mean, args.std), args.seed)
    write_graph(net, args.out)
    _emit({"vertices": net.n_vertices, "edges": len(net.edges()), "out": str(args.out)}, args)
    return EXIT_OK


def cmd_embed(args) -> int:
    net, listed = read_graph(args.inp, return_edges=True)
    n = net.n_vertices
    missing = [
        (i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in listed and net.couplings[i, j] == 0
    ]
    if missing:
        shown = ", ".join(f"{i}-{j}" for i, j in missing[:20])
        more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
        raise ValidationError(f"input is not a complete graph; missing pairs: {shown}{more}")
    emb = embed_triad(net, args.jc, args.looped)
    triad = emb.to_network()
    write_graph(triad, args.out)
    side = sidecar_path(args.out)
    write_sidecar(emb, side)
    _emit(
        {"vertices": triad.n_vertices, "edges": len(triad.edges()), "inter_edges": len(emb.inter_pairs),
         "out": str(args.out), "sidecar": str(side)},
        args,
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    net = read_graph(args.inp)
    side = Path(args.sidecar) if args.sidecar else sidecar_path(args.inp)
    emb = read_sidecar(side, net) if side.exists() else None
    M = net.n_vertices
    if args.sigma is not None:
        freqs = triad_frequencies(M, args.sigma, args.seed)
    else:
        freqs = np.asarray(net.frequencies, dtype=np.float64)

    scales = [float(np.max(np.abs(net.couplings)))] if np.any(net.couplings) else []
    t_end = args.t_end if args.t_end is not None else default_t_end(*scales)
    S = float(np.max(np.abs(net.couplings).sum(axis=1)))
    kind = "kuramoto" if args.model == "kuramoto" else "sl"
    dt = args.dt if args.dt is not None else min(0.01, stable_dt(S, float(np.max(np.abs(freqs), initial=0.0)), kind))
    cfg = SimConfig(dt=dt, t_end=t_end, method=Method(args.method), keep_last=None if args.traj_out else 1)

    if args.model == "sl":
        tr = integrate_sl(net, cfg, args.seed, frequencies=freqs)
    elif args.model == "sl-feedback":
        fb = FeedbackConfig(args.epsilon, args.rho_target)
        tr = integrate_sl_feedback(net, cfg, fb, args.seed, frequencies=freqs)
    else:
        tr = integrate_kuramoto(net, cfg, args.seed, frequencies=freqs)

    phases = tr.final_phases
    metrics: dict = {
        "model": args.model,
        "t_final": float(tr.times[-1]),
        "reached_steady": bool(tr.reached_steady),
        "residual": float(tr.residuals[-1]) if tr.residuals is not None else None,
        "r_complete": coherence_complete(phases),
        "h_xy": xy_energy(net, phases),
    }
    if args.model != "kuramoto":
        rho = np.abs(tr.final_state)
        metrics["amplitude_min"] = float(rho.min())
        metrics["amplitude_max"] = float(rho.max())
    if emb is not None:
        src = emb.source_network()
        rep = coherence_triad(emb, phases)
        metrics.update(
            r_inter=rep.r_inter,
            r_intra=rep.r_intra,
            h_unemb=unembedded_energy(emb, src, phases),
            h_emb=embedded_energy(emb, src, phases),
        )
    k = ring_neighbor_count(net.couplings)
    if k is not None:
        metrics["ell"] = winding_number(phases).ell
        metrics["neighbor_count"] = k
    if args.traj_out:
        write_trajectory_csv(tr, args.traj_out)
    if args.metrics_out:
        Path(args.metrics_out).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    _emit(metrics, args)
    return EXIT_OK


def cmd_optimize(args) -> int:
    net = read_graph(args.inp)
    if args.method == "brute":
        res = brute_force_oracle(net, args.grid)
    else:
        res = basin_hopping(net, BasinHoppingConfig(iterations=args.iters, seed=args.seed))
    _emit(
        {"method": args.method, "energy": res.energy, "phases": _jsonable(res.phases),
         "iterations_used": res.iterations_used, "local_minima_found": res.local_minima_found,
         "gradient_norm": res.gradient_norm},
        args,
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    plan = load_plan(args.plan)
    out = args.out or plan.output_path or str(Path(args.plan).with_suffix("")) + "_results.csv"
    plan.output_path = None
    result = run_plan(plan, workers=args.workers)
    rows_path, agg_path = result.write(out)
    _emit(
        {"kind": plan.kind, "rows": len(result.rows), "failed": sum(r["failed"] for r in result.rows),
         "results": str(rows_path), "aggregate": str(agg_path)},
        args,
    )
    return EXIT_OK


def cmd_twisted(args) -> int:
    RingSpec(args.n, args.neighbors, args.coupling)
    sim = {"t_end": args.t_end} if args.t_end is not None else None
    hist = twisted_census(args.n, args.neighbors, args.runs, args.seed, args.coupling, sim)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(f"# format_version {CENSUS_FORMAT_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(["ell", "count"])
            for ell, count in hist.items():
                w.writerow([ell, count])
    _emit({"n": args.n, "neighbors": args.neighbors, "runs": args.runs,
           "histogram": {str(k): v for k, v in hist.items()}}, args)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slembed", description="Stuart-Landau networks on triad graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--pretty", action="store_true", help="indent JSON output")
        sp.set_defaults(func=func)
        return sp

    g = add("graph", cmd_graph, "generate a complete (or ring) graph file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--dist", choices=["uniform", "fm", "normal"], default="uniform")
    g.add_argument("--lo", type=float, default=-1.0)
    g.add_argument("--hi", type=float, default=1.0)
    g.add_argument("--j", type=float, default=1.0, help="FM weight, or ring coupling with --ring")
    g.add_argument("--mean", type=float, default=0.0)
    g.add_argument("--std", type=float, default=1.0)
    g.add_argument("--ring", type=int, metavar="K", help="build a K-nearest-neighbour ring instead")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    e = add("embed", cmd_embed, "minor-embed a complete graph into a triad graph")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--jc", type=float, required=True)
    e.add_argument("--looped", action="store_true")
    e.add_argument("--out", required=True)

    s = add("simulate", cmd_simulate, "integrate one network and report final-state metrics")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--sidecar", help="chain map JSON (default: <in>.triad.json when present)")
    s.add_argument("--model", choices=["sl", "sl-feedback", "kuramoto"], default="sl")
    s.add_argument("--sigma", type=float, help="draw N(0, sigma) frequencies instead of the file's")
    s.add_argument("--epsilon", type=float, default=0.04)
    s.add_argument("--rho-target", type=float, default=None)
    s.add_argument("--t-end", type=float, default=None)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--method", choices=[m.value for m in Method], default="rk4")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--traj-out")
    s.add_argument("--metrics-out")

    o = add("optimize", cmd_optimize, "minimize the XY energy of a graph")
    o.add_argument("--in", dest="inp", required=True)
    o.add_argument("--method", choices=["bh", "brute"], default="bh")
    o.add_argument("--iters", type=int, default=1000)
    o.add_argument("--grid", type=int, default=72, help="grid points per angle for brute force")
    o.add_argument("--seed", type=int, default=0)

    w = add("sweep", cmd_sweep, "run an experiment plan")
    w.add_argument("--plan", required=True)
    w.add_argument("--out", help="results CSV (overrides the plan's output_path)")
    w.add_argument("--workers", type=int, default=None)

    t = add("twisted", cmd_twisted, "winding-number census on a ring")
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--neighbors", type=int, required=True)
    t.add_argument("--runs", type=int, default=1000)
    t.add_argument("--coupling", type=float, default=1.0)
    t.add_argument("--t-end", type=float, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InvalidArgumentError, NonConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
