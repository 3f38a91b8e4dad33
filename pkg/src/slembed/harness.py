"""Seeded Monte-Carlo sweeps over coupling, embedding and detuning parameters.

A plan names an experiment kind, the parameter axes to sweep and how many
random realizations to run at every point of the axes grid. Each row of
the result is one (point, realization) pair; the aggregate table holds the
mean and standard deviation of every metric per point.

Row seeds come from ``SeedSequence(master_seed, spawn_key=key)``. With
``paired`` (the default) the key is ``(realization,)``, so realization
``r`` sees the same graph, frequencies and initial state at every point
of the grid that shares its size; otherwise the key is
``(point_index, realization)``.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import (
    FeedbackConfig,
    Method,
    SimConfig,
    default_t_end,
    initial_phases,
    initial_state,
    simulate_batch,
    stable_dt,
)
from .errors import DivergenceError, InvalidArgumentError, ValidationError
from .graphs import (
    ConstantFM,
    RingSpec,
    UniformInterval,
    build_complete,
    build_ring,
    embed_triad,
    triad_frequencies,
    unembed_phases,
)
from .metrics import (
    amplitude_spread,
    coherence_complete,
    coherence_triad,
    embedded_energy,
    energy_difference_half,
    error_ratio,
    eta_from_phases,
    winding_number,
    xy_energy,
)
from .optimizer import BasinHoppingConfig, basin_hopping

__all__ = [
    "KINDS",
    "AXIS_NAMES",
    "ExperimentPlan",
    "SweepResult",
    "row_seed",
    "run_plan",
    "load_plan",
    "plan_from_dict",
    "eta_threshold",
    "fit_linear",
    "kuramoto_vs_sl",
    "twisted_census",
    "reference_energy",
]

PLAN_FORMAT_VERSION = 1
RESULTS_FORMAT_VERSION = 1

KINDS = (
    "CoherenceSweep",
    "EtaSweep",
    "XYErrorSweep",
    "TwistedCensus",
    "FeedbackSweep",
    "KuramotoComparison",
)
AXIS_NAMES = ("N", "J", "J_c", "sigma", "epsilon", "looped", "neighbor_count")

_REQUIRED_AXES = {
    "CoherenceSweep": {"N", "J", "sigma"},
    "EtaSweep": {"N", "J_c", "sigma"},
    "XYErrorSweep": {"N", "J_c"},
    "TwistedCensus": {"N", "neighbor_count"},
    "FeedbackSweep": {"N", "J_c", "epsilon"},
    "KuramotoComparison": {"N"},
}
_OPTIONAL_AXES = {
    "CoherenceSweep": {"J_c", "looped"},
    "EtaSweep": {"J", "looped"},
    "XYErrorSweep": {"sigma", "looped"},
    "TwistedCensus": {"J"},
    "FeedbackSweep": {"sigma", "looped"},
    "KuramotoComparison": {"sigma"},
}
_COMMON_OPTIONS = {"batch_size": None, "workers": 1, "paired": True}
_KIND_OPTIONS = {
    "CoherenceSweep": {},
    "EtaSweep": {"window": 200},
    "XYErrorSweep": {"bh_iterations": 1000, "weight_lo": -1.0, "weight_hi": 1.0, "include_complete": False},
    "TwistedCensus": {},
    "FeedbackSweep": {"bh_iterations": 1000, "weight_lo": -1.0, "weight_hi": 1.0, "rho_target": None},
    "KuramotoComparison": {"weight_lo": -1.0, "weight_hi": 1.0},
}
_AXIS_DEFAULTS = {"J": 1.0, "sigma": 0.0, "looped": False, "J_c": None}

# Integrator defaults per kind; ``t_end=None`` means default_t_end() of the point.
_DEFAULT_SIM = {
    "CoherenceSweep": dict(method="rk4", dt=0.05, keep_last=1),
    "EtaSweep": dict(method="rk4", dt=0.01),
    "XYErrorSweep": dict(method="rk4", dt=0.05, keep_last=1, stop_on_steady=True),
    "TwistedCensus": dict(method="rk4", dt=0.05, keep_last=1, stop_on_steady=True, t_end=100.0),
    "FeedbackSweep": dict(method="rk45", dt=0.01, keep_last=1, t_end=500.0),
    "KuramotoComparison": dict(method="rk4", dt=0.05, keep_last=1, stop_on_steady=True, t_end=400.0),
}


@dataclass
class ExperimentPlan:
    kind: str
    axes: dict[str, list]
    realizations: int = 40
    master_seed: int = 0
    sim: dict = field(default_factory=dict)
    output_path: Optional[str] = None
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown plan kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not isinstance(self.axes, dict) or not self.axes:
            raise ValidationError("axes must be a non-empty mapping")
        allowed = _REQUIRED_AXES[self.kind] | _OPTIONAL_AXES[self.kind]
        for name, values in self.axes.items():
            if name not in AXIS_NAMES:
                raise ValidationError(f"unknown axis {name!r}")
            if name not in allowed:
                raise ValidationError(f"axis {name!r} is not used by {self.kind}")
            if not isinstance(values, (list, tuple)) or len(values) == 0:
                raise ValidationError(f"axis {name!r} needs a non-empty list of values")
        missing = _REQUIRED_AXES[self.kind] - set(self.axes)
        if missing:
            raise ValidationError(f"{self.kind} requires axes {sorted(missing)}")
        self.axes = {k: list(v) for k, v in self.axes.items()}
        if int(self.realizations) != self.realizations or self.realizations < 1:
            raise ValidationError("realizations must be a positive integer")
        sim_fields = {f.name for f in dataclasses.fields(SimConfig)}
        for key in self.sim:
            if key not in sim_fields:
                raise ValidationError(f"unknown sim key {key!r}")
        known = {**_COMMON_OPTIONS, **_KIND_OPTIONS[self.kind]}
        for key in self.options:
            if key not in known:
                raise ValidationError(f"unknown option {key!r} for {self.kind}")
        if self.kind == "KuramotoComparison" and any(s != 0 for s in self.axes.get("sigma", [0])):
            raise ValidationError("KuramotoComparison compares identical oscillators: sigma must be 0")

    def option(self, name: str):
        defaults = {**_COMMON_OPTIONS, **_KIND_OPTIONS[self.kind]}
        return self.options.get(name, defaults[name])

    def points(self) -> list[dict]:
        names = sorted(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]

    def to_dict(self) -> dict:
        return {
            "format_version": PLAN_FORMAT_VERSION,
            "kind": self.kind,
            "axes": self.axes,
            "realizations": self.realizations,
            "master_seed": self.master_seed,
            "sim": self.sim,
            "output_path": self.output_path,
            "options": self.options,
        }


_PLAN_KEYS = {"format_version", "kind", "axes", "realizations", "master_seed", "sim", "output_path", "options"}


def plan_from_dict(d: dict) -> ExperimentPlan:
    if not isinstance(d, dict):
        raise ValidationError("plan must be a JSON object")
    for key in d:
        if key not in _PLAN_KEYS:
            raise ValidationError(f"unknown plan key {key!r}")
    if "kind" not in d or "axes" not in d:
        raise ValidationError("plan needs 'kind' and 'axes'")
    if d.get("format_version", PLAN_FORMAT_VERSION) != PLAN_FORMAT_VERSION:
        raise ValidationError(f"unsupported plan format_version {d['format_version']!r}")
    args = {k: v for k, v in d.items() if k != "format_version" and v is not None}
    for key in ("sim", "options"):
        if key in args and not isinstance(args[key], dict):
            raise ValidationError(f"plan key {key!r} must be an object")
    return ExperimentPlan(**args)


def load_plan(path) -> ExperimentPlan:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"plan {path} is not valid JSON: {exc}") from None
    return plan_from_dict(d)


def row_seed(master_seed: int, point_index: int, realization: int, paired: bool = True) -> int:
    key = (realization,) if paired else (point_index, realization)
    ss = np.random.SeedSequence(int(master_seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])


# -- reference energies -------------------------------------------------------

_BH_CACHE: dict = {}


def reference_energy(J: np.ndarray, iterations: int, seed: int) -> float:
    """Basin-hopping ground-state estimate, memoised on (weights, iterations, seed)."""
    key = (J.tobytes(), J.shape[0], int(iterations), int(seed))
    if key not in _BH_CACHE:
        res = basin_hopping(J, BasinHoppingConfig(iterations=int(iterations), seed=int(seed)))
        _BH_CACHE[key] = res.energy
    return _BH_CACHE[key]


# -- per-point execution ------------------------------------------------------


def _sim_for(plan: ExperimentPlan, scales, row_abs_sum: float, max_freq: float, kind="sl") -> SimConfig:
    base = {**_DEFAULT_SIM[plan.kind], **plan.sim}
    if base.get("t_end") is None:
        base["t_end"] = default_t_end(*scales)
    cfg = SimConfig(**base)
    if cfg.method is Method.FIXED_RK4:
        cfg = cfg.replace(dt=min(cfg.dt, stable_dt(row_abs_sum, max_freq, kind)))
    return cfg


def _amplitude(plan: ExperimentPlan) -> float:
    return float(plan.sim.get("init_amplitude", SimConfig.init_amplitude))


def _row_abs_sum(mats) -> float:
    return max(float(np.max(abs(m).sum(axis=1))) for m in mats)


def _simulate_rows(model, mats, freqs, initial, cfg, feedback=None):
    """Integrate a batch, isolating divergent members; returns (BatchTrajectory|None, per-member list)."""
    try:
        bt = simulate_batch(model, mats, freqs, initial, cfg, feedback)
        return [bt.member(b) for b in range(initial.shape[0])]
    except DivergenceError:
        out = []
        for b in range(initial.shape[0]):
            m = mats[b] if isinstance(mats, (list, tuple)) else mats
            try:
                bt = simulate_batch(model, m, freqs[b : b + 1], initial[b : b + 1], cfg, feedback)
                out.append(bt.member(0))
            except DivergenceError:
                out.append(None)
        return out


def _instances(plan, point, seeds):
    """Random complete graphs for every realization of a point."""
    N = int(point["N"])
    if plan.kind in ("CoherenceSweep", "EtaSweep"):
        dist = ConstantFM(float(point.get("J", _AXIS_DEFAULTS["J"])))
    else:
        dist = UniformInterval(float(plan.option("weight_lo")), float(plan.option("weight_hi")))
    return [build_complete(N, dist, s) for s in seeds]


def _coherence_point(plan, point, seeds):
    N = int(point["N"])
    J = float(point["J"])
    sigma = float(point["sigma"])
    nets = _instances(plan, point, seeds)
    jc = point.get("J_c")
    amp = _amplitude(plan)
    if jc is None:
        M = N
        mats = nets[0].couplings
    else:
        embs = [embed_triad(net, float(jc), bool(point.get("looped", False))) for net in nets]
        M = embs[0].n_vertices
        mats = embs[0].couplings
    freqs = np.stack([triad_frequencies(M, sigma, s) for s in seeds])
    psi0 = np.stack([initial_state(M, s, amp) for s in seeds])
    scales = (J,) if jc is None else (J, float(jc))
    cfg = _sim_for(plan, scales, _row_abs_sum([mats]), np.abs(freqs).max())
    trajs = _simulate_rows("sl", mats, freqs, psi0, cfg)
    rows = []
    for tr in trajs:
        if tr is None:
            rows.append(None)
            continue
        ph = tr.final_phases
        if jc is None:
            rows.append({"r_complete": coherence_complete(ph), "steady": float(tr.reached_steady)})
        else:
            rep = coherence_triad(embs[0], ph)
            rows.append({"r_inter": rep.r_inter, "r_intra": rep.r_intra, "r_complete": rep.r_complete})
    return rows


_ETA_CACHE: dict = {}


def _eta_point(plan, point, seeds):
    N = int(point["N"])
    J = float(point.get("J", _AXIS_DEFAULTS["J"]))
    jc = float(point["J_c"])
    sigma = float(point["sigma"])
    looped = bool(point.get("looped", False))
    window = int(plan.option("window"))
    net = _instances(plan, point, seeds[:1])[0]
    emb = embed_triad(net, jc, looped)
    M = emb.n_vertices
    freqs = np.stack([triad_frequencies(M, sigma, s) for s in seeds])
    amp = _amplitude(plan)
    psi0 = np.stack([initial_state(M, s, amp) for s in seeds])
    # one time grid for the complete and triad runs: the stricter of the two stable steps
    wmax = float(np.abs(freqs).max())
    cfg = _sim_for(plan, (J, jc), _row_abs_sum([emb.couplings, net.couplings]), wmax)
    cfg = cfg.replace(keep_last=window, stop_on_steady=False)

    key = (N, J, sigma, tuple(seeds), cfg)
    if key not in _ETA_CACHE:
        # the complete graph consumes the first N draws of each triad stream
        _ETA_CACHE[key] = _simulate_rows("sl", net.couplings, freqs[:, :N], psi0[:, :N], cfg)
    complete = _ETA_CACHE[key]
    triad = _simulate_rows("sl", emb.couplings, freqs, psi0, cfg)
    rows = []
    for c, t in zip(complete, triad):
        if c is None or t is None or c.times.size < window:
            rows.append(None)
            continue
        theta = np.angle(c.states[-window:])
        theta_bar = unembed_phases(emb, np.angle(t.states[-window:]))
        rep = coherence_triad(emb, t.final_phases)
        rows.append({
            "eta": eta_from_phases(theta, theta_bar),
            "r_complete": coherence_complete(c.final_phases),
            "r_inter": rep.r_inter,
            "r_intra": rep.r_intra,
        })
    return rows


def _xy_point(plan, point, seeds):
    N = int(point["N"])
    jc = float(point["J_c"])
    sigma = float(point.get("sigma", 0.0))
    looped = bool(point.get("looped", False))
    nets = _instances(plan, point, seeds)
    embs = [embed_triad(net, jc, looped) for net in nets]
    M = embs[0].n_vertices
    freqs = np.stack([triad_frequencies(M, sigma, s) for s in seeds])
    amp = _amplitude(plan)
    psi0 = np.stack([initial_state(M, s, amp) for s in seeds])
    mats = [e.couplings for e in embs]
    wmax = float(np.abs(freqs).max())
    cfg = _sim_for(plan, (1.0, jc), _row_abs_sum(mats), wmax)
    if sigma > 0:
        cfg = cfg.replace(stop_on_steady=False)
    trajs = _simulate_rows("sl", mats, freqs, psi0, cfg)
    iters = plan.option("bh_iterations")

    complete = [None] * len(seeds)
    if plan.option("include_complete"):
        cmats = [n.couplings for n in nets]
        ccfg = _sim_for(plan, (1.0,), _row_abs_sum(cmats), wmax)
        if sigma > 0:
            ccfg = ccfg.replace(stop_on_steady=False)
        complete = _simulate_rows("sl", cmats, freqs[:, :N], psi0[:, :N], ccfg)

    rows = []
    for b, tr in enumerate(trajs):
        if tr is None:
            rows.append(None)
            continue
        e_bh = reference_energy(nets[b].couplings, iters, seeds[b])
        ph = tr.final_phases
        h_unemb = xy_energy(nets[b], unembed_phases(embs[b], ph))
        h_emb = embedded_energy(embs[b], nets[b], ph)
        rep = coherence_triad(embs[b], ph)
        row = {
            "e_bh": e_bh,
            "h_unemb": h_unemb,
            "h_emb": h_emb,
            "err_unemb": error_ratio(e_bh, h_unemb),
            "err_emb": error_ratio(e_bh, h_emb),
            "r_inter": rep.r_inter,
            "r_intra": rep.r_intra,
            "steady": float(tr.reached_steady),
        }
        if plan.option("include_complete"):
            c = complete[b]
            h = xy_energy(nets[b], c.final_phases) if c is not None else math.nan
            row["h_complete"] = h
            row["err_complete"] = error_ratio(e_bh, h)
        rows.append(row)
    return rows


def _twisted_point(plan, point, seeds):
    N = int(point["N"])
    k = int(point["neighbor_count"])
    J = float(point.get("J", _AXIS_DEFAULTS["J"]))
    net = build_ring(RingSpec(N, k, J))
    amp = _amplitude(plan)
    psi0 = np.stack([initial_state(N, s, amp) for s in seeds])
    cfg = _sim_for(plan, (J,), _row_abs_sum([net.couplings]), 0.0)
    trajs = _simulate_rows("sl", net.couplings, np.zeros((len(seeds), N)), psi0, cfg)
    rows = []
    for tr in trajs:
        if tr is None:
            rows.append(None)
            continue
        ell = winding_number(tr.final_phases).ell
        rows.append({"ell": float(ell), "abs_ell": float(abs(ell)), "steady": float(tr.reached_steady)})
    return rows


def _feedback_point(plan, point, seeds):
    N = int(point["N"])
    jc = float(point["J_c"])
    eps = float(point["epsilon"])
    sigma = float(point.get("sigma", 0.0))
    looped = bool(point.get("looped", False))
    fb = FeedbackConfig(eps, plan.option("rho_target"))
    nets = _instances(plan, point, seeds)
    embs = [embed_triad(net, jc, looped) for net in nets]
    M = embs[0].n_vertices
    freqs = np.stack([triad_frequencies(M, sigma, s) for s in seeds])
    amp = _amplitude(plan)
    psi0 = np.stack([initial_state(M, s, amp) for s in seeds])
    wmax = float(np.abs(freqs).max())
    mats = [e.couplings for e in embs]
    cmats = [n.couplings for n in nets]
    cfg = _sim_for(plan, (1.0, jc), _row_abs_sum(mats), wmax)
    ccfg = _sim_for(plan, (1.0,), _row_abs_sum(cmats), wmax)
    triad = _simulate_rows("sl-feedback", mats, freqs, psi0, cfg, fb)
    complete = _simulate_rows("sl-feedback", cmats, freqs[:, :N], psi0[:, :N], ccfg, fb)
    iters = plan.option("bh_iterations")
    rows = []
    for b in range(len(seeds)):
        t, c = triad[b], complete[b]
        if t is None or c is None:
            rows.append(None)
            continue
        e_bh = reference_energy(nets[b].couplings, iters, seeds[b])
        ph = t.final_phases
        h_unemb = xy_energy(nets[b], unembed_phases(embs[b], ph))
        h_emb = embedded_energy(embs[b], nets[b], ph)
        h_c = xy_energy(nets[b], c.final_phases)
        rho_c = np.abs(c.final_state)
        rho_t = np.abs(t.final_state)
        rows.append({
            "e_bh": e_bh,
            "err_unemb": error_ratio(e_bh, h_unemb),
            "err_emb": error_ratio(e_bh, h_emb),
            "err_complete": error_ratio(e_bh, h_c),
            "spread_complete": amplitude_spread(c.final_state),
            "rel_spread_complete": float((rho_c.max() - rho_c.min()) / rho_c.max()),
            "spread_triad": amplitude_spread(t.final_state),
            "rel_spread_triad": float((rho_t.max() - rho_t.min()) / rho_t.max()),
        })
    return rows


def _kuramoto_point(plan, point, seeds):
    N = int(point["N"])
    nets = _instances(plan, point, seeds)
    mats = [n.couplings for n in nets]
    amp = _amplitude(plan)
    theta0 = np.stack([initial_phases(N, s) for s in seeds])
    psi0 = amp * np.exp(1j * theta0)
    zeros = np.zeros((len(seeds), N))
    S = _row_abs_sum(mats)
    sl = _simulate_rows("sl", mats, zeros, psi0, _sim_for(plan, (1.0,), S, 0.0))
    km = _simulate_rows("kuramoto", mats, zeros, theta0, _sim_for(plan, (1.0,), S, 0.0, kind="kuramoto"))
    rows = []
    for b in range(len(seeds)):
        if sl[b] is None or km[b] is None:
            rows.append(None)
            continue
        e_sl = xy_energy(nets[b], sl[b].final_phases)
        e_km = xy_energy(nets[b], km[b].final_phases)
        rows.append({"e_sl": e_sl, "e_km": e_km, "energy_difference_half": energy_difference_half(e_km, e_sl)})
    return rows


_RUNNERS = {
    "CoherenceSweep": _coherence_point,
    "EtaSweep": _eta_point,
    "XYErrorSweep": _xy_point,
    "TwistedCensus": _twisted_point,
    "FeedbackSweep": _feedback_point,
    "KuramotoComparison": _kuramoto_point,
}


def _run_point(plan: ExperimentPlan, index: int, point: dict) -> list[dict]:
    paired = bool(plan.option("paired"))
    seeds = [row_seed(plan.master_seed, index, r, paired) for r in range(plan.realizations)]
    batch = plan.option("batch_size") or plan.realizations
    rows = []
    for start in range(0, len(seeds), batch):
        chunk = seeds[start : start + batch]
        t0 = time.perf_counter()
        metrics = _RUNNERS[plan.kind](plan, point, chunk)
        per_row = (time.perf_counter() - t0) / len(chunk)
        for r, (seed, m) in enumerate(zip(chunk, metrics), start):
            row = {"_point": index, "_realization": r, **point, "seed": seed, "failed": int(m is None)}
            row.update(m if m is not None else {})
            row["runtime_s"] = per_row
            rows.append(row)
    return rows


# -- results ------------------------------------------------------------------


@dataclass
class SweepResult:
    plan: ExperimentPlan
    rows: list[dict]
    aggregates: list[dict]
    axis_columns: list[str]
    metric_columns: list[str]

    def column(self, name: str, **where) -> np.ndarray:
        return np.array([r.get(name, math.nan) for r in self.rows if all(r[k] == v for k, v in where.items())], dtype=float)

    def aggregate(self, **where) -> dict:
        hits = [a for a in self.aggregates if all(a[k] == v for k, v in where.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} aggregate rows match {where}")
        return hits[0]

    def row_columns(self) -> list[str]:
        return self.axis_columns + ["seed", "failed"] + self.metric_columns

    def aggregate_columns(self) -> list[str]:
        cols = self.axis_columns + ["realizations", "failed"]
        for m in self.metric_columns:
            cols += [f"{m}_mean", f"{m}_std"]
        return cols

    def write(self, path) -> tuple[Path, Path]:
        """Write ``<path>`` (rows) and ``<stem>_aggregate<suffix>`` next to it."""
        path = Path(path)
        agg_path = path.with_name(f"{path.stem}_aggregate{path.suffix or '.csv'}")
        _write_csv(path, self.row_columns(), self.rows)
        _write_csv(agg_path, self.aggregate_columns(), self.aggregates)
        return path, agg_path


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version {RESULTS_FORMAT_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def _aggregate(rows: list[dict], axis_columns: list[str], metric_columns: list[str]) -> list[dict]:
    out = []
    for _, group in itertools.groupby(rows, key=lambda r: r["_point"]):
        group = list(group)
        ok = [r for r in group if not r["failed"]]
        agg = {c: group[0][c] for c in axis_columns}
        agg["_point"] = group[0]["_point"]
        agg["realizations"] = len(group)
        agg["failed"] = len(group) - len(ok)
        for m in metric_columns:
            vals = np.array([r[m] for r in ok if m in r], dtype=float)
            vals = vals[np.isfinite(vals)]
            agg[f"{m}_mean"] = float(vals.mean()) if vals.size else math.nan
            agg[f"{m}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out.append(agg)
    return out


def run_plan(plan: ExperimentPlan, workers: Optional[int] = None) -> SweepResult:
    """Run every realization at every grid point and aggregate per point.

    Divergent realizations are kept as rows with ``failed = 1`` and are
    excluded from means. Results do not depend on ``workers``.
    """
    points = plan.points()
    workers = int(workers if workers is not None else plan.option("workers"))
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_point, [plan] * len(points), range(len(points)), points))
    else:
        chunks = [_run_point(plan, i, p) for i, p in enumerate(points)]
    rows = sorted(itertools.chain.from_iterable(chunks), key=lambda r: (r["_point"], r["_realization"]))
    axis_columns = sorted(plan.axes)
    reserved = set(axis_columns) | {"_point", "_realization", "seed", "failed"}
    metric_columns = sorted({k for r in rows for k in r} - reserved)
    aggregates = _aggregate(rows, axis_columns, metric_columns)
    result = SweepResult(plan, rows, aggregates, axis_columns, metric_columns)
    if plan.output_path:
        result.write(plan.output_path)
    return result


# -- analysis -----------------------------------------------------------------


def eta_threshold(eta_vs_jc: Sequence[tuple[float, float]], slope_tol: float = 0.05) -> Optional[float]:
    """Largest ``J_c`` where ``|d ln(eta) / d J_c|`` still exceeds ``slope_tol``.

    The derivative is taken by central differences (one-sided at the ends),
    so the answer is limited to the sampled grid.
    """
    pts = list(eta_vs_jc)
    if len(pts) < 3:
        raise InvalidArgumentError("need at least 3 (J_c, eta) points")
    jc = np.array([p[0] for p in pts], dtype=float)
    eta = np.array([p[1] for p in pts], dtype=float)
    if np.any(np.diff(jc) <= 0):
        raise InvalidArgumentError("J_c values must be strictly increasing")
    if np.any(eta <= 0):
        raise InvalidArgumentError("eta values must be positive")
    slope = np.gradient(np.log(eta), jc)
    hits = np.flatnonzero(np.abs(slope) > slope_tol)
    return float(jc[hits[-1]]) if hits.size else None


def fit_linear(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares line through ``(x, y)`` points: ``(slope, intercept, residual sum of squares)``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 points")
    x, y = pts[:, 0], pts[:, 1]
    if np.ptp(x) == 0:
        raise InvalidArgumentError("all x values are equal; the line is undetermined")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sum((A @ np.array([slope, intercept]) - y) ** 2))
    return float(slope), float(intercept), resid


def kuramoto_vs_sl(
    n_values: Sequence[int], realizations: int = 40, master_seed: int = 0, sim: Optional[dict] = None, **options
) -> list[dict]:
    """Mean ``(E_KM - E_SL) / (2 E_KM)`` per graph size (positive: Stuart-Landau finds lower energy)."""
    plan = ExperimentPlan(
        "KuramotoComparison", {"N": list(n_values)}, realizations, master_seed, sim or {}, options=options
    )
    res = run_plan(plan)
    return [
        {"N": a["N"], "energy_difference_half_mean": a["energy_difference_half_mean"],
         "energy_difference_half_std": a["energy_difference_half_std"], "failed": a["failed"]}
        for a in res.aggregates
    ]


def twisted_census(
    n: int, neighbor_count: int, runs: int, master_seed: int = 0, coupling: float = 1.0, sim: Optional[dict] = None
) -> dict[int, int]:
    """Histogram ``{ell: count}`` of winding numbers over ``runs`` random starts on a ring."""
    plan = ExperimentPlan(
        "TwistedCensus", {"N": [n], "neighbor_count": [neighbor_count], "J": [coupling]}, runs, master_seed, sim or {}
    )
    res = run_plan(plan)
    hist: dict[int, int] = {}
    for r in res.rows:
        if not r["failed"]:
            hist[int(r["ell"])] = hist.get(int(r["ell"]), 0) + 1
    return dict(sorted(hist.items()))
