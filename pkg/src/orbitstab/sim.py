"""Batch experiments: sweeps of initial conditions under several feedbacks.

Each run is isolated; a failure is recorded in the report and the batch
continues. Results are assembled in plan order, so reports are identical
for identical plans regardless of ``workers``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NonDecaying, OrbitStabError, OutOfTube, ValidationFailure
from .frame import to_transverse
from .hamilton import closed_loop_simulate, perturbation_probe, simulate_transverse, stable_trajectory
from .io import write_json
from .pipeline import Pipeline

log = logging.getLogger(__name__)

DIST_FLOOR = 1e-10


@dataclass
class DecayFit:
    exponent: float
    r2: float
    n_samples: int


def decay_rate(t, d, floor=DIST_FLOOR):
    """Exponential rate of a decaying distance record.

    Samples at or after the first one below ``floor`` are dropped (integrator
    noise); of the remainder, the window starts when ``d`` first falls below
    ``0.5 d(0)`` and the fit uses its final half. Returns the least-squares
    slope of ``log d`` and its R^2. Raises :class:`NonDecaying` if the record
    never halves or the slope is not negative.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    low = np.nonzero(d <= floor)[0]
    if low.size:
        t, d = t[: low[0]], d[: low[0]]
    if d.size < 4:
        raise NonDecaying("need at least 4 samples above the noise floor")
    below = np.nonzero(d < 0.5 * d[0])[0]
    if below.size == 0:
        raise NonDecaying("distance never fell below half its initial value")
    t, d = t[below[0]:], d[below[0]:]
    half = d.size // 2
    t, d = t[half:], d[half:]
    if d.size < 3:
        raise NonDecaying("too few samples in the fit window")
    y = np.log(d)
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid ** 2) / ss) if ss > 0 else 1.0
    if slope >= 0:
        raise NonDecaying(f"fitted exponent {slope:.3e} is not negative")
    return DecayFit(float(slope), r2, int(d.size))


@dataclass
class ExperimentPlan:
    """Initial conditions times feedbacks.

    ``coords`` is ``"original"`` (``z0`` in state space; needs generic mode)
    or ``"transverse"`` (``x0 = (x1, x2)``). Feedbacks are ``"linear"``
    (periodic LQR gain), ``"optimal"`` (stable-manifold BVP trajectory) or
    ``(name, callable)`` pairs with ``callable(x1, x2) -> u``.
    """

    pipeline: Pipeline
    initial_conditions: list
    coords: str = "transverse"
    feedbacks: tuple = ("linear",)
    duration: Optional[float] = None      # default 16 periods
    out_dir: Optional[str] = None
    seed: int = 0
    probes: int = 0                       # perturbation probes per optimal run
    workers: int = 1

    def __post_init__(self):
        if self.coords not in ("original", "transverse"):
            raise ValidationFailure("coords must be 'original' or 'transverse'")
        if self.coords == "original" and self.pipeline.mode != "generic":
            raise ValidationFailure("original-coordinate runs need the generic transverse model")
        if self.duration is None:
            self.duration = 16 * self.pipeline.period
        if not self.duration > 0:
            raise ValidationFailure("duration must be positive")


@dataclass
class SimRun:
    id: int
    ic: list
    feedback: str
    status: str = "ok"
    error: str = ""
    final_dist: float = float("nan")
    decay_exp: float = float("nan")
    decay_r2: float = float("nan")
    cost: float = float("nan")
    max_abs_H: Optional[float] = None
    probe_min_gap: Optional[float] = None
    csv: Optional[str] = None
    series: object = field(default=None, repr=False)

    def to_dict(self):
        out = {k: getattr(self, k) for k in ("id", "ic", "feedback", "final_dist", "decay_exp", "cost", "status")}
        out.update(decay_r2=self.decay_r2, error=self.error, csv=self.csv)
        if self.max_abs_H is not None:
            out["max_abs_H"] = self.max_abs_H
        if self.probe_min_gap is not None:
            out["probe_min_gap"] = self.probe_min_gap
        return out


@dataclass
class SimResult:
    runs: list
    aggregates: dict

    def to_dict(self):
        return {"runs": [r.to_dict() for r in self.runs], "aggregates": self.aggregates}

    def by_feedback(self, name):
        return [r for r in self.runs if r.feedback == name]


def _feedback_name(fb):
    return fb if isinstance(fb, str) else fb[0]


def _run_one(plan, run_id, ic, fb):
    pl = plan.pipeline
    name = _feedback_name(fb)
    run = SimRun(run_id, [float(v) for v in ic], name)
    try:
        ic = np.asarray(ic, dtype=float)
        if plan.coords == "original":
            x1, x2 = to_transverse(ic, pl.frame, pl.orbit, pl.tm.tube_radius)
            x0 = np.concatenate([[x1], x2])
        else:
            x0 = ic
        if np.linalg.norm(x0[1:]) > pl.tm.tube_radius:
            raise OutOfTube(f"initial condition {run.ic} lies outside the tube")
        if name == "optimal":
            tr = stable_trajectory(pl.hs, x0, pl.riccati)
            t, dist = tr.t, np.linalg.norm(tr.x[:, 1:], axis=1)
            run.cost = tr.cost
            run.max_abs_H = tr.max_abs_H
            if plan.probes:
                probes = perturbation_probe(pl.hs, tr, pl.riccati, n_dirs=plan.probes, seed=plan.seed + run_id)
                run.probe_min_gap = float(min(c for c, _ in probes) - tr.cost)
            series = tr
        else:
            fun = pl.feedback if name == "linear" else fb[1]
            if plan.coords == "original":
                series = closed_loop_simulate(pl.system, pl.cost, pl.orbit, pl.frame, fun, ic, plan.duration)
            else:
                series = simulate_transverse(pl.tm, pl.cost.R, fun, x0, plan.duration)
            t, dist = series.t, series.distance
            run.cost = series.total_cost
        run.series = series
        run.final_dist = float(dist[-1])
        if dist[0] > DIST_FLOOR:
            fit = decay_rate(t, dist)
            run.decay_exp, run.decay_r2 = fit.exponent, fit.r2
        else:
            run.decay_exp, run.decay_r2 = float("-inf"), 1.0
        if plan.out_dir is not None:
            path = Path(plan.out_dir) / f"run_{run_id:03d}_{name}.csv"
            series.to_csv(path)
            run.csv = str(path)
    except OrbitStabError as exc:
        run.status = "failed"
        run.error = f"{type(exc).__name__}: {exc}"
        log.warning("run %d (%s) failed: %s", run_id, name, run.error)
    return run


def _aggregate(runs, tol=1e-6):
    agg = {"n_runs": len(runs), "n_ok": sum(r.status == "ok" for r in runs)}
    agg["n_failed"] = agg["n_runs"] - agg["n_ok"]
    per = {}
    for r in runs:
        if r.status == "ok":
            per.setdefault(r.feedback, []).append(r)
    agg["per_feedback"] = {
        k: {"n_ok": len(v),
            "max_final_dist": max(r.final_dist for r in v),
            "mean_decay_exp": float(np.mean([r.decay_exp for r in v if np.isfinite(r.decay_exp)]))
            if any(np.isfinite(r.decay_exp) for r in v) else None,
            "total_cost": float(sum(r.cost for r in v))}
        for k, v in per.items()}
    viol = []
    lin = {tuple(r.ic): r for r in per.get("linear", [])}
    for r in per.get("optimal", []):
        other = lin.get(tuple(r.ic))
        if other is not None and r.cost > other.cost + tol:
            viol.append(r.ic)
    agg["cost_ordering_violations"] = viol
    return agg


def run_plan(plan):
    """Execute every (initial condition, feedback) pair of ``plan``.

    Writes one CSV per successful run and ``summary.json`` into
    ``plan.out_dir`` when it is set.
    """
    jobs = []
    for i, ic in enumerate(plan.initial_conditions):
        for fb in plan.feedbacks:
            jobs.append((len(jobs), ic, fb))
    if plan.out_dir is not None:
        Path(plan.out_dir).mkdir(parents=True, exist_ok=True)
    if plan.workers > 1 and jobs:
        with ThreadPoolExecutor(plan.workers) as ex:
            runs = list(ex.map(lambda j: _run_one(plan, *j), jobs))
    else:
        runs = [_run_one(plan, *j) for j in jobs]
    result = SimResult(runs, _aggregate(runs))
    if plan.out_dir is not None:
        write_json(Path(plan.out_dir) / "summary.json", result.to_dict())
    return result
