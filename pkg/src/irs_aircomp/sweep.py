"""Monte Carlo sweep harness: runs the solvers and baselines over an axis of
scenario values with trial-indexed seeds, and serializes plot-ready tables.

Rows are emitted in a stable order (axis value, algorithm, trial) regardless
of execution order, and wall-clock columns are zeroed unless timing output
is requested, so identical runs produce byte-identical files.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adaptive import solve_cluster_adaptive, solve_upper_bound
from .baselines import baseline_no_irs, baseline_random, oracle_grid_search
from .channels import BeamPattern, synthesize_channels
from .config import SystemConfig
from .dynamic import solve_dynamic, solve_low_complexity
from .rates import Allocation, Solution, evaluate_solution

AXES = ("N", "J", "E_max", "seeds")
ALGORITHMS = ("upper_bound", "cluster_adaptive", "dynamic", "low_complexity",
              "random_bf", "no_irs", "oracle")
CSV_HEADER = "axis_name,axis_value,algorithm,seed,objective,mean_rate,iterations,wallclock_s,flags"


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    trials: int
    base_config: SystemConfig
    algorithms: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if not self.values:
            raise ValueError("values must be nonempty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("values must be strictly increasing")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ValueError(f"algorithms must be a nonempty subset of {ALGORITHMS}")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        d = dict(d)
        base = SystemConfig.from_dict(d.pop("base_config"))
        known = {"axis", "values", "trials", "algorithms"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SweepSpec keys: {sorted(unknown)}")
        return cls(axis=d["axis"], values=tuple(d["values"]), trials=int(d["trials"]),
                   base_config=base, algorithms=tuple(d["algorithms"]))

    @classmethod
    def from_json(cls, path: str) -> "SweepSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ResultRow:
    axis_name: str
    axis_value: float
    algorithm: str
    seed: int
    objective: float
    mean_rate: float
    iterations: int
    wallclock_s: float
    flags: str


def _apply_axis(config: SystemConfig, axis: str, value) -> SystemConfig:
    if axis == "N":
        return config.replace(N=int(value))
    if axis == "J":
        return config.replace(J=int(value))
    if axis == "E_max":
        return config.replace(E_max=float(value))
    return config.replace(seed=int(value))


def _run_algorithm(name: str, config: SystemConfig, channels):
    """Returns (objective, iterations, flags list, Solution or None)."""
    if name == "upper_bound":
        ub = solve_upper_bound(config, channels)
        return ub.objective, ub.diagnostics.get("iterations", 0), ["relaxed"], None
    if name == "cluster_adaptive":
        sol = solve_cluster_adaptive(config, channels)
    elif name == "dynamic":
        sol = solve_dynamic(config, channels, config.J)
    elif name == "low_complexity":
        sol = solve_low_complexity(config, channels, config.J)
    elif name == "random_bf":
        sol = baseline_random(config, channels, config.J)
    elif name == "no_irs":
        sol = baseline_no_irs(config, channels)
    elif name == "oracle":
        sol = oracle_grid_search(config, channels, config.J)
    else:
        raise ValueError(f"unknown algorithm {name!r}")
    flags = list(sol.diagnostics.get("flags", []))
    split = sol.diagnostics.get("association_flags", {}).get("split", [])
    if split:
        flags.append("split")
    return sol.objective, int(sol.diagnostics.get("iterations", 0)), flags, sol


def solution_to_dict(sol: Solution) -> dict:
    return {
        "patterns": [[[float(z.real), float(z.imag)] for z in p.v] for p in sol.patterns],
        "times": sol.allocation.times.tolist(),
        "energies": sol.allocation.energies.tolist(),
        "association": sol.association,
        "objective": sol.objective,
    }


def solution_from_dict(d: dict) -> Solution:
    patterns = [BeamPattern(v=np.array([complex(re, im) for re, im in p]))
                for p in d["patterns"]]
    sol = Solution(patterns=patterns,
                   allocation=Allocation(times=np.asarray(d["times"]),
                                         energies=np.asarray(d["energies"])),
                   association=d["association"])
    sol.objective = d["objective"]
    return sol


def _run_cell(base_config: SystemConfig, axis: str, value, trial: int,
              algorithms: tuple, save_solutions: bool):
    """One (axis value, trial) cell: identical channels for every algorithm."""
    cfg = _apply_axis(base_config, axis, value)
    cfg = cfg.replace(seed=cfg.seed + trial)
    channels = synthesize_channels(cfg)
    out = []
    for alg in algorithms:
        t0 = time.perf_counter()
        try:
            obj, iters, flags, sol = _run_algorithm(alg, cfg, channels)
        except Exception as exc:  # recorded per-row, the sweep continues
            obj, iters, flags, sol = float("nan"), 0, [f"failed:{type(exc).__name__}"], None
        wall = time.perf_counter() - t0
        entry = {
            "row": ResultRow(axis_name=axis, axis_value=value, algorithm=alg,
                             seed=cfg.seed, objective=obj,
                             mean_rate=obj / cfg.T_t, iterations=iters,
                             wallclock_s=wall, flags="|".join(flags)),
            "solution": solution_to_dict(sol) if (save_solutions and sol is not None) else None,
        }
        out.append(entry)
    return out


def run_sweep(spec: SweepSpec, jobs: int = 1, save_solutions: bool = False):
    """Returns (rows, summary, solutions).

    rows: ResultRow list sorted by (axis value, algorithm, seed).
    summary: per (axis value, algorithm) mean/stderr/median of objective/T_t.
    solutions: {row key: solution dict} when save_solutions is set.
    """
    cells = [(value, trial) for value in spec.values for trial in range(spec.trials)]
    args = [(spec.base_config, spec.axis, value, trial, spec.algorithms, save_solutions)
            for value, trial in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_star, args))
    else:
        results = [_run_cell(*a) for a in args]
    rows, solutions = [], {}
    for entries in results:
        for entry in entries:
            row = entry["row"]
            rows.append(row)
            if entry["solution"] is not None:
                key = f"{row.axis_name}={_fmt(row.axis_value)};alg={row.algorithm};seed={row.seed}"
                solutions[key] = {"axis_value": row.axis_value, "algorithm": row.algorithm,
                                  "seed": row.seed, "solution": entry["solution"]}
    rows.sort(key=lambda r: (float(r.axis_value), r.algorithm, r.seed))
    summary = _summarize(spec, rows)
    return rows, summary, solutions


def _run_cell_star(a):
    return _run_cell(*a)


def _summarize(spec: SweepSpec, rows):
    summary = []
    for value in spec.values:
        for alg in sorted(set(spec.algorithms)):
            vals = np.array([r.mean_rate for r in rows
                             if r.axis_value == value and r.algorithm == alg
                             and np.isfinite(r.objective)])
            if vals.size == 0:
                summary.append({"axis_value": value, "algorithm": alg, "n": 0})
                continue
            stderr = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            summary.append({
                "axis_value": value, "algorithm": alg, "n": int(vals.size),
                "mean_rate_mean": float(vals.mean()),
                "mean_rate_stderr": stderr,
                "mean_rate_median": float(np.median(vals)),
                "objective_mean": float(vals.mean() * spec.base_config.T_t),
            })
    return summary


def _fmt(x) -> str:
    """9 significant digits, plain notation where possible."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def rows_to_csv(rows, timing: bool = False) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        wall = r.wallclock_s if timing else 0.0
        lines.append(",".join([
            r.axis_name, _fmt(r.axis_value), r.algorithm, str(r.seed),
            _fmt(r.objective), _fmt(r.mean_rate), str(r.iterations),
            _fmt(wall), r.flags,
        ]))
    return "\n".join(lines) + "\n"


def rows_to_json(rows, summary, timing: bool = False) -> str:
    payload = {
        "rows": [{
            "axis_name": r.axis_name, "axis_value": r.axis_value,
            "algorithm": r.algorithm, "seed": r.seed, "objective": r.objective,
            "mean_rate": r.mean_rate, "iterations": r.iterations,
            "wallclock_s": r.wallclock_s if timing else 0.0, "flags": r.flags,
        } for r in rows],
        "summary": summary,
    }
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"


def reverify_solutions(spec: SweepSpec, solutions: dict) -> float:
    """Re-evaluate persisted solutions from scratch; returns the max relative
    objective discrepancy."""
    worst = 0.0
    for entry in solutions.values():
        cfg = _apply_axis(spec.base_config, spec.axis, entry["axis_value"])
        cfg = cfg.replace(seed=entry["seed"])
        channels = synthesize_channels(cfg)
        sol = solution_from_dict(entry["solution"])
        obj, _ = evaluate_solution(cfg, channels, sol)
        stored = entry["solution"]["objective"]
        worst = max(worst, abs(obj - stored) / max(1e-12, abs(obj)))
    return worst
