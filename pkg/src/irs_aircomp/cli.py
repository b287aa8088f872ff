"""Command line entry points: single-instance runs, sweeps, oracle
certification on tiny instances, and a fast self-test of the core
mathematical properties.

Exit codes: 0 success, 2 configuration error, 3 solver failure or failed
check in a non-sweep command.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .adaptive import solve_cluster_adaptive, solve_upper_bound
from .baselines import baseline_no_irs, baseline_random, oracle_grid_search
from .channels import synthesize_channels
from .config import SystemConfig
from .dynamic import solve_dynamic, solve_low_complexity
from .sweep import (ALGORITHMS, SweepSpec, rows_to_csv, rows_to_json, run_sweep,
                    solution_to_dict)


class _ConfigError(Exception):
    pass


def _load_config(path: str, seed) -> SystemConfig:
    try:
        cfg = SystemConfig.from_json(path) if path else SystemConfig()
        if seed is not None:
            cfg = cfg.replace(seed=seed)
        return cfg
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise _ConfigError(str(exc)) from exc


def _write_or_print(text: str, out: str):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    channels = synthesize_channels(cfg)
    runners = {
        "cluster_adaptive": lambda: solve_cluster_adaptive(cfg, channels),
        "dynamic": lambda: solve_dynamic(cfg, channels, cfg.J),
        "low_complexity": lambda: solve_low_complexity(cfg, channels, cfg.J),
        "random_bf": lambda: baseline_random(cfg, channels, cfg.J),
        "no_irs": lambda: baseline_no_irs(cfg, channels),
        "oracle": lambda: oracle_grid_search(cfg, channels, cfg.J),
    }
    if args.algorithm == "upper_bound":
        ub = solve_upper_bound(cfg, channels)
        print(f"upper_bound objective = {ub.objective:.9g}  "
              f"(mean rate {ub.objective / cfg.T_t:.9g}, "
              f"iterations {ub.diagnostics.get('iterations', 0)})")
        if args.out:
            _write_or_print(json.dumps({"objective": ub.objective}, indent=2) + "\n", args.out)
        return 0
    sol = runners[args.algorithm]()
    print(f"{args.algorithm}: objective = {sol.objective:.9g} num*s/Hz, "
          f"mean rate = {sol.objective / cfg.T_t:.9g} num/Hz")
    print(f"  association (cluster -> pattern): {sol.association}")
    with np.printoptions(precision=4, suppress=False):
        print(f"  per-cluster rates: {np.array2string(sol.per_cluster_rates, precision=5)}")
    print(f"  iterations: {sol.diagnostics.get('iterations', 0)}, "
          f"wallclock: {sol.diagnostics.get('wallclock_s', 0.0):.2f} s, "
          f"flags: {sol.diagnostics.get('flags', [])}")
    if args.out:
        payload = solution_to_dict(sol)
        payload["algorithm"] = args.algorithm
        _write_or_print(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def cmd_sweep(args) -> int:
    if not args.config:
        raise _ConfigError("sweep requires --config pointing to a SweepSpec JSON file")
    try:
        spec = SweepSpec.from_json(args.config)
        if args.seed is not None:
            spec = SweepSpec(axis=spec.axis, values=spec.values, trials=spec.trials,
                             base_config=spec.base_config.replace(seed=args.seed),
                             algorithms=spec.algorithms)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise _ConfigError(str(exc)) from exc
    rows, summary, solutions = run_sweep(spec, jobs=args.jobs,
                                         save_solutions=args.save_solutions)
    if args.format == "csv":
        _write_or_print(rows_to_csv(rows, timing=args.timing), args.out)
    else:
        _write_or_print(rows_to_json(rows, summary, timing=args.timing), args.out)
    if args.save_solutions:
        sol_path = (args.out or "sweep") + ".solutions.json"
        with open(sol_path, "w") as fh:
            json.dump(solutions, fh, indent=2, sort_keys=True)
        print(f"solutions written to {sol_path}", file=sys.stderr)
    if args.out:
        for s in summary:
            if s.get("n"):
                print(f"{spec.axis}={s['axis_value']} {s['algorithm']}: "
                      f"mean rate {s['mean_rate_mean']:.6g} "
                      f"+/- {s['mean_rate_stderr']:.2g} (n={s['n']})")
    return 0


def cmd_oracle_check(args) -> int:
    if args.config:
        cfg = _load_config(args.config, args.seed)
    else:
        cfg = SystemConfig(L=2, K_per_cluster=(1, 1), N=2, J=2,
                           seed=args.seed if args.seed is not None else 0)
    if cfg.N > 4:
        raise _ConfigError("oracle-check is meant for tiny instances (N <= 4)")
    ok = True
    for trial in range(args.trials):
        c = cfg.replace(seed=cfg.seed + trial)
        channels = synthesize_channels(c)
        oracle = oracle_grid_search(c, channels, c.J, phase_levels=args.phase_levels)
        dyn = solve_dynamic(c, channels, c.J)
        ub = solve_upper_bound(c, channels)
        good = (dyn.objective >= oracle.objective * 0.95 - 1e-12
                and oracle.objective <= ub.objective * (1 + 1e-6) + 1e-12)
        ok = ok and good
        print(f"seed {c.seed}: oracle={oracle.objective:.6g} dynamic={dyn.objective:.6g} "
              f"upper={ub.objective:.6g} {'ok' if good else 'VIOLATION'}")
    print("oracle-check: " + ("all seeds ok" if ok else "violations found"))
    return 0 if ok else 3


def _selftest_checks():
    from .adaptive import spectral_majorizer
    from .channels import path_loss_linear
    from .dynamic import bilinear_minorant, quadratic_form_minorant, project_unit_modulus
    from .rates import computation_rate, proportional_time_allocation, uniform_forcing

    rng = np.random.default_rng(0)

    def formulas():
        assert abs(path_loss_linear(1, 3.3, 30) - 1e-3) < 1e-18
        assert computation_rate(16, 2, 4) == 1.0
        assert computation_rate(0.5, 2, 4) == 0.0
        t = proportional_time_allocation([1, 3], 0.1)
        assert np.allclose(t, [0.025, 0.075])
        tc = uniform_forcing([1, 4], 2.0)
        assert tc.eta == 2.0 and np.allclose(tc.powers, [2.0, 0.5])

    def minorants():
        for _ in range(2000):
            e, g = rng.uniform(0, 5, 2)
            ee, ge = rng.uniform(0, 5, 2)
            m = bilinear_minorant(e, g, ee, ge)
            assert m <= e * g + 1e-12
            exact = bilinear_minorant(e, g, e, g)
            assert abs(exact - e * g) <= 1e-10 * max(1.0, e * g)
        for _ in range(500):
            n = rng.integers(2, 5)
            A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            Q = A @ A.conj().T
            v = rng.normal(size=n) + 1j * rng.normal(size=n)
            ve = rng.normal(size=n) + 1j * rng.normal(size=n)
            m = quadratic_form_minorant(v, ve, Q)
            true = float(np.real(v.conj() @ Q @ v))
            assert m <= true + 1e-9 * max(1.0, abs(true))
            V = A @ A.conj().T
            W = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            Vexp = W @ W.conj().T
            maj = spectral_majorizer(V, Vexp)
            resid = float(np.trace(V).real - np.linalg.norm(V, 2))
            assert maj >= resid - 1e-9 * max(1.0, abs(resid))

    def projection():
        p = project_unit_modulus(np.array([0.5 * np.exp(1j * np.pi / 4), 0.0]))
        assert np.allclose(p.v, [np.exp(1j * np.pi / 4), 1.0])

    def tiny_instance():
        cfg = SystemConfig(L=2, K_per_cluster=(1, 1), N=2, J=2, seed=3)
        ch = synthesize_channels(cfg)
        nobf = baseline_no_irs(cfg, ch)
        orc = oracle_grid_search(cfg, ch, 2)
        dyn = solve_dynamic(cfg, ch, 2)
        ub = solve_upper_bound(cfg, ch)
        assert nobf.objective <= dyn.objective + 1e-9
        assert dyn.objective >= 0.95 * orc.objective
        assert orc.objective <= ub.objective * (1 + 1e-6)
        assert dyn.objective <= ub.objective * (1 + 1e-6)

    return [("formula spot checks", formulas), ("minorant/majorizer properties", minorants),
            ("unit-modulus projection", projection), ("tiny end-to-end ordering", tiny_instance)]


def cmd_selftest(args) -> int:
    ok = True
    for name, fn in _selftest_checks():
        try:
            fn()
            print(f"PASS  {name}")
        except Exception as exc:
            ok = False
            print(f"FAIL  {name}: {exc}")
    return 0 if ok else 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irs-aircomp",
                                 description="IRS-assisted AirComp simulator and solvers")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", help="output file path")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("simulate", help="run one algorithm on one synthesized scenario")
    common(p)
    p.add_argument("--algorithm", default="dynamic",
                   choices=[a for a in ALGORITHMS])
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="run a Monte Carlo sweep from a SweepSpec JSON")
    common(p)
    p.add_argument("--save-solutions", action="store_true",
                   help="persist per-row solutions for re-verification")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--timing", action="store_true",
                   help="emit measured wall-clock times (breaks byte-identical reruns)")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("oracle-check", help="certify the dynamic solver against the grid oracle")
    common(p)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--phase-levels", type=int, default=8)
    p.set_defaults(fn=cmd_oracle_check)

    p = sub.add_parser("selftest", help="fast property checks of the core math")
    p.set_defaults(fn=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
