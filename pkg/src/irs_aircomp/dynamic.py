"""Dynamic pattern optimization: J IRS reconfigurations shared among L
clusters within one frame, plus the sorted low-complexity variant.

The joint problem over times, energies, per-slot gains and patterns is
attacked with successive convex approximation: the product e*gamma behind
each slot's SNR is replaced by its concave square-difference minorant, and
each quadratic channel-gain form by its affine minorant at the expansion
point. Patterns keep a relaxed modulus (|v_n| <= 1) during the iterations
and are projected to unit modulus at the end; a closed-form re-solve of the
time/energy split at fixed patterns absorbs the projection loss.

The SCA loop tracks the best fully-feasible checkpoint (projected patterns
plus re-optimized times/energies) seen so far and returns that, so the
reported objective never degrades below the initialization.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .adaptive import _solve_cached
from .barrier import LN2
from .channels import BeamPattern, ChannelSet, lifted_cluster
from .config import SystemConfig
from .rates import Allocation, Solution, evaluate_solution


def project_unit_modulus(v_relaxed: np.ndarray) -> BeamPattern:
    """Keep only the phases; zero entries map deterministically to 1."""
    v = np.asarray(v_relaxed, dtype=complex).reshape(-1)
    v = np.where(np.abs(v) < 1e-15, 1.0 + 0j, np.exp(1j * np.angle(v)))
    return BeamPattern(v=v)


def bilinear_minorant(e, gamma, e_exp, gamma_exp):
    """Concave lower bound on e*gamma, tight at the expansion point.

    Writes e*gamma = (e+gamma)^2/2 - (e^2+gamma^2)/2 and linearizes the first
    square; the result under-estimates e*gamma everywhere.
    """
    a = e_exp + gamma_exp
    return (a * a + 2.0 * a * (e + gamma - e_exp - gamma_exp) - (e * e + gamma * gamma)) / 2.0


def quadratic_form_minorant(v_bar, v_bar_exp, Q) -> float:
    """Affine lower bound on v^H Q v for PSD Q, tight at the expansion."""
    Q = np.asarray(Q)
    if np.max(np.abs(Q - Q.conj().T)) > 1e-9:
        raise ValueError("Q must be Hermitian")
    wmin = float(np.linalg.eigvalsh(Q)[0])
    if wmin < -1e-9 * max(float(np.linalg.norm(Q, 2)), 1.0):
        raise ValueError("Q must be positive semidefinite")
    v = np.asarray(v_bar, dtype=complex)
    ve = np.asarray(v_bar_exp, dtype=complex)
    return float(2.0 * np.real(ve.conj() @ Q @ v) - np.real(ve.conj() @ Q @ ve))


@dataclass
class DynamicState:
    """SCA iterate, physical units. patterns_relaxed rows are the lifted
    vectors v_bar (length N+1, last entry 1, |entries| <= 1)."""

    times: np.ndarray
    energies: np.ndarray
    gammas: np.ndarray
    slacks: np.ndarray
    patterns_relaxed: np.ndarray
    expansion: dict = field(default_factory=dict)


# ---- cached cvxpy programs, keyed by everything fixed at build time ----

_stage1_cache: dict = {}
_shared_cache: dict = {}
_dyn_cache: dict = {}


def _gains_of(vbar: np.ndarray, q_rows: np.ndarray) -> np.ndarray:
    return np.abs(q_rows @ vbar.conj()) ** 2


def _minorant_rows(q_rows: np.ndarray, vbar: np.ndarray):
    """Affine coefficients of the gain minorants for all devices of one
    cluster: gain(v) >= 2 Re{W v} + off with v the free N phases."""
    inner = q_rows.conj() @ vbar            # q_k^H v_bar
    u = q_rows * inner[:, None]             # rows (q_k q_k^H) v_bar
    W = np.conj(u[:, :-1])
    off = 2.0 * np.real(u[:, -1]) - np.abs(inner) ** 2
    return W, off


class _Stage1Solver:
    """Single-cluster max-min-gain with relaxed modulus, one SCA iteration
    per solve. Reused across clusters of the same size."""

    def __init__(self, N: int, K: int):
        import cvxpy as cp

        self.N, self.K = N, K
        self.v = cp.Variable(N, complex=True)
        self.gam = cp.Variable()
        self.W = cp.Parameter((K, N), complex=True)
        self.off = cp.Parameter(K)
        cons = [2 * cp.real(self.W @ self.v) + self.off >= self.gam,
                cp.abs(self.v) <= 1]
        self.prob = cp.Problem(cp.Maximize(self.gam), cons)

    def run(self, q_rows: np.ndarray, vb0: np.ndarray, iters: int = 30, tol: float = 1e-4):
        vb = vb0.copy()
        prev = None
        nit = 0
        for nit in range(1, iters + 1):
            W, off = _minorant_rows(q_rows, vb)
            self.W.value = W
            self.off.value = off
            _solve_cached(self.prob, solver="CLARABEL")
            vb = np.concatenate([np.asarray(self.v.value), [1.0]])
            cur = float(self.gam.value)
            if prev is not None and abs(cur - prev) <= tol * max(abs(prev), 1e-12):
                break
            prev = cur
        return vb, nit

    def run_multi(self, q_rows: np.ndarray, rng, n_random: int = 2):
        """Device-aligned starts plus a few random ones; best projected
        min-gain wins."""
        K, n = q_rows.shape
        inits = []
        for k in range(K):
            q = q_rows[k]
            ph_d = np.angle(q[-1]) if abs(q[-1]) > 0 else 0.0
            inits.append(np.concatenate([np.exp(1j * (ph_d - np.angle(q[:-1]))), [1.0]]))
        for _ in range(n_random):
            inits.append(np.concatenate([np.exp(2j * np.pi * rng.uniform(size=n - 1)), [1.0]]))
        best = None
        tot = 0
        for vb0 in inits:
            vb, nit = self.run(q_rows, vb0)
            tot += nit
            proj = np.concatenate([project_unit_modulus(vb[:-1]).v, [1.0]])
            g = float(_gains_of(proj, q_rows).min())
            if best is None or g > best[0]:
                best = (g, proj, vb)
        return best[1], best[2], tot


def _stage1(N: int, K: int) -> _Stage1Solver:
    key = (N, K)
    if key not in _stage1_cache:
        _stage1_cache[key] = _Stage1Solver(N, K)
    return _stage1_cache[key]


class _SharedPatternSolver:
    """One pattern serving several clusters: maximize a weighted sum of the
    cluster min-gains, relaxed modulus, SCA on the gain minorants."""

    def __init__(self, N: int, Ks: tuple):
        import cvxpy as cp

        self.N, self.Ks = N, Ks
        rows = sum(Ks)
        Lsh = len(Ks)
        R = np.zeros((rows, Lsh))
        r0 = 0
        for i, K in enumerate(Ks):
            R[r0:r0 + K, i] = 1.0
            r0 += K
        self.v = cp.Variable(N, complex=True)
        self.gam = cp.Variable(Lsh, nonneg=True)
        self.W = cp.Parameter((rows, N), complex=True)
        self.off = cp.Parameter(rows)
        self.coef = cp.Parameter(Lsh, nonneg=True)
        cons = [2 * cp.real(self.W @ self.v) + self.off >= R @ self.gam,
                cp.abs(self.v) <= 1]
        self.prob = cp.Problem(cp.Maximize(self.coef @ self.gam), cons)

    def run(self, q_list, coef, vb0, iters: int = 30, tol: float = 1e-4):
        vb = vb0.copy()
        self.coef.value = np.asarray(coef, float)
        prev = None
        nit = 0
        for nit in range(1, iters + 1):
            W = np.zeros((sum(self.Ks), self.N), complex)
            off = np.zeros(sum(self.Ks))
            r0 = 0
            for q_rows in q_list:
                Wl, offl = _minorant_rows(q_rows, vb)
                W[r0:r0 + q_rows.shape[0]] = Wl
                off[r0:r0 + q_rows.shape[0]] = offl
                r0 += q_rows.shape[0]
            self.W.value = W
            self.off.value = off
            _solve_cached(self.prob, solver="CLARABEL")
            vb = np.concatenate([np.asarray(self.v.value), [1.0]])
            cur = float(self.prob.value)
            if prev is not None and abs(cur - prev) <= tol * max(abs(prev), 1e-12):
                break
            prev = cur
        return vb, nit


def _shared_solver(N: int, Ks: tuple) -> _SharedPatternSolver:
    key = (N, Ks)
    if key not in _shared_cache:
        _shared_cache[key] = _SharedPatternSolver(N, Ks)
    return _shared_cache[key]


class _DynamicProblem:
    """The convex SCA subproblem over (t, e, gamma, S, v), parameterized so
    repeated solves reuse the compiled form."""

    def __init__(self, L: int, Ks: tuple, N: int, J: int, weights: tuple,
                 T_over_denom: float):
        import cvxpy as cp

        self.L, self.Ks, self.N, self.J = L, Ks, N, J
        rows = sum(Ks)
        R = np.zeros((rows, L))
        r0 = 0
        for l, K in enumerate(Ks):
            R[r0:r0 + K, l] = 1.0
            r0 += K
        self.t = cp.Variable((L, J), nonneg=True)
        self.e = cp.Variable((L, J), nonneg=True)
        self.gam = cp.Variable((L, J), nonneg=True)
        self.S = cp.Variable((L, J), nonneg=True)
        self.v = cp.Variable((J, N), complex=True)
        self.Wp = [cp.Parameter((rows, N), complex=True) for _ in range(J)]
        self.offp = cp.Parameter((rows, J))
        self.ap = cp.Parameter((L, J), nonneg=True)    # e_exp + gamma_exp
        self.bp = cp.Parameter((L, J), nonneg=True)    # (e_exp + gamma_exp)^2 / 2
        self.logC = cp.Parameter(L)                    # log of per-cluster SNR constant
        w = np.asarray(weights, float)
        a = T_over_denom / LN2
        obj = a * cp.sum(cp.multiply(w, cp.multiply(self.logC, cp.sum(self.t, axis=1))))
        obj -= a * cp.sum(cp.multiply(w, cp.sum(cp.rel_entr(self.t, self.S), axis=1)))
        cons = [cp.sum(self.t) <= 1.0, cp.sum(self.e, axis=1) <= 1.0]
        cons.append(self.S + (cp.square(self.e) + cp.square(self.gam)) / 2
                    <= cp.multiply(self.ap, self.e + self.gam) - self.bp)
        for j in range(J):
            lhs = 2 * cp.real(self.Wp[j] @ self.v[j]) + self.offp[:, j]
            cons.append(lhs >= R @ self.gam[:, j])
        cons.append(cp.abs(self.v) <= 1)
        self.prob = cp.Problem(cp.Maximize(obj), cons)

    def load(self, qh, vbs, e_exp, gam_exp, logC):
        a = e_exp + gam_exp
        self.ap.value = a
        self.bp.value = a * a / 2.0
        self.logC.value = logC
        rows = sum(self.Ks)
        off = np.zeros((rows, self.J))
        for j in range(self.J):
            W = np.zeros((rows, self.N), complex)
            r0 = 0
            for l in range(self.L):
                Wl, offl = _minorant_rows(qh[l], vbs[j])
                K = self.Ks[l]
                W[r0:r0 + K] = Wl
                off[r0:r0 + K, j] = offl
                r0 += K
            self.Wp[j].value = W
        self.offp.value = off

    def solve(self):
        import cvxpy as cp

        try:
            _solve_cached(self.prob, solver="CLARABEL")
        except cp.SolverError:
            return None
        if self.prob.status not in ("optimal", "optimal_inaccurate") or \
                self.prob.value is None or not np.isfinite(self.prob.value):
            return None
        return {
            "objective": float(self.prob.value),
            "t": np.maximum(np.asarray(self.t.value), 0.0),
            "e": np.maximum(np.asarray(self.e.value), 0.0),
            "gam": np.maximum(np.asarray(self.gam.value), 0.0),
            "S": np.maximum(np.asarray(self.S.value), 0.0),
            "v": np.concatenate([np.asarray(self.v.value), np.ones((self.J, 1))], axis=1),
        }


def _dyn_problem(config: SystemConfig, J: int) -> _DynamicProblem:
    key = (config.L, config.K_per_cluster, config.N, J, config.weights,
           round(config.T_t / config.rate_denominator, 15))
    if key not in _dyn_cache:
        _dyn_cache[key] = _DynamicProblem(config.L, config.K_per_cluster, config.N, J,
                                          config.weights,
                                          config.T_t / config.rate_denominator)
    return _dyn_cache[key]


class _DynamicWork:
    """Per-instance scaled channel data and closed-form helpers."""

    def __init__(self, config: SystemConfig, channels: ChannelSet, J: int):
        self.config = config
        self.J = J
        self.L = config.L
        self.qs = [lifted_cluster(channels, l) for l in range(self.L)]
        self.g0 = max(float(np.max(np.linalg.norm(q, axis=1) ** 2)) for q in self.qs)
        if self.g0 <= 0:
            raise ValueError("all channels are identically zero")
        self.qh = [q / np.sqrt(self.g0) for q in self.qs]
        self.Cvec = np.array([config.E_max * self.g0 / (config.T_t * config.noise_power[l])
                              for l in range(self.L)])
        self.logC = np.log(self.Cvec)
        w = np.asarray(config.weights, float)
        self.w = w
        self.uniform_w = bool(np.all(w == w[0]) and w[0] > 0)

    def true_gains(self, vbs: np.ndarray) -> np.ndarray:
        g = np.zeros((self.L, self.J))
        for l in range(self.L):
            for j in range(self.J):
                g[l, j] = float(_gains_of(vbs[j], self.qh[l]).min())
        return g

    def objective_true(self, t: np.ndarray, S: np.ndarray) -> float:
        """Clamped weighted rate volume at normalized (t, S)."""
        cfg = self.config
        a = cfg.T_t / cfg.rate_denominator
        val = 0.0
        for l in range(self.L):
            for j in range(self.J):
                if t[l, j] > 1e-15 and S[l, j] > 0:
                    arg = self.Cvec[l] * S[l, j] / t[l, j]
                    if arg > 1.0:
                        val += self.w[l] * a * t[l, j] * np.log2(arg)
        return val

    def polish(self, gains: np.ndarray):
        """Exact optimizer of the time/energy split at fixed patterns.

        Within a cluster the optimal energy profile is proportional to the
        time profile, which makes the cluster's contribution linear in its
        per-slot times; all its time therefore lands on the best-gain slot.
        Across clusters the split is proportional (equal weights) or solved
        as a tiny concave program (general weights).
        """
        cfg = self.config
        L, J = self.L, self.J
        jstar = np.argmax(gains, axis=1)
        e = np.zeros((L, J))
        e[np.arange(L), jstar] = 1.0
        chat = self.Cvec * gains[np.arange(L), jstar]
        t = np.zeros((L, J))
        a = cfg.T_t / cfg.rate_denominator
        s = float(chat.sum())
        if s <= 0:
            return t, e, 0.0, jstar
        if self.uniform_w:
            if s >= np.e:
                trow = chat / s
                val = self.w[0] * a * np.log2(s)
            else:
                trow = chat / np.e
                val = self.w[0] * a * (s / np.e) / LN2
        else:
            from .adaptive import _weighted_time_split

            mask = chat > 1.0
            trow = np.zeros(L)
            if mask.any() and chat[mask].sum() > np.e:
                trow[mask] = _weighted_time_split(chat[mask], 1.0, self.w[mask])
            else:
                trow = chat / max(s, np.e)
            val = 0.0
            for l in range(L):
                if trow[l] > 1e-15 and chat[l] > 0 and chat[l] / trow[l] > 1.0:
                    val += self.w[l] * a * trow[l] * np.log2(chat[l] / trow[l])
        t[np.arange(L), jstar] = trow
        return t, e, float(val), jstar

    def checkpoint(self, vbs: np.ndarray) -> dict:
        """Project patterns, recompute true gains, re-split time/energy."""
        proj = np.stack([np.concatenate([project_unit_modulus(vb[:-1]).v, [1.0]])
                         for vb in vbs])
        gains = self.true_gains(proj)
        t, e, val, jstar = self.polish(gains)
        return {"objective": val, "patterns": proj, "t": t, "e": e,
                "gains": gains, "assoc": jstar}


def dynamic_state_from_solution(config: SystemConfig, channels: ChannelSet,
                                solution: Solution, J: int = None) -> DynamicState:
    """Build a feasible SCA state (expansion at itself) from a Solution."""
    if J is None:
        J = len(solution.patterns)
    work = _DynamicWork(config, channels, J)
    vbs = np.stack([np.concatenate([p.v, [1.0]]) for p in solution.patterns])
    gains = work.true_gains(vbs) * work.g0
    times = solution.allocation.times.copy()
    energies = solution.allocation.energies.copy()
    slacks = energies * gains
    return DynamicState(times=times, energies=energies, gammas=gains, slacks=slacks,
                        patterns_relaxed=vbs,
                        expansion={"e": energies.copy(), "gamma": gains.copy(),
                                   "v": vbs.copy()})


def dynamic_subproblem(config: SystemConfig, channels: ChannelSet, state: DynamicState):
    """One convex SCA solve at the state's expansion point.

    Returns (updated DynamicState, surrogate objective). An infeasible or
    failed solve is retried once from a backed-off interior expansion.
    """
    J = state.patterns_relaxed.shape[0]
    work = _DynamicWork(config, channels, J)
    prob = _dyn_problem(config, J)
    e_exp = state.expansion["e"] / config.E_max
    gam_exp = state.expansion["gamma"] / work.g0
    v_exp = state.expansion["v"]
    prob.load(work.qh, v_exp, e_exp, gam_exp, work.logC)
    out = prob.solve()
    if out is None:
        # back off to a strictly interior expansion and retry once
        e_exp = np.full_like(e_exp, 0.5 / J)
        gam_exp = 0.5 * work.true_gains(v_exp)
        prob.load(work.qh, v_exp, e_exp, gam_exp, work.logC)
        out = prob.solve()
        if out is None:
            raise RuntimeError("dynamic subproblem failed twice (conic solver)")
    new = DynamicState(
        times=out["t"] * config.T_t,
        energies=out["e"] * config.E_max,
        gammas=out["gam"] * work.g0,
        slacks=out["S"] * config.E_max * work.g0,
        patterns_relaxed=out["v"],
        expansion=state.expansion,
    )
    return new, out["objective"]


def extract_association(solution: Solution, T_t: float = None):
    """Remark-style readout: each cluster keeps its largest-time slot.

    Rows whose every entry is below 1e-6*T_t are inactive; rows with more
    than one active slot are flagged split (diagnostic only).
    """
    t = solution.allocation.times
    if T_t is None:
        T_t = float(t.sum())
    thr = 1e-6 * T_t
    assoc = []
    flags = {"split": [], "inactive": []}
    for l in range(t.shape[0]):
        row = np.where(t[l] >= thr, t[l], 0.0)
        if not row.any():
            assoc.append(-1)
            flags["inactive"].append(l)
            continue
        assoc.append(int(np.argmax(row)))
        if np.count_nonzero(row) > 1:
            flags["split"].append(l)
    return assoc, flags


def _stage1_patterns(config: SystemConfig, channels: ChannelSet, work_qh, rng):
    """Relaxed-modulus per-cluster optimization for every cluster; returns
    projected lifted patterns, their standalone min-gains, iteration count."""
    pats, gains, iters = [], [], 0
    for l in range(config.L):
        solver = _stage1(config.N, config.K_per_cluster[l])
        proj, relaxed, nit = solver.run_multi(work_qh[l], rng)
        pats.append(proj)
        gains.append(float(_gains_of(proj, work_qh[l]).min()))
        iters += nit
    return pats, np.asarray(gains), iters


def _standalone_order(config: SystemConfig, gains_scaled: np.ndarray) -> np.ndarray:
    """Clusters sorted by standalone single-cluster rate, descending, ties by
    lower index. With proportional time the rate orders like the per-cluster
    SNR constant, weighted by noise."""
    keys = gains_scaled * np.array([1.0 / config.noise_power[l] for l in range(config.L)])
    return np.argsort(-keys, kind="stable")


def _finish_dynamic(config, channels, work, best, diag, t_start) -> Solution:
    L, J = work.L, work.J
    patterns = [BeamPattern(v=vb[:-1]) for vb in best["patterns"]]
    alloc = Allocation(times=best["t"] * config.T_t, energies=best["e"] * config.E_max)
    sol = Solution(patterns=patterns, allocation=alloc, association=None)
    obj, rates = evaluate_solution(config, channels, sol)
    sol.objective = obj
    sol.per_cluster_rates = rates
    assoc, flags = extract_association(sol, config.T_t)
    sol.association = assoc
    diag["association_flags"] = flags
    diag["wallclock_s"] = time.perf_counter() - t_start
    sol.diagnostics = diag
    return sol


def solve_dynamic(config: SystemConfig, channels: ChannelSet, J: int = None,
                  init: Solution = None, max_iters: int = 50, rel_tol: float = 1e-4) -> Solution:
    """Shared-pattern solver for a budget of J reconfigurations.

    Initial patterns come from the per-cluster stage of the J best standalone
    clusters (or from `init`); the SCA loop runs twice, restarting the second
    phase from the best projected checkpoint, and the best checkpoint overall
    is returned. Non-improving subproblem steps are blended back toward the
    expansion point up to 5 times before the phase stops.
    """
    t_start = time.perf_counter()
    if J is None:
        J = config.J
    if not (1 <= J <= config.L):
        raise ValueError("need 1 <= J <= L")
    if config.N == 0:
        from .adaptive import solve_cluster_adaptive

        return solve_cluster_adaptive(config, channels)
    work = _DynamicWork(config, channels, J)
    rng = np.random.default_rng([config.seed, 0x51A9E])
    diag = {"stage1_iterations": 0}
    if init is not None:
        if len(init.patterns) != J:
            raise ValueError("init solution must carry exactly J patterns")
        vbs = np.stack([np.concatenate([p.v, [1.0]]) for p in init.patterns])
    else:
        pats, s1_gains, s1_iters = _stage1_patterns(config, channels, work.qh, rng)
        diag["stage1_iterations"] = s1_iters
        order = _standalone_order(config, s1_gains)
        vbs = np.stack([pats[order[j % config.L]] for j in range(J)])

    prob = _dyn_problem(config, J)
    e = np.full((work.L, J), 1.0 / J)
    ghat = work.true_gains(vbs)
    best = work.checkpoint(vbs)
    best_phase = "init"
    traces = []
    nrej = tot_it = 0
    for phase in range(2):
        prev = None
        retries = 0
        trace = []
        for _ in range(max_iters):
            tot_it += 1
            prob.load(work.qh, vbs, e, ghat, work.logC)
            out = prob.solve()
            failed = out is None
            if failed or (prev is not None and out["objective"] < prev - 5e-9):
                nrej += 1
                retries += 1
                if retries > 5:
                    break
                if not failed:
                    # blend the rejected candidate toward the expansion point
                    beta = 0.5 ** retries
                    e = e + beta * (out["e"] - e)
                    ghat = ghat + beta * (out["gam"] - ghat)
                    vbs = vbs + beta * (out["v"] - vbs)
                else:
                    e = 0.9 * e + 0.1 / J
                    ghat = 0.9 * ghat
                continue
            retries = 0
            e, ghat, vbs = out["e"], out["gam"], out["v"]
            cur = out["objective"]
            trace.append(cur)
            if prev is not None and abs(cur - prev) <= rel_tol * max(abs(prev), 1e-12):
                prev = cur
                break
            prev = cur
        traces.append(trace)
        ck = work.checkpoint(vbs)
        if ck["objective"] > best["objective"]:
            best = ck
            best_phase = f"phase{phase + 1}"
        # second phase restarts from the projected, re-split state
        vbs = best["patterns"].copy()
        e = best["e"].copy()
        ghat = best["gains"].copy()
    diag.update({"iterations": tot_it, "rejections": nrej, "trace": traces,
                 "best_checkpoint": best_phase})
    return _finish_dynamic(config, channels, work, best, diag, t_start)


def solve_low_complexity(config: SystemConfig, channels: ChannelSet, J: int = None) -> Solution:
    """Sorted-assignment variant: the J-1 best standalone clusters keep their
    dedicated stage-1 patterns, the remaining clusters share one pattern that
    is optimized for their joint min-gains; times follow in closed form with
    the full energy budget in each cluster's single slot.
    """
    t_start = time.perf_counter()
    if J is None:
        J = config.J
    if not (1 <= J <= config.L):
        raise ValueError("need 1 <= J <= L")
    if config.N == 0:
        from .adaptive import solve_cluster_adaptive

        return solve_cluster_adaptive(config, channels)
    work = _DynamicWork(config, channels, J)
    rng = np.random.default_rng([config.seed, 0x51A9E])
    pats, s1_gains, s1_iters = _stage1_patterns(config, channels, work.qh, rng)
    order = _standalone_order(config, s1_gains)
    shared = order[J - 1:]
    stage3_iters = 0
    if len(shared) == 1:
        theta = pats[shared[0]]
    else:
        solver = _shared_solver(config.N, tuple(config.K_per_cluster[l] for l in shared))
        coef = np.array([config.weights[l] / config.noise_power[l] for l in shared])
        coef = coef / coef.max()
        theta, stage3_iters = solver.run([work.qh[l] for l in shared], coef,
                                         pats[order[J - 1]].copy())
        theta = np.concatenate([project_unit_modulus(theta[:-1]).v, [1.0]])
    slot_pats = [pats[order[r]] for r in range(J - 1)] + [theta]
    slot_of = np.empty(config.L, dtype=int)
    for r, l in enumerate(order):
        slot_of[l] = r if r < J - 1 else J - 1
    gains = np.zeros((config.L, J))
    for l in range(config.L):
        for j in range(J):
            gains[l, j] = float(_gains_of(slot_pats[j], work.qh[l]).min())
    # energy and time only on each cluster's own slot
    masked = np.full((config.L, J), -np.inf)
    masked[np.arange(config.L), slot_of] = gains[np.arange(config.L), slot_of]
    t, e, val, jstar = work.polish(np.where(np.isfinite(masked), masked, 0.0))
    patterns = [BeamPattern(v=vb[:-1]) for vb in slot_pats]
    alloc = Allocation(times=t * config.T_t, energies=e * config.E_max)
    sol = Solution(patterns=patterns, allocation=alloc, association=None)
    obj, rates = evaluate_solution(config, channels, sol)
    sol.objective = obj
    sol.per_cluster_rates = rates
    assoc, flags = extract_association(sol, config.T_t)
    sol.association = assoc
    sol.diagnostics = {"stage1_iterations": s1_iters, "stage3_iterations": stage3_iters,
                       "iterations": s1_iters + stage3_iters,
                       "association_flags": flags, "order": order.tolist(),
                       "wallclock_s": time.perf_counter() - t_start}
    return sol
