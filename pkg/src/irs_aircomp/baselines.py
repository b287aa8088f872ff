"""Reference points for the solvers: a quantized-phase brute-force oracle,
random patterns, and the IRS-off baseline.

All three build the same solution shape as the solvers (each cluster
transmits once, full energy budget in its slot, times split in closed form)
so objectives are directly comparable through evaluate_solution.
"""
from __future__ import annotations

import itertools
import time

import numpy as np

from .channels import BeamPattern, ChannelSet, lifted_cluster
from .config import SystemConfig
from .rates import Allocation, Solution, evaluate_solution, proportional_time_allocation


def _closed_times(config: SystemConfig, c: np.ndarray):
    """Time split over clusters given c_l = E_max*Gamma_l/sigma_l^2.

    Zero-gain clusters get zero time. If the proportional rule is outside its
    rate-positivity region, fall back to t_l = c_l/e (every active log
    argument equals e, total stays under the frame).
    """
    t = np.zeros(config.L)
    flags = []
    pos = c > 0
    if not pos.all():
        flags.append("zero_gain_cluster")
    if pos.any():
        try:
            t[pos] = proportional_time_allocation(c[pos], config.T_t)
        except ValueError:
            flags.append("below_proportional_threshold")
            t[pos] = c[pos] / np.e
    return t, flags


def _value_at(config: SystemConfig, c: np.ndarray, t: np.ndarray) -> float:
    denom = config.rate_denominator
    val = 0.0
    for l in range(config.L):
        if t[l] > 1e-15 and c[l] > 0:
            arg = c[l] / t[l]
            if arg > 1.0:
                val += config.weights[l] * t[l] * np.log2(arg) / denom
    return float(val)


def _min_gains_grid(channels: ChannelSet, vbars: np.ndarray) -> np.ndarray:
    """Worst-device composite gain for every (cluster, candidate pattern)."""
    out = np.zeros((channels.L, vbars.shape[0]))
    for l in range(channels.L):
        q = lifted_cluster(channels, l)
        out[l] = (np.abs(vbars @ q.conj().T) ** 2).min(axis=1)
    return out


def _one_slot_solution(config, channels, patterns, slot_of, c, t, flags, diag):
    J = len(patterns)
    times = np.zeros((config.L, J))
    energies = np.zeros((config.L, J))
    times[np.arange(config.L), slot_of] = t
    energies[np.arange(config.L), slot_of] = config.E_max
    sol = Solution(patterns=list(patterns), allocation=Allocation(times=times, energies=energies),
                   association=[int(j) for j in slot_of])
    obj, rates = evaluate_solution(config, channels, sol)
    sol.objective = obj
    sol.per_cluster_rates = rates
    diag = dict(diag)
    diag["flags"] = flags
    sol.diagnostics = diag
    return sol


def _partitions_up_to(L: int, J: int):
    """All partitions of range(L) into at most J nonempty groups, emitted in
    restricted-growth order (deterministic)."""
    labels = np.zeros(L, dtype=int)

    def rec(i, maxlab):
        if i == L:
            blocks = [[] for _ in range(maxlab + 1)]
            for idx, lab in enumerate(labels):
                blocks[lab].append(idx)
            yield blocks
            return
        for lab in range(min(maxlab + 1, J - 1) + 1):
            labels[i] = lab
            yield from rec(i + 1, max(maxlab, lab))

    yield from rec(1, 0)


def oracle_grid_search(config: SystemConfig, channels: ChannelSet, J: int = None,
                       phase_levels: int = 8) -> Solution:
    """Brute force over cluster groupings and quantized group patterns.

    Every partition of the clusters into at most J groups is tried; each
    group picks the grid pattern (entries from the phase_levels-th roots of
    unity) maximizing the group's weighted noise-scaled min-gain sum, which
    for equal weights is exactly the best pattern for that grouping. Feasible
    by construction, so the value lower-bounds the continuous optimum.
    """
    t_start = time.perf_counter()
    if J is None:
        J = config.J
    if J > config.L:
        raise ValueError("need J <= L")
    Q, N = phase_levels, config.N
    parts = list(_partitions_up_to(config.L, J))
    if (Q ** N) * len(parts) > 1e7:
        raise ValueError("oracle grid too large (Q^N * partitions > 1e7); "
                         "reduce N or phase_levels")
    roots = np.exp(2j * np.pi * np.arange(Q) / Q)
    grid = np.array(list(itertools.product(roots, repeat=N))) if N else np.zeros((1, 0))
    vbars = np.concatenate([grid, np.ones((grid.shape[0], 1))], axis=1)
    ming = _min_gains_grid(channels, vbars)
    coef = np.array([config.weights[l] * config.E_max / config.noise_power[l]
                     for l in range(config.L)])
    best = None
    for blocks in parts:
        gam = np.zeros(config.L)
        choice = []
        for blk in blocks:
            score = coef[blk] @ ming[blk]
            p = int(np.argmax(score))
            choice.append(p)
            gam[blk] = ming[blk, p]
        c = np.array([config.E_max * gam[l] / config.noise_power[l] for l in range(config.L)])
        t, flags = _closed_times(config, c)
        val = _value_at(config, c, t)
        if best is None or val > best[0]:
            slot_of = np.zeros(config.L, dtype=int)
            for g, blk in enumerate(blocks):
                slot_of[blk] = g
            best = (val, [BeamPattern(v=grid[p]) for p in choice], slot_of, c, t, flags)
    val, patterns, slot_of, c, t, flags = best
    diag = {"partitions": len(parts), "grid_size": int(grid.shape[0]),
            "iterations": len(parts) * grid.shape[0],
            "wallclock_s": time.perf_counter() - t_start}
    return _one_slot_solution(config, channels, patterns, slot_of, c, t, flags, diag)


def baseline_random(config: SystemConfig, channels: ChannelSet, J: int = None,
                    draws: int = 1) -> Solution:
    """Uniform random phases, best of `draws` attempts.

    Clusters pick their best slot independently; with per-cluster objectives
    separable in the assignment this equals the exhaustive matching optimum.
    """
    t_start = time.perf_counter()
    if J is None:
        J = config.J
    if draws < 1:
        raise ValueError("draws must be >= 1")
    rng = np.random.default_rng([config.seed, 0xB4])
    best = None
    for _ in range(draws):
        grid = np.exp(2j * np.pi * rng.uniform(size=(J, config.N)))
        vbars = np.concatenate([grid, np.ones((J, 1))], axis=1)
        ming = _min_gains_grid(channels, vbars)
        cj = ming * (config.E_max / np.array(config.noise_power))[:, None]
        slot_of = np.argmax(cj, axis=1)
        c = cj[np.arange(config.L), slot_of]
        t, flags = _closed_times(config, c)
        val = _value_at(config, c, t)
        if best is None or val > best[0]:
            best = (val, [BeamPattern(v=g) for g in grid], slot_of, c, t, flags)
    val, patterns, slot_of, c, t, flags = best
    diag = {"draws": draws, "iterations": draws,
            "wallclock_s": time.perf_counter() - t_start}
    return _one_slot_solution(config, channels, patterns, slot_of, c, t, flags, diag)


def baseline_no_irs(config: SystemConfig, channels: ChannelSet) -> Solution:
    """Direct channels only; the IRS cascade is ignored entirely."""
    t_start = time.perf_counter()
    gam = np.array([float(np.min(np.abs(channels.direct[l]) ** 2)) for l in range(config.L)])
    c = np.array([config.E_max * gam[l] / config.noise_power[l] for l in range(config.L)])
    t, flags = _closed_times(config, c)
    sol = Solution(patterns=[],
                   allocation=Allocation(times=t[:, None],
                                         energies=np.full((config.L, 1), config.E_max)),
                   association=[0] * config.L)
    obj, rates = evaluate_solution(config, channels, sol)
    sol.objective = obj
    sol.per_cluster_rates = rates
    sol.diagnostics = {"flags": flags, "iterations": 0,
                       "wallclock_s": time.perf_counter() - t_start}
    return sol
