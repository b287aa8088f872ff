"""Computation-rate core: uniform-forcing transceiver, SNR, rate, closed-form
time allocation, and solution evaluation.

Every objective reported anywhere in the package is recomputed through
`evaluate_solution`, never taken from solver internals.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import BeamPattern, ChannelSet, min_gain
from .config import SystemConfig


@dataclass(frozen=True)
class TransceiverSetting:
    """Uniform-forcing transmit scalars: every device inverts its channel so
    all arrive at common power eta; the receiver scales by 1/sqrt(eta)."""

    eta: float
    powers: np.ndarray
    receive_scale: float


def uniform_forcing(gains, P0: float) -> TransceiverSetting:
    """Channel-inverting power control under per-device cap P0.

    eta = P0 * min(gains); the worst device transmits at exactly P0.
    """
    gains = np.asarray(gains, dtype=float)
    if P0 <= 0:
        raise ValueError("power cap must be positive")
    if gains.size == 0 or np.any(gains <= 0):
        raise ValueError("uniform forcing undefined for a zero channel gain")
    eta = P0 * float(gains.min())
    powers = eta / gains
    return TransceiverSetting(eta=eta, powers=powers, receive_scale=1.0 / np.sqrt(eta))


def effective_snr(energy: float, time: float, min_gain: float, noise: float) -> float:
    """energy * min_gain / (time * noise); the SNR of one cluster-slot."""
    if noise <= 0:
        raise ValueError("noise power must be positive")
    if time <= 0:
        raise ValueError("effective_snr needs time > 0; use volume_term for the t=0 limit")
    return energy * min_gain / (time * noise)


def computation_rate(snr: float, m_tilde: int, K_tilde: int) -> float:
    """Function values per channel use: max(0, log2(snr)) / (m~ + log2 K~)."""
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    if m_tilde < 1 or K_tilde < 2:
        raise ValueError("need m_tilde >= 1 and K_tilde >= 2")
    if snr <= 1.0:
        return 0.0
    return float(np.log2(snr) / (m_tilde + np.log2(K_tilde)))


def volume_term(time: float, S: float, noise: float, m_tilde: int, K_tilde: int) -> float:
    """t * computation_rate(S / (t * noise)), extended continuously to 0 at t=0.

    Jointly concave in (t, S) where the log argument is >= 1.
    """
    if time < 0 or S < 0:
        raise ValueError("time and S must be nonnegative")
    if time == 0.0:
        return 0.0
    return time * computation_rate(S / (time * noise), m_tilde, K_tilde)


def proportional_time_allocation(c, T: float):
    """Split T proportionally to the per-cluster constants c_l = E*Gamma_l/sigma^2.

    This is the stationary point of sum_l t_l log2(c_l/t_l): all log arguments
    equal sum(c)/T. Requires sum(c)/T > 1 so every cluster's rate is positive.
    """
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise ValueError("all c_l must be strictly positive")
    if T <= 0:
        raise ValueError("T must be positive")
    s = float(c.sum())
    if s / T <= 1.0:
        raise ValueError("operating point below rate-positivity threshold")
    return T * c / s


@dataclass
class Allocation:
    """Per-(cluster, pattern) time and energy shares, shapes (L, J)."""

    times: np.ndarray
    energies: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.energies = np.asarray(self.energies, dtype=float)
        if self.times.shape != self.energies.shape or self.times.ndim != 2:
            raise ValueError("times and energies must share an (L, J) shape")

    def check(self, config: SystemConfig):
        problems = []
        if self.times.shape[0] != config.L:
            problems.append("allocation row count != L")
        if np.any(self.times < -1e-12) or np.any(self.energies < -1e-15):
            problems.append("negative time or energy entry")
        if self.times.sum() > config.T_t + 1e-9:
            problems.append(f"total time {self.times.sum():.3e} exceeds frame {config.T_t}")
        over = np.where(self.energies.sum(axis=1) > config.E_max + 1e-12)[0]
        if over.size:
            problems.append(f"energy budget exceeded for clusters {over.tolist()}")
        return problems


@dataclass
class Solution:
    """Patterns + allocation + association + rates, with solver diagnostics.

    An empty `patterns` list means the IRS is unused (direct channels only);
    the allocation then has a single column.
    """

    patterns: list
    allocation: Allocation
    association: list
    per_cluster_rates: np.ndarray = None
    objective: float = None
    diagnostics: dict = field(default_factory=dict)


def _slot_gains(config: SystemConfig, channels: ChannelSet, patterns) -> np.ndarray:
    """Min composite gain per (cluster, pattern); direct-only when no patterns."""
    L = config.L
    if len(patterns) == 0:
        g = np.array([float(np.min(np.abs(channels.direct[l]) ** 2)) for l in range(L)])
        return g[:, None]
    out = np.zeros((L, len(patterns)))
    for j, p in enumerate(patterns):
        for l in range(L):
            out[l, j] = min_gain(channels, l, p).value
    return out


def evaluate_solution(config: SystemConfig, channels: ChannelSet, solution: Solution):
    """Recompute (objective, per-cluster rates) from scratch.

    Gains, SNRs and rates are rebuilt from the channels and the stored
    patterns/allocation; nothing is trusted from the solver. Constraint
    violations beyond the stated tolerances raise with the full list.
    """
    alloc = solution.allocation
    problems = alloc.check(config)
    J = alloc.times.shape[1]
    if len(solution.patterns) not in (0, J):
        problems.append("pattern count does not match allocation columns")
    for p in solution.patterns:
        if p.v.shape[0] != config.N:
            problems.append("pattern length != N")
            break
    if problems:
        raise ValueError("invalid solution: " + "; ".join(problems))

    gains = _slot_gains(config, channels, solution.patterns)
    if len(solution.patterns) == 0 and J != 1:
        raise ValueError("invalid solution: direct-only solutions use a single column")

    L = config.L
    rates = np.zeros((L, J))
    objective = 0.0
    cluster_rate = np.zeros(L)
    for l in range(L):
        for j in range(J):
            t = alloc.times[l, j]
            e = alloc.energies[l, j]
            if t <= 0.0:
                continue
            snr = effective_snr(e, t, gains[l, j], config.noise_power[l])
            rates[l, j] = computation_rate(snr, config.m_tilde, config.K_tilde)
            objective += config.weights[l] * t * rates[l, j]
        tl = alloc.times[l].sum()
        if tl > 0:
            cluster_rate[l] = float((alloc.times[l] * rates[l]).sum() / tl)
    return float(objective), cluster_rate


def verify_solution(config: SystemConfig, channels: ChannelSet, solution: Solution,
                    rel: float = 1e-6) -> float:
    """Assert the stored objective matches a from-scratch evaluation."""
    obj, _ = evaluate_solution(config, channels, solution)
    stored = solution.objective
    if stored is None:
        raise ValueError("solution has no stored objective")
    if abs(obj - stored) > rel * max(1.0, abs(obj)):
        raise AssertionError(f"stored objective {stored} != recomputed {obj}")
    return obj
