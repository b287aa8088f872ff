import numpy as np
import pytest

from irs_aircomp import (BeamPattern, PenaltyState, Solution, Allocation, SystemConfig,
                         baseline_no_irs, effective_snr, evaluate_solution, extract_pattern,
                         min_gain, penalty_subproblem, solve_adaptive_decomposed,
                         solve_cluster_adaptive, solve_upper_bound, spectral_majorizer,
                         synthesize_channels, uniform_forcing)
from irs_aircomp.adaptive import _AdaptiveWork, rank_one_residual
from conftest import make_channels


def _random_hermitian_psd(rng, n, scale=1.0):
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (B @ B.conj().T)


class TestSpectralMajorizer:
    def test_tight_at_expansion(self):
        V = np.diag([2.0, 1.0]).astype(complex)
        assert spectral_majorizer(V, V) == pytest.approx(1.0)

    def test_upper_bounds_elsewhere(self):
        V = np.diag([1.0, 2.0]).astype(complex)
        V_exp = np.diag([2.0, 1.0]).astype(complex)
        assert spectral_majorizer(V, V_exp) == pytest.approx(2.0)

    def test_identity(self):
        I = np.eye(2, dtype=complex)
        assert spectral_majorizer(I, I) == pytest.approx(1.0)

    def test_majorization_property(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 5))
            V = _random_hermitian_psd(rng, n)
            V_exp = _random_hermitian_psd(rng, n)
            true_gap = np.real(np.trace(V)) - np.linalg.norm(V, 2)
            assert spectral_majorizer(V, V_exp) >= true_gap - 1e-10
            tight = np.real(np.trace(V_exp)) - np.linalg.norm(V_exp, 2)
            assert spectral_majorizer(V_exp, V_exp) == pytest.approx(tight, abs=1e-10)

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            spectral_majorizer(np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(2))


class TestExtractPattern:
    def test_rank_one_round_trip(self):
        vb = np.array([np.exp(1j * np.pi / 3), 1.0])
        p = extract_pattern(np.outer(vb, vb.conj()))
        assert np.allclose(p.v, [np.exp(1j * np.pi / 3)], atol=1e-9)

    def test_residual_measures_rank_gap(self):
        vb = np.array([1.0, 1j, -1.0])
        assert rank_one_residual(np.outer(vb, vb.conj())) == pytest.approx(0.0, abs=1e-12)
        assert rank_one_residual(np.eye(2, dtype=complex)) == pytest.approx(0.5)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            extract_pattern(-np.eye(2, dtype=complex))

    def test_stable_under_small_perturbation(self, rng):
        vb = np.exp(1j * rng.uniform(0, 2 * np.pi, 4))
        V = np.outer(vb, vb.conj())
        noisy = V + 1e-8 * _random_hermitian_psd(rng, 4)
        clean = extract_pattern(V)
        p = extract_pattern(0.5 * (noisy + noisy.conj().T))
        assert np.allclose(p.v, clean.v, atol=1e-6)
        assert np.allclose(np.abs(p.v), 1.0)


class TestTransceiverConsistency:
    def test_snr_equals_arrival_power_over_noise(self, rng):
        # uniform forcing with cap E/t makes eta/noise the slot SNR
        for _ in range(50):
            gains = rng.uniform(0.1, 5, size=4)
            e, t, noise = rng.uniform(0.001, 0.01), rng.uniform(0.01, 0.1), 1e-11
            tc = uniform_forcing(gains, e / t)
            assert effective_snr(e, t, gains.min(), noise) == pytest.approx(tc.eta / noise)
            k = int(np.argmin(gains))
            assert t * tc.powers[k] == pytest.approx(e)
            assert np.all(t * tc.powers <= e * (1 + 1e-12))


def _small_instance(seed=3):
    cfg = SystemConfig(L=2, K_per_cluster=(1, 1), N=2, J=2, seed=seed)
    return cfg, synthesize_channels(cfg)


class TestPenaltySubproblem:
    def test_direct_only_when_no_irs_elements(self):
        cfg = SystemConfig(L=2, K_per_cluster=(1, 1), N=0, J=2, seed=0)
        ch = synthesize_channels(cfg)
        state, surr = penalty_subproblem(cfg, ch, PenaltyState(
            V=[], Gamma=np.zeros(2), times=np.zeros(2), rho=1.0))
        assert state.V == [] and surr >= 0
        direct = np.array([np.min(np.abs(ch.direct[l]) ** 2) for l in range(2)])
        assert np.allclose(state.Gamma, direct)

    def test_monotone_ascent_step(self):
        cfg, ch = _small_instance()
        work = _AdaptiveWork(cfg, ch)
        Vs = work.init_V()
        Gam_sc = np.array([work.scaled_gains(l, Vs[l]).min() for l in range(2)])
        t0 = work.time_split(Gam_sc)
        inv2rho = 0.05 * work.rate_part(t0, Gam_sc) / (work.L * work.n)
        state = PenaltyState(V=Vs, Gamma=Gam_sc * work.g0, times=t0 * cfg.T_t,
                             rho=1.0 / (2 * inv2rho))
        pold = work.rate_part(t0, Gam_sc) - work.penalty_true(Vs, inv2rho)
        new, surrogate = penalty_subproblem(cfg, ch, state)
        assert surrogate >= pold - 1e-9
        Gam_new = new.Gamma / work.g0
        t_new = new.times / cfg.T_t
        pnew = work.rate_part(t_new, Gam_new) - work.penalty_true(new.V, inv2rho)
        assert pnew >= surrogate - 1e-9

    def test_state_invariants(self):
        cfg, ch = _small_instance()
        work = _AdaptiveWork(cfg, ch)
        Vs = work.init_V()
        Gam_sc = np.array([work.scaled_gains(l, Vs[l]).min() for l in range(2)])
        state = PenaltyState(V=Vs, Gamma=Gam_sc * work.g0,
                             times=work.time_split(Gam_sc) * cfg.T_t, rho=10.0)
        new, _ = penalty_subproblem(cfg, ch, state)
        for V in new.V:
            assert np.max(np.abs(np.diag(V) - 1.0)) < 1e-6
            assert np.min(np.linalg.eigvalsh(V)) > -1e-7
        assert np.all(new.Gamma >= 0)
        assert new.times.sum() <= cfg.T_t * (1 + 1e-9)


class TestClusterAdaptive:
    def test_single_element_matches_brute_force(self):
        # one IRS element, one device: 64-point phase sweep is the oracle
        cfg = SystemConfig(L=1, K_per_cluster=(1,), N=1, J=1)
        ch = make_channels(direct=[[1e-6]], reflect=[[[1e-6]]], irs_ap=[1.0])
        best = -np.inf
        for theta in 2 * np.pi * np.arange(64) / 64:
            sol = Solution(patterns=[BeamPattern([np.exp(1j * theta)])],
                           allocation=Allocation(times=[[cfg.T_t]], energies=[[cfg.E_max]]),
                           association=[0])
            best = max(best, evaluate_solution(cfg, ch, sol)[0])
        out = solve_cluster_adaptive(cfg, ch)
        gain = min_gain(ch, 0, out.patterns[0]).value
        assert gain == pytest.approx(4e-12, rel=1e-6)
        assert out.objective >= best - 1e-6 * best

    def test_blocked_irs_equals_no_irs(self):
        cfg = SystemConfig(L=2, K_per_cluster=(2, 1), N=3, J=2, seed=5)
        ch0 = synthesize_channels(cfg)
        ch = make_channels(direct=ch0.direct,
                           reflect=[np.zeros_like(r) for r in ch0.reflect],
                           irs_ap=ch0.irs_ap)
        out = solve_cluster_adaptive(cfg, ch)
        ref = baseline_no_irs(cfg, ch)
        assert out.objective == pytest.approx(ref.objective, rel=1e-9)

    @pytest.mark.parametrize("seed", [3, 11])
    def test_bounded_by_relaxation(self, seed):
        cfg, ch = _small_instance(seed)
        out = solve_cluster_adaptive(cfg, ch)
        ub = solve_upper_bound(cfg, ch)
        assert out.objective <= ub.objective * (1 + 1e-8)
        assert out.diagnostics["penalty_residual"] <= 1e-7
        assert out.diagnostics["extraction_loss"] <= 0.01

    def test_solution_structure(self):
        cfg, ch = _small_instance()
        out = solve_cluster_adaptive(cfg, ch)
        assert len(out.patterns) == cfg.L
        assert out.association == [0, 1]
        t = out.allocation.times
        assert np.allclose(t - np.diag(np.diag(t)), 0.0)
        assert np.allclose(np.diag(out.allocation.energies), cfg.E_max)
        # stored objective survives independent re-evaluation
        obj, _ = evaluate_solution(cfg, ch, out)
        assert obj == pytest.approx(out.objective, rel=1e-12)

    def test_decomposed_cross_check(self):
        cfg, ch = _small_instance(7)
        joint = solve_cluster_adaptive(cfg, ch)
        split = solve_adaptive_decomposed(cfg, ch)
        ub = solve_upper_bound(cfg, ch)
        assert abs(joint.objective - split.objective) <= 0.01 * joint.objective
        assert split.objective <= ub.objective * (1 + 1e-8)

    def test_trace_is_monotone_within_rounds(self):
        cfg, ch = _small_instance(9)
        out = solve_cluster_adaptive(cfg, ch)
        for inner in out.diagnostics["trace"]:
            assert all(b >= a - 1e-9 for a, b in zip(inner, inner[1:]))
