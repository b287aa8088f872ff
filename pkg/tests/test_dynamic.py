import numpy as np
import pytest

from irs_aircomp import (Allocation, BeamPattern, Solution, SystemConfig, baseline_no_irs,
                         bilinear_minorant, dynamic_state_from_solution, dynamic_subproblem,
                         evaluate_solution, extract_association, oracle_grid_search,
                         project_unit_modulus, quadratic_form_minorant, solve_cluster_adaptive,
                         solve_dynamic, solve_low_complexity, solve_upper_bound,
                         synthesize_channels)
from conftest import make_channels


class TestBilinearMinorant:
    def test_tight_at_expansion(self):
        assert bilinear_minorant(1.0, 1.0, 1.0, 1.0) == pytest.approx(1.0)

    def test_below_product_away_from_expansion(self):
        assert bilinear_minorant(2.0, 1.0, 1.0, 1.0) == pytest.approx(1.5)
        assert bilinear_minorant(0.0, 0.0, 1.0, 1.0) <= 0.0

    def test_minorant_property(self, rng):
        for _ in range(500):
            e, g, ee, ge = rng.uniform(0, 3, 4)
            val = bilinear_minorant(e, g, ee, ge)
            assert val <= e * g + 1e-12
            assert bilinear_minorant(ee, ge, ee, ge) == pytest.approx(ee * ge, abs=1e-12)


class TestQuadraticFormMinorant:
    def test_tight_at_expansion(self):
        v = np.array([1.0, 1.0], dtype=complex)
        assert quadratic_form_minorant(v, v, np.eye(2)) == pytest.approx(2.0)

    def test_below_elsewhere(self):
        v = np.array([1.0, -1.0], dtype=complex)
        ve = np.array([1.0, 1.0], dtype=complex)
        assert quadratic_form_minorant(v, ve, np.eye(2)) == pytest.approx(-2.0)

    def test_minorant_property(self, rng):
        for _ in range(200):
            n = 3
            B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            Q = B @ B.conj().T
            v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            ve = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            true = float(np.real(v.conj() @ Q @ v))
            assert quadratic_form_minorant(v, ve, Q) <= true + 1e-9
            tight = float(np.real(ve.conj() @ Q @ ve))
            assert quadratic_form_minorant(ve, ve, Q) == pytest.approx(tight)

    def test_rejects_bad_matrices(self):
        v = np.ones(2, dtype=complex)
        with pytest.raises(ValueError):
            quadratic_form_minorant(v, v, np.array([[1.0, 1.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            quadratic_form_minorant(v, v, -np.eye(2))


class TestProjection:
    def test_examples(self):
        assert np.allclose(project_unit_modulus(np.array([2.0 + 0j])).v, [1.0])
        assert np.allclose(project_unit_modulus(np.array([0.0 + 0j])).v, [1.0])
        assert np.allclose(project_unit_modulus(np.array([1.0 + 1.0j])).v,
                           [np.exp(1j * np.pi / 4)])

    def test_preserves_phase(self, rng):
        v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        p = project_unit_modulus(v)
        assert np.allclose(np.abs(p.v), 1.0)
        mask = np.abs(v) > 1e-12
        assert np.allclose(np.angle(p.v[mask]), np.angle(v[mask]))


class TestExtractAssociation:
    def test_single_active_slot(self):
        sol = Solution(patterns=[], association=[],
                       allocation=Allocation(times=[[0.05, 0.0]], energies=[[0.01, 0.0]]))
        assoc, flags = extract_association(sol, T_t=0.1)
        assert assoc == [0]
        assert flags["split"] == [] and flags["inactive"] == []

    def test_split_cluster_flagged(self):
        sol = Solution(patterns=[], association=[],
                       allocation=Allocation(times=[[0.03, 0.02]], energies=[[0.01, 0.0]]))
        assoc, flags = extract_association(sol, T_t=0.1)
        assert assoc == [0]
        assert flags["split"] == [0]

    def test_inactive_cluster(self):
        sol = Solution(patterns=[], association=[],
                       allocation=Allocation(times=[[0.0, 0.0], [0.0, 0.04]],
                                             energies=[[0.0, 0.0], [0.0, 0.01]]))
        assoc, flags = extract_association(sol, T_t=0.1)
        assert assoc == [-1, 1]
        assert flags["inactive"] == [0]


def _instance(seed=0, L=2, K=(1, 1), N=2, J=2):
    cfg = SystemConfig(L=L, K_per_cluster=K, N=N, J=J, seed=seed)
    return cfg, synthesize_channels(cfg)


class TestSubproblem:
    def test_state_from_solution_is_consistent(self):
        cfg, ch = _instance()
        sol = solve_cluster_adaptive(cfg, ch)
        state = dynamic_state_from_solution(cfg, ch, sol, J=2)
        assert state.times.shape == (2, 2) and state.slacks.shape == (2, 2)
        assert np.all(state.slacks <= state.energies * state.gammas + 1e-12)
        for v in state.patterns_relaxed:
            assert np.max(np.abs(v)) <= 1 + 1e-9
            assert v[-1] == pytest.approx(1.0)

    def test_warm_start_never_loses(self):
        # one surrogate solve from a feasible point must do at least as well
        cfg, ch = _instance(seed=4)
        sol = solve_cluster_adaptive(cfg, ch)
        state = dynamic_state_from_solution(cfg, ch, sol, J=2)
        new, surrogate = dynamic_subproblem(cfg, ch, state)
        assert surrogate >= sol.objective - 1e-8
        assert np.all(new.slacks <= new.energies * new.gammas + 1e-7 * (1 + new.slacks))
        assert new.times.sum() <= cfg.T_t * (1 + 1e-9)
        assert np.all(new.energies.sum(axis=1) <= cfg.E_max * (1 + 1e-9))


class TestSolveDynamic:
    def test_single_element_near_oracle(self):
        cfg, ch = _instance(seed=2, L=1, K=(1,), N=1, J=1)
        out = solve_dynamic(cfg, ch)
        oracle = oracle_grid_search(cfg, ch, phase_levels=64)
        ub = solve_upper_bound(cfg, ch)
        assert out.objective >= 0.98 * oracle.objective
        assert out.objective <= ub.objective * (1 + 1e-8)
        assert out.allocation.times.sum() == pytest.approx(cfg.T_t, rel=1e-6)
        assert out.allocation.energies.sum() == pytest.approx(cfg.E_max, rel=1e-6)

    def test_blocked_irs_equals_no_irs(self):
        cfg0, ch0 = _instance(seed=6, L=2, K=(2, 1), N=3, J=2)
        ch = make_channels(direct=ch0.direct,
                           reflect=[np.zeros_like(r) for r in ch0.reflect],
                           irs_ap=ch0.irs_ap)
        out = solve_dynamic(cfg0, ch)
        ref = baseline_no_irs(cfg0, ch)
        assert out.objective == pytest.approx(ref.objective, rel=1e-9)

    def test_identical_clusters_share_one_pattern(self):
        cfg = SystemConfig(L=2, K_per_cluster=(1, 1), N=2, J=1, seed=0)
        ch0 = synthesize_channels(SystemConfig(L=1, K_per_cluster=(1,), N=2, J=1, seed=0))
        ch = make_channels(direct=[ch0.direct[0], ch0.direct[0]],
                           reflect=[ch0.reflect[0], ch0.reflect[0]],
                           irs_ap=ch0.irs_ap)
        out = solve_dynamic(cfg, ch)
        assert len(out.patterns) == 1
        t = out.allocation.times[:, 0]
        assert t[0] == pytest.approx(t[1], rel=1e-6)
        assert out.association == [0, 0]

    def test_more_patterns_never_hurt_with_warm_start(self):
        cfg, ch = _instance(seed=8, L=3, K=(1, 1, 1), N=2, J=3)
        one = solve_dynamic(cfg, ch, J=1)
        t1 = one.allocation.times
        pad = Solution(
            patterns=[one.patterns[0], BeamPattern(np.ones(2, dtype=complex))],
            allocation=Allocation(times=np.hstack([t1, np.zeros_like(t1)]),
                                  energies=np.hstack([one.allocation.energies,
                                                      np.zeros_like(t1)])),
            association=list(one.association))
        two = solve_dynamic(cfg, ch, J=2, init=pad)
        assert two.objective >= one.objective - 1e-9
        assert len(two.patterns) == 2

    def test_no_irs_limit_delegates(self):
        cfg = SystemConfig(L=2, K_per_cluster=(1, 1), N=0, J=2, seed=1)
        ch = synthesize_channels(cfg)
        out = solve_dynamic(cfg, ch)
        ref = solve_cluster_adaptive(cfg, ch)
        assert out.objective == pytest.approx(ref.objective, rel=1e-12)

    def test_diagnostics_and_reverification(self):
        cfg, ch = _instance(seed=5)
        out = solve_dynamic(cfg, ch)
        d = out.diagnostics
        assert d["iterations"] >= 1 and len(d["trace"]) >= 1
        obj, _ = evaluate_solution(cfg, ch, out)
        assert obj == pytest.approx(out.objective, rel=1e-12)


class TestLowComplexity:
    def test_orders_by_standalone_strength(self):
        # cluster direct strengths 3 > 2 > 1 with a near-dead IRS: the two
        # weakest clusters end up sharing the last pattern
        cfg = SystemConfig(L=3, K_per_cluster=(1, 1, 1), N=2, J=2)
        eps = 1e-6
        ch = make_channels(
            direct=[[np.sqrt(3e-7)], [np.sqrt(2e-7)], [np.sqrt(1e-7)]],
            reflect=[[[eps, eps]], [[eps, eps]], [[eps, eps]]],
            irs_ap=[eps, eps])
        out = solve_low_complexity(cfg, ch)
        assert out.diagnostics["order"] == [0, 1, 2]
        assert out.association == [0, 1, 1]

    def test_j_equals_l_matches_dedicated_design(self):
        cfg, ch = _instance(seed=12, L=3, K=(1, 2, 1), N=3, J=3)
        lc = solve_low_complexity(cfg, ch)
        from irs_aircomp import solve_adaptive_decomposed
        dec = solve_adaptive_decomposed(cfg, ch)
        assert lc.objective >= 0.99 * dec.objective

    def test_within_dynamic_on_small_instance(self):
        cfg, ch = _instance(seed=13, L=3, K=(1, 1, 1), N=2, J=2)
        lc = solve_low_complexity(cfg, ch)
        dyn = solve_dynamic(cfg, ch)
        assert lc.objective <= dyn.objective * (1 + 1e-6)
        assert lc.objective >= 0.8 * dyn.objective
        assert lc.diagnostics["iterations"] >= 1
        obj, _ = evaluate_solution(cfg, ch, lc)
        assert obj == pytest.approx(lc.objective, rel=1e-12)

    def test_active_clusters_spend_full_energy(self):
        cfg, ch = _instance(seed=14, L=2, K=(1, 1), N=2, J=2)
        out = solve_low_complexity(cfg, ch)
        spent = out.allocation.energies.sum(axis=1)
        active = out.allocation.times.sum(axis=1) > 1e-9
        assert np.allclose(spent[active], cfg.E_max, rtol=1e-9)
