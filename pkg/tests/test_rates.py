import numpy as np
import pytest

from irs_aircomp import (Allocation, Solution, SystemConfig, computation_rate,
                         effective_snr, evaluate_solution, proportional_time_allocation,
                         uniform_forcing, verify_solution, volume_term)
from conftest import make_channels


class TestUniformForcing:
    def test_symmetric(self):
        tc = uniform_forcing([1, 1, 1], 1.0)
        assert tc.eta == pytest.approx(1.0)
        assert np.allclose(tc.powers, [1, 1, 1])

    def test_weakest_device_at_cap(self):
        tc = uniform_forcing([1, 4], 2.0)
        assert tc.eta == pytest.approx(2.0)
        assert np.allclose(tc.powers, [2.0, 0.5])

    def test_single_device(self):
        tc = uniform_forcing([0.3], 1.5)
        assert tc.eta == pytest.approx(0.45)
        assert np.allclose(tc.powers, [1.5])

    def test_zero_gain_rejected(self):
        with pytest.raises(ValueError):
            uniform_forcing([1.0, 0.0], 1.0)

    def test_forcing_property_random(self, rng):
        for _ in range(200):
            gains = rng.uniform(0.1, 10, size=rng.integers(1, 8))
            P0 = rng.uniform(0.5, 3)
            tc = uniform_forcing(gains, P0)
            assert np.max(np.abs(tc.powers * gains - tc.eta)) <= 1e-9 * tc.eta
            assert tc.powers[np.argmin(gains)] == pytest.approx(P0)
            assert np.all(tc.powers <= P0 * (1 + 1e-12))
            assert tc.receive_scale == pytest.approx(1 / np.sqrt(tc.eta))


class TestEffectiveSnr:
    def test_formula(self):
        # energy * gain / (time * noise); reference constants
        assert effective_snr(0.01, 0.1, 1e-9, 1e-11) == pytest.approx(10.0)
        assert effective_snr(0.01, 0.1, 1e-8, 1e-11) == pytest.approx(100.0)

    def test_zero_energy(self):
        assert effective_snr(0.0, 0.1, 1e-9, 1e-11) == 0.0

    def test_time_homogeneity(self):
        one = effective_snr(0.01, 0.1, 1e-9, 1e-11)
        two = effective_snr(0.01, 0.2, 1e-9, 1e-11)
        assert two == pytest.approx(one / 2)

    def test_zero_time_rejected(self):
        with pytest.raises(ValueError):
            effective_snr(0.01, 0.0, 1e-9, 1e-11)


class TestComputationRate:
    def test_unit_snr(self):
        assert computation_rate(1.0, 2, 4) == 0.0

    def test_clamp_below_one(self):
        assert computation_rate(0.5, 2, 4) == 0.0

    def test_snr16(self):
        assert computation_rate(16, 2, 4) == pytest.approx(1.0)

    def test_monotone_and_unit_free(self, rng):
        snrs = np.sort(rng.uniform(0.1, 1e6, 50))
        rates = [computation_rate(s, 2, 5) for s in snrs]
        assert all(b >= a for a, b in zip(rates, rates[1:]))

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            computation_rate(-1.0, 2, 4)
        with pytest.raises(ValueError):
            computation_rate(1.0, 0, 4)
        with pytest.raises(ValueError):
            computation_rate(1.0, 2, 1)


class TestVolumeTerm:
    def test_zero_time(self):
        assert volume_term(0.0, 123.0, 1e-11, 2, 4) == 0.0

    def test_snr_1024(self):
        S = 2 ** 10 * 0.1 * 1e-11
        assert volume_term(0.1, S, 1e-11, 2, 4) == pytest.approx(0.25)

    def test_midpoint_concavity(self, rng):
        noise = 1e-11
        for _ in range(300):
            t1, t2 = rng.uniform(0.01, 0.2, 2)
            S1, S2 = rng.uniform(2, 100, 2) * noise * np.array([t1, t2])
            mid = volume_term((t1 + t2) / 2, (S1 + S2) / 2, noise, 2, 5)
            avg = (volume_term(t1, S1, noise, 2, 5) + volume_term(t2, S2, noise, 2, 5)) / 2
            assert mid >= avg - 1e-12


class TestProportionalTime:
    def test_symmetry(self):
        assert np.allclose(proportional_time_allocation([1, 1], 0.1), [0.05, 0.05])

    def test_three_to_one(self):
        assert np.allclose(proportional_time_allocation([1, 3], 0.1), [0.025, 0.075])

    def test_scale_invariance(self):
        a = proportional_time_allocation([2.0, 5.0, 1.0], 0.1)
        b = proportional_time_allocation([20.0, 50.0, 10.0], 0.1)
        assert np.allclose(a, b)

    def test_sums_to_frame(self, rng):
        for _ in range(50):
            c = rng.uniform(0.5, 5, size=4)
            t = proportional_time_allocation(c, 0.1)
            assert t.sum() == pytest.approx(0.1, rel=1e-12)

    def test_pairwise_perturbation_never_improves(self, rng):
        T = 0.1
        c = np.array([1.0, 3.0, 2.0])
        t = proportional_time_allocation(c, T)

        def obj(tv):
            return sum(tv[l] * np.log2(c[l] / tv[l]) for l in range(3))

        base = obj(t)
        delta = 1e-5 * T
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                tp = t.copy()
                tp[i] += delta
                tp[j] -= delta
                assert obj(tp) <= base + 1e-10

    def test_below_threshold_rejected(self):
        with pytest.raises(ValueError, match="rate-positivity"):
            proportional_time_allocation([0.01, 0.01], 0.1)
        with pytest.raises(ValueError):
            proportional_time_allocation([0.0, 1.0], 0.1)


class TestEvaluateSolution:
    def _direct_cfg_channels(self, gain, K_tilde=4):
        cfg = SystemConfig(L=1, K_per_cluster=(1,), N=1, J=1, K_tilde=K_tilde)
        ch = make_channels(direct=[[np.sqrt(gain)]], reflect=[[[0.0]]], irs_ap=[1.0])
        return cfg, ch

    def test_all_times_zero(self):
        cfg, ch = self._direct_cfg_channels(1e-9)
        sol = Solution(patterns=[], allocation=Allocation(times=[[0.0]], energies=[[0.01]]),
                       association=[0])
        obj, rates = evaluate_solution(cfg, ch, sol)
        assert obj == 0.0 and rates[0] == 0.0

    def test_hand_built_snr16(self):
        # gain such that snr = E*gain/(t*noise) = 16 at t = 0.1
        gain = 16 * 0.1 * 1e-11 / 0.01
        cfg, ch = self._direct_cfg_channels(gain)
        sol = Solution(patterns=[], allocation=Allocation(times=[[0.1]], energies=[[0.01]]),
                       association=[0])
        obj, rates = evaluate_solution(cfg, ch, sol)
        assert rates[0] == pytest.approx(1.0)
        assert obj == pytest.approx(0.1)

    def test_self_consistency_contract(self):
        cfg, ch = self._direct_cfg_channels(1.6e-7)
        sol = Solution(patterns=[], allocation=Allocation(times=[[0.1]], energies=[[0.01]]),
                       association=[0])
        sol.objective, _ = evaluate_solution(cfg, ch, sol)
        assert verify_solution(cfg, ch, sol) == pytest.approx(sol.objective)
        sol.objective *= 1.01
        with pytest.raises(AssertionError):
            verify_solution(cfg, ch, sol)

    def test_time_budget_violation_reported(self):
        cfg, ch = self._direct_cfg_channels(1e-7)
        sol = Solution(patterns=[], allocation=Allocation(times=[[0.2]], energies=[[0.01]]),
                       association=[0])
        with pytest.raises(ValueError, match="invalid solution"):
            evaluate_solution(cfg, ch, sol)

    def test_energy_budget_violation_reported(self):
        cfg, ch = self._direct_cfg_channels(1e-7)
        sol = Solution(patterns=[], allocation=Allocation(times=[[0.1]], energies=[[0.02]]),
                       association=[0])
        with pytest.raises(ValueError, match="energy"):
            evaluate_solution(cfg, ch, sol)
