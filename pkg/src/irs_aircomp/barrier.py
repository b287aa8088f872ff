"""Barrier-Newton solver for the shared-pattern convex subproblem.

After eliminating the time split in closed form, one inner iteration of the
penalty loop reduces to

    maximize  kappa * F(sum_l C_l * gamma_l) - sum_l <M_l, X_l>
    over      X_l Hermitian PSD with unit diagonal, gamma_l >= 0,
    s.t.      q_lk^H X_l q_lk >= gamma_l   for every device k of cluster l,

where F(s) = ln(s) for s >= e and s/e below (its C^1 concave extension), C_l
collects the energy/noise/time constants, and M_l is the PSD linearized
penalty matrix. The optimal time split is recovered afterwards from gamma.

This module solves that program with a log-barrier path-following method.
The Newton direction is computed per cluster through a Schur complement of
size K_l + n + 1 (device multipliers, diagonal multipliers, gamma step); the
only coupling across clusters is the scalar curvature of F, closed by one
extra right-hand side per cluster. No matrix larger than n x n is factored.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

LN2 = np.log(2.0)


def concave_log(s: float) -> float:
    """ln(s) extended linearly below e so it stays concave and C^1."""
    return float(np.log(s)) if s >= np.e else float(s / np.e)


def _d_concave_log(s: float) -> float:
    return 1.0 / s if s >= np.e else 1.0 / np.e


def _d2_concave_log(s: float) -> float:
    return -1.0 / s ** 2 if s >= np.e else 0.0


class BarrierSolver:
    """Path-following solver for the reduced shared-pattern subproblem.

    qs: list of (K_l, n) arrays of lifted channel rows (scaled is fine);
    C: (L,) positive constants multiplying gamma inside F;
    kappa: positive objective weight; Ms: list of (n, n) Hermitian PSD
    penalty matrices (zeros for the relaxed bound).
    """

    def __init__(self, qs, C, kappa, Ms=None, max_newton=400):
        self.qs = [np.ascontiguousarray(q, dtype=complex) for q in qs]
        self.L = len(qs)
        self.n = self.qs[0].shape[1]
        self.C = np.asarray(C, dtype=float)
        self.kappa = float(kappa)
        if Ms is None:
            Ms = [np.zeros((self.n, self.n), dtype=complex) for _ in range(self.L)]
        self.Ms = [np.ascontiguousarray(M, dtype=complex) for M in Ms]
        self.max_newton = max_newton

    # ---- merit function (minimization form, with barrier) ----

    def _phi(self, Xs, gam, mu):
        s = float(self.C @ gam)
        if s <= 0:
            return np.inf
        val = -self.kappa * concave_log(s)
        for l in range(self.L):
            X = Xs[l]
            sign, logdet = np.linalg.slogdet(X)
            if sign <= 0:
                return np.inf
            c = np.real(np.einsum("ki,ij,kj->k", self.qs[l].conj(), X, self.qs[l])) - gam[l]
            if np.any(c <= 0):
                return np.inf
            val += np.real(np.vdot(self.Ms[l], X))
            val -= mu * (logdet + np.log(c).sum())
        return val

    def solve(self, Xs0=None, gam0=None, mu0=None, mu_min_scale=1e-12, sigma=0.2):
        """Follow the central path down to mu_min; returns (Xs, gamma, info).

        info carries the Newton count, the final mu, a duality-gap estimate
        (barrier degree times final mu), and whether the run stalled early.
        """
        L, n = self.L, self.n
        Ks = [q.shape[0] for q in self.qs]
        degree = sum(n + K for K in Ks)
        if Xs0 is None:
            Xs = [np.eye(n, dtype=complex) for _ in range(L)]
        else:
            Xs = [X.copy() for X in Xs0]
        if gam0 is None:
            gam = np.array([0.5 * min(np.real(np.einsum("ki,ij,kj->k",
                            self.qs[l].conj(), Xs[l], self.qs[l])))
                            for l in range(L)])
        else:
            gam = np.asarray(gam0, dtype=float).copy()
        scale = max(1.0, abs(self.kappa), *(np.abs(M).max() for M in self.Ms))
        mu = mu0 if mu0 is not None else 0.1 * scale
        mu_min = mu_min_scale * scale
        n_newton = 0
        stalled = False
        while n_newton < self.max_newton and not stalled:
            for _ in range(50):
                n_newton += 1
                step, dec = self._newton_step(Xs, gam, mu)
                if step is None:
                    stalled = True
                    break
                dXs, dgam = step
                alpha = self._line_search(Xs, gam, dXs, dgam, mu)
                if alpha == 0.0:
                    stalled = True
                    break
                for l in range(L):
                    Xs[l] = Xs[l] + alpha * dXs[l]
                    Xs[l] = 0.5 * (Xs[l] + Xs[l].conj().T)
                gam = gam + alpha * dgam
                if dec < 0.25 * max(mu, mu_min):
                    break
                if n_newton >= self.max_newton:
                    break
            if mu <= mu_min:
                break
            mu = max(mu * sigma, mu_min)
        info = {
            "newton": n_newton,
            "mu": mu,
            "gap_estimate": degree * mu,
            "stalled": stalled and mu > 1e3 * mu_min,
        }
        return Xs, gam, info

    def objective(self, Xs, gam) -> float:
        s = float(self.C @ gam)
        val = self.kappa * concave_log(s)
        for l in range(self.L):
            val -= np.real(np.vdot(self.Ms[l], Xs[l]))
        return float(val)

    # ---- Newton machinery ----

    def _solve2(self, S, rhs, tcol):
        # Jacobi-equilibrated solve for two right-hand sides; ridge fallback
        # keeps tiny-mu systems from dying on exact singularity.
        d = np.sqrt(np.abs(S).max(axis=1))
        d[d == 0] = 1.0
        Di = 1.0 / d
        Se = S * Di[:, None] * Di[None, :]
        R = np.column_stack([rhs * Di, tcol * Di])
        try:
            sol = np.linalg.solve(Se, R)
        except np.linalg.LinAlgError:
            try:
                sol = np.linalg.solve(Se + 1e-12 * np.eye(Se.shape[0]), R)
            except np.linalg.LinAlgError:
                return None
        if not np.all(np.isfinite(sol)):
            return None
        return sol[:, 0] * Di, sol[:, 1] * Di

    def _newton_step(self, Xs, gam, mu):
        """One Newton direction for the barrier merit at this mu.

        Per cluster the unknowns are reduced to z = (a_1..a_K, nu_1..nu_n,
        dgamma) with a_k = <q_k q_k^H, dX>; dX is reconstructed afterwards as
        X R X / mu where R stacks the residual terms. The global curvature of
        F enters every cluster through one scalar, handled by solving each
        cluster system for an extra tau column and closing tau at the end.
        """
        L, n = self.L, self.n
        s = float(self.C @ gam)
        dFs, d2Fs = _d_concave_log(s), _d2_concave_log(s)
        sols = []
        for l in range(L):
            q = self.qs[l]
            K = q.shape[0]
            X = Xs[l]
            M = self.Ms[l]
            w, U = np.linalg.eigh(X)
            if w.min() <= 0:
                return None, 0.0
            Xinv = (U / w) @ U.conj().T
            y = X @ q.T                   # columns y_k = X q_k, shape (n, K)
            gains = np.real(np.einsum("ki,ik->k", q.conj(), y))
            c = gains - gam[l]
            if np.any(c <= 0):
                return None, 0.0
            wk = mu / c ** 2
            GX = M - mu * Xinv - (q.T * (mu / c)) @ q.conj()   # sum_k (mu/c_k) q_k q_k^H
            GX = 0.5 * (GX + GX.conj().T)
            ggam = -self.kappa * dFs * self.C[l] + (mu / c).sum()
            B = q.conj() @ y              # B_jk = q_j^H X q_k
            absB2 = np.abs(B) ** 2
            Yabs2 = np.abs(y) ** 2
            Xabs2 = np.abs(X) ** 2
            XG = X @ (-GX) @ X / mu       # unconstrained response to the gradient
            a0 = np.real(np.einsum("ki,ik->k", q.conj(), XG @ q.T))
            d0 = np.real(np.diag(XG))
            m_ = K + n + 1
            S = np.zeros((m_, m_))
            rhs = np.zeros(m_)
            tcol = np.zeros(m_)
            # consistency rows: a_j - <Q_j, dX(z)> = <Q_j, X(-GX)X>/mu
            for j in range(K):
                S[j, :K] = wk * absB2[j] / mu
                S[j, j] += 1.0
                S[j, K:K + n] = Yabs2[:, j] / mu
                S[j, K + n] = -(wk * absB2[j]).sum() / mu
                rhs[j] = a0[j]
            # unit-diagonal rows: diag(dX) = 0
            for i in range(n):
                S[K + i, :K] = wk * Yabs2[i] / mu
                S[K + i, K:K + n] = Xabs2[i] / mu
                S[K + i, K + n] = -(wk * Yabs2[i]).sum() / mu
                rhs[K + i] = d0[i]
            # gamma stationarity: -sum_k wk (a_k - dgamma) + C_l tau = -ggam
            S[K + n, :K] = -wk
            S[K + n, K + n] = wk.sum()
            rhs[K + n] = -ggam
            tcol[K + n] = -self.C[l]
            pair = self._solve2(S, rhs, tcol)
            if pair is None:
                return None, 0.0
            sol0, solt = pair
            sols.append((sol0, solt, XG, wk, y, X, K, GX, ggam))
        # close the coupling scalar: tau = kappa*(-F'') * (C . dgamma)
        coef = self.kappa * (-d2Fs)
        num = sum(self.C[l] * sols[l][0][-1] for l in range(L))
        den = 1.0 - coef * sum(self.C[l] * sols[l][1][-1] for l in range(L))
        tau = coef * num / den if abs(den) > 1e-300 else 0.0
        dXs, dgam = [], np.zeros(L)
        dec = 0.0
        for l in range(L):
            sol0, solt, XG, wk, y, X, K, GX, ggam = sols[l]
            z = sol0 + tau * solt
            a = z[:K]
            nu_m = z[K:K + n]
            dg = z[K + n]
            coefk = wk * (dg - a)
            corr = ((y * coefk[None, :]) @ y.conj().T) / mu
            Xnu = (X * nu_m[None, :]) @ X / mu
            D = XG + corr - Xnu
            D = 0.5 * (D + D.conj().T)
            D = D - np.diag(np.diag(D))   # unit diagonal is kept exactly
            dXs.append(D)
            dgam[l] = dg
            dec += -np.real(np.vdot(GX, D)) - ggam * dg
        return (dXs, dgam), max(dec, 0.0)

    def _line_search(self, Xs, gam, dXs, dgam, mu):
        # fraction-to-boundary on all barrier terms, then backtracking
        L = self.L
        alpha = 1.0
        for l in range(L):
            lam = scipy.linalg.eigh(dXs[l], Xs[l], eigvals_only=True)
            lam_min = float(lam.min())
            if lam_min < 0:
                alpha = min(alpha, -0.95 / lam_min)
            c = np.real(np.einsum("ki,ij,kj->k", self.qs[l].conj(), Xs[l], self.qs[l])) - gam[l]
            dc = np.real(np.einsum("ki,ij,kj->k", self.qs[l].conj(), dXs[l], self.qs[l])) - dgam[l]
            bad = dc < 0
            if bad.any():
                alpha = min(alpha, 0.95 * float(np.min(-c[bad] / dc[bad])))
        s = float(self.C @ gam)
        ds = float(self.C @ dgam)
        if ds < 0:
            alpha = min(alpha, -0.95 * s / ds)
        base = self._phi(Xs, gam, mu)
        for _ in range(40):
            trial = self._phi([Xs[l] + alpha * dXs[l] for l in range(L)], gam + alpha * dgam, mu)
            if trial <= base + 1e-12 * abs(base):
                return alpha
            alpha *= 0.5
        return 0.0


def optimal_time_split(C, gam, T: float):
    """Time split maximizing the unclamped rate volume for given gains.

    With c_l = C_l * gamma_l the optimum is t = T*c/sum(c) when sum(c) >= e
    (every log argument then equals sum(c) > 1), else t = T*c/e which leaves
    the frame partly idle but keeps all arguments at e.
    """
    c = np.asarray(C, dtype=float) * np.maximum(np.asarray(gam, dtype=float), 0.0)
    s = float(c.sum())
    if s <= 0:
        return np.zeros_like(c)
    return T * c / s if s >= np.e else T * c / np.e
