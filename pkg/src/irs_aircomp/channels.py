"""Channel synthesis and composite-gain evaluation.

A scenario draw produces, for every device k of cluster l, a scalar direct
channel to the AP, a length-N vector channel to the IRS, and one shared
length-N IRS-to-AP vector. The composite channel under an IRS phase pattern v
is h_direct + v^H diag(g^H) h_reflect; solvers work with the lifted vector
q = [diag(g^H) h_reflect ; h_direct] so that the gain is a quadratic form in
v_bar = [v ; 1].
"""
from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig


def path_loss_linear(distance: float, alpha: float, ref_db: float) -> float:
    """Linear power attenuation at `distance` meters for exponent `alpha`.

    The model is calibrated at 1 m (`ref_db`); shorter distances are outside
    its domain.
    """
    if distance < 1.0:
        raise ValueError("path-loss model undefined below the 1 m reference distance")
    return 10.0 ** (-(ref_db + 10.0 * alpha * np.log10(distance)) / 10.0)


@dataclass(frozen=True)
class BeamPattern:
    """One IRS phase configuration: length-N complex vector, unit modulus."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=complex).reshape(-1)
        object.__setattr__(self, "v", v)
        if v.size and np.max(np.abs(np.abs(v) - 1.0)) > 1e-9:
            raise ValueError("pattern entries must have unit modulus within 1e-9")

    @property
    def lifted(self) -> np.ndarray:
        vb = np.concatenate([self.v, [1.0]])
        return np.outer(vb, vb.conj())


@dataclass(frozen=True)
class LiftedPattern:
    """Lifted (N+1)x(N+1) Hermitian PSD matrix form of a pattern."""

    V: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.V, dtype=complex)
        object.__setattr__(self, "V", V)
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise ValueError("lifted pattern must be square")
        if np.max(np.abs(V - V.conj().T)) > 1e-9:
            raise ValueError("lifted pattern must be Hermitian within 1e-9")
        tr = float(np.real(np.trace(V)))
        wmin = float(np.linalg.eigvalsh(V)[0])
        if wmin < -1e-8 * max(tr, 1.0):
            raise ValueError("lifted pattern must be positive semidefinite")

    def check_unit_diag(self, tol: float = 1e-6):
        if np.max(np.abs(np.real(np.diag(self.V)) - 1.0)) > tol or \
                np.max(np.abs(np.imag(np.diag(self.V)))) > tol:
            raise ValueError("diagonal must be all ones for a unit-modulus pattern")


@dataclass(frozen=True)
class ChannelSet:
    """All channels of one scenario draw. `direct[l]` is shape (K_l,),
    `reflect[l]` is (K_l, N), `irs_ap` is (N,). Immutable once built."""

    direct: tuple
    reflect: tuple
    irs_ap: np.ndarray
    positions: tuple = field(default=None, compare=False)

    def __post_init__(self):
        for h in self.direct:
            if not np.all(np.isfinite(h)):
                raise ValueError("non-finite direct channel entry")
        for h in self.reflect:
            if not np.all(np.isfinite(h)):
                raise ValueError("non-finite reflect channel entry")
        if not np.all(np.isfinite(self.irs_ap)):
            raise ValueError("non-finite IRS-AP channel entry")

    @property
    def L(self) -> int:
        return len(self.direct)

    @property
    def N(self) -> int:
        return self.irs_ap.shape[0]


def _crandn(rng, shape):
    # circularly-symmetric complex Gaussian, unit variance
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def synthesize_channels(config: SystemConfig) -> ChannelSet:
    """Draw one scenario: device placement plus Rayleigh fading on all links.

    Draw order is fixed so outputs are a pure function of (config, seed):
    per cluster the device radii then angles, then per cluster the direct
    fading, then per cluster the reflect fading, then the IRS-AP vector.
    """
    rng = np.random.default_rng(config.seed)
    geo = config.geometry
    ap = np.asarray(geo.ap, float)
    irs = np.asarray(geo.irs, float)
    center = np.asarray(geo.cluster_center, float)
    N = config.N

    positions = []
    for l in range(config.L):
        K = config.K_per_cluster[l]
        # sqrt keeps the areal density uniform over the disk
        r = geo.radius * np.sqrt(rng.uniform(size=K))
        th = rng.uniform(0.0, 2.0 * np.pi, size=K)
        p = center[None, :] + np.stack([r * np.cos(th), r * np.sin(th), np.zeros(K)], axis=1)
        positions.append(p)

    direct = []
    for l in range(config.L):
        d_ap = np.linalg.norm(positions[l] - ap, axis=1)
        att = np.array([path_loss_linear(d, config.alpha_direct, config.pathloss_ref_db) for d in d_ap])
        direct.append(np.sqrt(att) * _crandn(rng, config.K_per_cluster[l]))

    reflect = []
    for l in range(config.L):
        K = config.K_per_cluster[l]
        d_irs = np.linalg.norm(positions[l] - irs, axis=1)
        att = np.array([path_loss_linear(d, config.alpha_irs, config.pathloss_ref_db) for d in d_irs])
        reflect.append(np.sqrt(att)[:, None] * _crandn(rng, (K, N)))

    d_ia = np.linalg.norm(irs - ap)
    g = np.sqrt(path_loss_linear(d_ia, config.alpha_irs, config.pathloss_ref_db)) * _crandn(rng, N)

    return ChannelSet(direct=tuple(direct), reflect=tuple(reflect), irs_ap=g,
                      positions=tuple(positions))


def composite_gain(channels: ChannelSet, cluster: int, device: int, pattern: BeamPattern) -> float:
    """|h_direct + v^H diag(g^H) h_reflect|^2 for one device under `pattern`."""
    v = pattern.v
    if v.shape[0] != channels.N:
        raise ValueError("pattern length does not match the IRS size")
    hd = channels.direct[cluster][device]
    hr = channels.reflect[cluster][device]
    g = channels.irs_ap
    he = hd + np.vdot(v, np.conj(g) * hr)
    return float(np.abs(he) ** 2)


def lift_channel(channels: ChannelSet, cluster: int, device: int) -> np.ndarray:
    """q = [diag(g^H) h_reflect ; h_direct], so the gain is |q^H v_bar|^2."""
    hr = channels.reflect[cluster][device]
    hd = channels.direct[cluster][device]
    return np.concatenate([np.conj(channels.irs_ap) * hr, [hd]])


def lifted_cluster(channels: ChannelSet, cluster: int) -> np.ndarray:
    """All lifted vectors of one cluster stacked as rows, shape (K_l, N+1)."""
    K = channels.direct[cluster].shape[0]
    return np.stack([lift_channel(channels, cluster, k) for k in range(K)])


MinGain = namedtuple("MinGain", ["value", "device"])


def min_gain(channels: ChannelSet, cluster: int, pattern: BeamPattern) -> MinGain:
    """Worst composite gain over the cluster's devices; ties go to the lowest
    device index."""
    K = channels.direct[cluster].shape[0]
    if K == 0:
        raise ValueError("cluster has no devices")
    gains = np.array([composite_gain(channels, cluster, k, pattern) for k in range(K)])
    idx = int(np.argmin(gains))  # argmin returns the first minimizer
    return MinGain(value=float(gains[idx]), device=idx)
