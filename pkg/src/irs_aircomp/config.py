"""Scenario configuration: cluster sizes, IRS geometry, power/time budgets.

All physical quantities are SI (seconds, joules, watts, meters). Fields whose
name ends in `_db`/`_dbm` are the only decibel-valued ones.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class Geometry:
    """Node positions in meters. Devices are dropped uniformly in a disk of
    `radius` around `cluster_center` at height z=0."""

    ap: tuple = (0.0, 0.0, 10.0)
    irs: tuple = (10.0, 0.0, 10.0)
    cluster_center: tuple = (10.0, 10.0, 0.0)
    radius: float = 10.0


@dataclass(frozen=True)
class SystemConfig:
    L: int = 5                      # clusters
    K_per_cluster: tuple = (5, 5, 5, 5, 5)
    N: int = 20                     # IRS elements (0 disables the surface)
    J: int = 5                      # pattern budget, J <= L
    T_t: float = 0.1                # frame duration, seconds
    E_max: float = 0.01             # per-device energy budget, joules
    noise_power: tuple = None       # per-cluster noise, watts; default -80 dBm
    m_tilde: int = 2                # quantization bits
    K_tilde: int = 5                # rate-denominator cluster size
    weights: tuple = None           # w_l, default all ones
    pathloss_ref_db: float = 30.0   # attenuation at 1 m
    alpha_direct: float = 3.3
    alpha_irs: float = 2.3
    geometry: Geometry = field(default_factory=Geometry)
    seed: int = 0

    def __post_init__(self):
        if self.noise_power is None:
            object.__setattr__(self, "noise_power", tuple([dbm_to_watts(-80.0)] * self.L))
        elif isinstance(self.noise_power, (int, float)):
            object.__setattr__(self, "noise_power", tuple([float(self.noise_power)] * self.L))
        else:
            object.__setattr__(self, "noise_power", tuple(float(x) for x in self.noise_power))
        if self.weights is None:
            object.__setattr__(self, "weights", tuple([1.0] * self.L))
        else:
            object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        object.__setattr__(self, "K_per_cluster", tuple(int(k) for k in self.K_per_cluster))
        if not isinstance(self.geometry, Geometry):
            object.__setattr__(self, "geometry", Geometry(**self.geometry))
        self.validate()

    def validate(self):
        if self.L < 1:
            raise ValueError("L must be a positive integer")
        if len(self.K_per_cluster) != self.L:
            raise ValueError("K_per_cluster must list one size per cluster")
        if any(k < 1 for k in self.K_per_cluster):
            raise ValueError("every cluster needs at least one device")
        if self.N < 0:
            raise ValueError("N must be nonnegative")
        if not (1 <= self.J <= self.L):
            raise ValueError("pattern budget J must satisfy 1 <= J <= L")
        if self.T_t <= 0 or self.E_max <= 0:
            raise ValueError("durations and energies must be strictly positive")
        if len(self.noise_power) != self.L or any(p <= 0 for p in self.noise_power):
            raise ValueError("noise_power must be strictly positive per cluster")
        if self.m_tilde < 1:
            raise ValueError("m_tilde must be >= 1")
        if self.K_tilde < 2:
            raise ValueError("K_tilde must be >= 2 so the rate denominator exceeds m_tilde")
        if len(self.weights) != self.L or any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative, one per cluster")
        if self.geometry.radius < 0:
            raise ValueError("placement radius must be nonnegative")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed must fit in 64 bits")

    @property
    def rate_denominator(self) -> float:
        import math
        return self.m_tilde + math.log2(self.K_tilde)

    def replace(self, **kw) -> "SystemConfig":
        d = self.to_dict()
        d.update(kw)
        return SystemConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = asdict(self.geometry)
        return d

    @staticmethod
    def from_dict(d: dict) -> "SystemConfig":
        d = dict(d)
        if "noise_power_dbm" in d:
            dbm = d.pop("noise_power_dbm")
            if isinstance(dbm, (int, float)):
                d["noise_power"] = dbm_to_watts(float(dbm))
            else:
                d["noise_power"] = tuple(dbm_to_watts(float(x)) for x in dbm)
        if "geometry" in d and isinstance(d["geometry"], dict):
            geo = d["geometry"]
            for key in ("ap", "irs", "cluster_center"):
                if key in geo:
                    geo[key] = tuple(geo[key])
            d["geometry"] = Geometry(**geo)
        known = SystemConfig.__dataclass_fields__.keys()
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return SystemConfig(**d)

    @staticmethod
    def from_json(path: str) -> "SystemConfig":
        with open(path) as f:
            return SystemConfig.from_dict(json.load(f))

    def to_json(self, path: str):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
