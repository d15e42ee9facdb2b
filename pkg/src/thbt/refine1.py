"""First refinement: a codebook of wide chirp beams that tiles the (omega, b) plane.

Codeword ``m`` points at ``m * theta_bar1`` with curvature alternating between
``k_tilde1 < 0`` (even ``m``) and ``b_bar - k_tilde1`` (odd ``m``).  With the
angle spacing ``theta_bar1 = (b_bar - 2*k_tilde1) * N_t`` the coverages of
neighbouring codewords meet exactly, so one sweep of ``2*M1 + 1`` probes
localises the path to one trapezoid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ArrayConfig, Sounder, steering_surrogate
from .exceptions import InvalidConfig


@dataclass(frozen=True)
class Refine1Config:
    omega_bar: float = math.sqrt(3) / 2
    b_bar: float = 1.22e-4
    k_tilde1: float = -6.09e-5

    def __post_init__(self):
        if not self.k_tilde1 < 0:
            raise InvalidConfig(f"k_tilde1 must be negative, got {self.k_tilde1}")
        if not self.b_bar > 0:
            raise InvalidConfig(f"b_bar must be positive, got {self.b_bar}")
        if not 0 < self.omega_bar <= 1:
            raise InvalidConfig(f"omega_bar must lie in (0, 1], got {self.omega_bar}")

    def theta_bar1(self, cfg: ArrayConfig) -> float:
        return (self.b_bar - 2 * self.k_tilde1) * cfg.n_t

    def k_bar1(self, m):
        """Curvature of codeword ``m`` (scalar or array)."""
        m = np.asarray(m)
        out = np.where(m % 2 == 0, self.k_tilde1, self.b_bar - self.k_tilde1)
        return float(out) if out.ndim == 0 else out


def m1_bound(cfg: ArrayConfig, r1: Refine1Config) -> float:
    theta1 = r1.theta_bar1(cfg)
    if not theta1 > 0:
        raise InvalidConfig(f"theta_bar1 must be positive, got {theta1}")
    return (r1.omega_bar + cfg.n_t * r1.k_tilde1) / theta1


def design_m1(cfg: ArrayConfig, r1: Refine1Config) -> int:
    """Smallest integer strictly greater than :func:`m1_bound`."""
    return max(math.floor(m1_bound(cfg, r1)) + 1, 1)


@dataclass(frozen=True)
class Codebook1:
    m: np.ndarray        # codeword indices -M1..M1
    theta: np.ndarray
    k: np.ndarray

    def __len__(self):
        return len(self.m)

    @property
    def m1(self) -> int:
        return int(self.m[-1])

    def vectors(self, cfg: ArrayConfig) -> np.ndarray:
        return steering_surrogate(cfg, self.theta, self.k)


def build_codebook1(cfg: ArrayConfig, r1: Refine1Config, m1: int | None = None) -> Codebook1:
    m1 = design_m1(cfg, r1) if m1 is None else m1
    if m1 < 1:
        raise InvalidConfig(f"M1 must be >= 1, got {m1}")
    m = np.arange(-m1, m1 + 1)
    return Codebook1(m, m * r1.theta_bar1(cfg), r1.k_bar1(m))


def argmax_first(values) -> int:
    """Index of the largest value; ties resolve to the smallest index."""
    return int(np.argmax(values))


def train_stage1(sounder: Sounder, codebook: Codebook1) -> tuple[int, np.ndarray]:
    """Probe every codeword; return the winning codeword index ``m_bar`` and raw samples."""
    y = sounder.probe(codebook.theta, codebook.k)
    return int(codebook.m[argmax_first(np.abs(y))]), y


@dataclass(frozen=True)
class PotentialRegion:
    """Trapezoid ``0 <= b <= b_bar``, ``|omega - center| <= slope*(|b - pivot| + widening)``."""

    center_theta: float
    pivot_k: float
    slope: float
    b_bar: float
    widening: float = 0.0

    def half_width(self, b):
        return self.slope * (np.abs(np.asarray(b) - self.pivot_k) + self.widening)

    def contains(self, omega, b):
        b = np.asarray(b)
        inside_b = (b >= 0) & (b <= self.b_bar)
        return inside_b & (np.abs(np.asarray(omega) - self.center_theta) <= self.half_width(b))

    def bounding_box(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """``((omega_lo, omega_hi), (0, b_bar))``."""
        w = float(max(self.half_width(0.0), self.half_width(self.b_bar)))
        return (self.center_theta - w, self.center_theta + w), (0.0, self.b_bar)


def region_update1(cfg: ArrayConfig, m_bar: int, r1: Refine1Config) -> PotentialRegion:
    return PotentialRegion(
        center_theta=m_bar * r1.theta_bar1(cfg),
        pivot_k=r1.k_bar1(m_bar),
        slope=float(cfg.n_t),
        b_bar=r1.b_bar,
    )


def extend_region(cfg: ArrayConfig, region: PotentialRegion) -> PotentialRegion:
    """Widen a region by the transition zone of width ``1/N_t`` in angle."""
    return PotentialRegion(
        region.center_theta, region.pivot_k, region.slope, region.b_bar,
        widening=region.widening + 1.0 / cfg.n_t**2,
    )
