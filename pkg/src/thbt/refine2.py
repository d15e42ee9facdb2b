"""Second refinement: translated narrow-curvature codebook, ML and PSP estimators.

Every codeword ``w_m = gamma(m_bar*theta_bar1 + m*theta_bar2, k_bar2)`` has a
beam coverage that contains the whole extended region left by the first
stage, so all ``2*M2 + 1`` samples see the path with similar amplitude.  The
parameters are recovered either by a grid ML search or in closed form from
the unwrapped sample phases, which are quadratic in the codeword angle.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .channel import ArrayConfig, Sounder, steering_surrogate
from .exceptions import CoverageViolation, EmptyGrid, SingularSystem, ZeroCurvature
from .refine1 import PotentialRegion, Refine1Config, argmax_first, extend_region, region_update1


@dataclass(frozen=True)
class Refine2Config:
    m2: int = 8
    theta_bar2: float | None = None  # None -> 2/N_t

    def resolve_theta_bar2(self, cfg: ArrayConfig) -> float:
        return 2.0 / cfg.n_t if self.theta_bar2 is None else self.theta_bar2


def unwrap_margin(cfg: ArrayConfig, r1: Refine1Config, r2: Refine2Config) -> float:
    """Curvature clearance ``B`` that keeps adjacent sample phases within pi."""
    t2 = r2.resolve_theta_bar2(cfg)
    n_t = cfg.n_t
    return t2 * (1 / n_t + (r1.b_bar - r1.k_tilde1) * n_t + r2.m2 * t2) / 2


def choose_k2(cfg: ArrayConfig, r1: Refine1Config, r2: Refine2Config, m_bar: int) -> float:
    big_b = unwrap_margin(cfg, r1, r2)
    t2 = r2.resolve_theta_bar2(cfg)
    k1 = r1.k_bar1(m_bar)
    shift = r2.m2 * t2 / cfg.n_t + 1 / cfg.n_t**2
    if m_bar % 2 == 0:
        return min(-big_b, k1 - shift)
    return max(r1.b_bar + big_b, k1 + shift)


@dataclass(frozen=True)
class Codebook2:
    center: float        # m_bar * theta_bar1
    theta_bar2: float
    m2: int
    k2: float

    @property
    def m(self) -> np.ndarray:
        return np.arange(-self.m2, self.m2 + 1)

    @property
    def offsets(self) -> np.ndarray:
        return self.m * self.theta_bar2

    @property
    def theta(self) -> np.ndarray:
        return self.center + self.offsets

    def __len__(self):
        return 2 * self.m2 + 1

    def vectors(self, cfg: ArrayConfig) -> np.ndarray:
        return steering_surrogate(cfg, self.theta, self.k2)


def coverage_slack(cfg: ArrayConfig, region: PotentialRegion, codebook: Codebook2, b) -> np.ndarray:
    """How much the narrowest codeword coverage exceeds the region's half-width at ``b``."""
    return (cfg.n_t * np.abs(np.asarray(b) - codebook.k2)
            - codebook.m2 * codebook.theta_bar2
            - region.half_width(b))


def build_codebook2(cfg: ArrayConfig, m_bar: int, r1: Refine1Config, r2: Refine2Config,
                    region: PotentialRegion | None = None, check: bool = True) -> Codebook2:
    """Codebook whose every coverage contains the extended first-stage region.

    Raises CoverageViolation when ``check`` is set and some codeword fails to
    cover the region (checked on a dense grid of ``b``).
    """
    cb = Codebook2(
        center=m_bar * r1.theta_bar1(cfg),
        theta_bar2=r2.resolve_theta_bar2(cfg),
        m2=r2.m2,
        k2=choose_k2(cfg, r1, r2, m_bar),
    )
    if check:
        region = region or extend_region(cfg, region_update1(cfg, m_bar, r1))
        bs = np.linspace(0.0, region.b_bar, 257)
        slack = coverage_slack(cfg, region, cb, bs)
        if np.any(slack < -1e-12):
            raise CoverageViolation(
                f"codebook with k2={cb.k2:.4g} misses the region by {-slack.min():.3g} in angle"
            )
    return cb


def train_stage2(sounder: Sounder, codebook: Codebook2) -> np.ndarray:
    return sounder.probe(codebook.theta, codebook.k2)


@dataclass(frozen=True)
class SearchGrid:
    """Candidate points ``(center + rel_omega[i], b[i])`` for the ML search."""

    center: float
    rel_omega: tuple
    b: tuple
    shape: tuple[int, int]

    @property
    def omega(self) -> np.ndarray:
        return self.center + np.asarray(self.rel_omega)

    def __len__(self):
        return len(self.b)


def ml_grid(region: PotentialRegion, n_omega: int = 101, n_b: int = 101) -> SearchGrid:
    """Uniform grid over the region's bounding box, keeping only points inside it.

    Offsets are built relative to the region centre, so regions of the same
    shape yield identical offsets (and share the cached ML kernel).
    """
    w = float(max(region.half_width(0.0), region.half_width(region.b_bar)))
    rel = np.linspace(-w, w, n_omega)
    bs = np.linspace(0.0, region.b_bar, n_b)
    rr, bb = np.meshgrid(rel, bs, indexing="ij")
    keep = np.abs(rr) <= region.half_width(bb)
    return SearchGrid(region.center_theta, tuple(rr[keep]), tuple(bb[keep]), (n_omega, n_b))


@functools.lru_cache(maxsize=16)
def _ml_kernel(cfg: ArrayConfig, rel_theta: tuple, k2: float, rel_omega: tuple, b: tuple):
    # row v holds Gamma^H gamma(omega_v, b_v), normalised; only relative angles matter
    n = cfg.indices.astype(float)
    rel_omega = np.asarray(rel_omega)
    b = np.asarray(b)
    cw = np.exp(1j * np.pi * np.outer(n, rel_theta))  # (N_t, M)
    out = np.empty((rel_omega.size, len(rel_theta)), dtype=complex)
    step = 2048
    for s in range(0, rel_omega.size, step):
        sl = slice(s, s + step)
        tgt = np.exp(-1j * np.pi * (np.outer(rel_omega[sl], n) + np.outer(k2 - b[sl], n * n)))
        out[sl] = np.conj(tgt @ cw) / cfg.n_t
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out


def ml_objective(cfg: ArrayConfig, measurements, codebook: Codebook2, grid: SearchGrid) -> np.ndarray:
    """Normalised correlation of the samples with each candidate's noiseless response."""
    if len(grid) == 0:
        raise EmptyGrid("ML search grid is empty")
    kernel = _ml_kernel(cfg, tuple(codebook.offsets), codebook.k2, grid.rel_omega, grid.b)
    return np.abs(kernel @ np.asarray(measurements))


def estimate_ml(cfg: ArrayConfig, measurements, codebook: Codebook2, grid: SearchGrid) -> tuple[float, float]:
    obj = ml_objective(cfg, measurements, codebook, grid)
    i = argmax_first(obj)
    return float(grid.center + grid.rel_omega[i]), float(grid.b[i])


@dataclass(frozen=True)
class PhaseSeries:
    wrapped: np.ndarray
    unwrapped: np.ndarray


def unwrap_series(wrapped, anchor: float = 0.0) -> np.ndarray:
    """Sequential unwrap: each step adds the wrapped difference mapped to ``[-pi, pi)``."""
    wrapped = np.asarray(wrapped, dtype=float)
    steps = np.mod(np.diff(wrapped) + np.pi, 2 * np.pi) - np.pi
    return anchor + np.concatenate([[0.0], np.cumsum(steps)])


def unwrap_phases(measurements) -> PhaseSeries:
    """Unwrapped phase of the conjugated samples, anchored at 0 for ``m = -M2``."""
    wrapped = np.angle(np.conj(np.asarray(measurements)))
    return PhaseSeries(wrapped, unwrap_series(wrapped, 0.0))


def _solve3(a: np.ndarray, rhs: np.ndarray, pivot_tol: float = 1e-12) -> np.ndarray:
    """Gaussian elimination with partial pivoting for a 3x3 system."""
    m = np.column_stack([np.array(a, dtype=float), np.array(rhs, dtype=float)])
    scale = np.abs(m[:, :3]).max()
    for col in range(3):
        p = col + int(np.argmax(np.abs(m[col:, col])))
        if abs(m[p, col]) <= pivot_tol * max(scale, 1.0):
            raise SingularSystem("moment matrix is rank deficient")
        m[[col, p]] = m[[p, col]]
        m[col + 1:] -= np.outer(m[col + 1:, col] / m[col, col], m[col])
    x = np.zeros(3)
    for row in (2, 1, 0):
        x[row] = (m[row, 3] - m[row, row + 1:3] @ x[row + 1:]) / m[row, row]
    return x


def quadratic_fit(thetas, unwrapped) -> tuple[float, float, float]:
    """``(alpha, beta, gamma)`` minimising ``sum (U + alpha*t**2 + beta*t + gamma)**2``."""
    t = np.asarray(thetas, dtype=float)
    u = np.asarray(unwrapped, dtype=float)
    if np.unique(t).size < 3:
        raise SingularSystem("need at least three distinct codeword angles")
    # centre and scale the abscissa; the map back to (alpha, beta, gamma) is exact
    c = t.mean()
    s = np.abs(t - c).max()
    x = (t - c) / s
    moments = np.array([[np.sum(x ** (i + j)) for j in (2, 1, 0)] for i in (2, 1, 0)])
    rhs = -np.array([np.sum(u * x**2), np.sum(u * x), np.sum(u)])
    a_s, b_s, g_s = _solve3(moments, rhs)
    alpha = a_s / s**2
    beta_c = b_s / s
    beta = beta_c - 2 * alpha * c
    gamma = g_s - beta_c * c + alpha * c**2
    return alpha, beta, gamma


def estimate_psp(phase_series, thetas, k2: float) -> tuple[float, float]:
    unwrapped = phase_series.unwrapped if isinstance(phase_series, PhaseSeries) else phase_series
    alpha, beta, _ = quadratic_fit(thetas, unwrapped)
    if abs(alpha) < 1e-12:
        raise ZeroCurvature("fitted phase curvature vanishes; b is undefined")
    return float(-beta / (2 * alpha)), float(-np.pi / (4 * alpha) + k2)


def psp_model_phase(thetas, omega: float, b: float, k2: float, phi: float = 0.0) -> np.ndarray:
    """Unwrapped sample phase predicted by the stationary-phase model."""
    t = np.asarray(thetas, dtype=float)
    return np.pi * (omega - t) ** 2 / (4 * (b - k2)) + phi
