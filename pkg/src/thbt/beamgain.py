"""Hybrid-field beam gain (HFBG) and its stationary-phase approximation.

The HFBG of a chirp codeword ``u = gamma(theta, k)`` evaluated at a target
``(omega, b)`` is

    G(u, omega, b) = N_t * gamma(omega, b)^H u
                   = sum_n exp(j*pi*((theta - omega)*n + (b - k)*n**2)).

Away from the far-field limit ``b == k`` the sum is well approximated by the
stationary-phase point ``z0 = (omega - theta) / (2*(b - k))``: the gain is
flat with magnitude ``1/sqrt(|b - k|)`` while ``|z0| <= N_t/2`` and vanishes
outside.  That support is the codeword's *beam coverage*, a double wedge in
the ``(omega, b)`` plane.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .channel import ArrayConfig
from .exceptions import DegenerateQuadratic, NoBracket

DEGENERATE_TOL = 1e-15

_CHUNK = 1 << 20  # complex entries materialised per block in hfbg_exact


def hfbg_exact(cfg: ArrayConfig, codeword, target) -> np.ndarray:
    """Exact HFBG by direct summation over the antennas.

    ``codeword`` is ``(theta, k)`` and ``target`` is ``(omega, b)``; all four
    entries broadcast, and the result has the broadcast shape.
    """
    theta, k = codeword
    omega, b = target
    d_ang, d_b = np.broadcast_arrays(
        np.asarray(theta, float) - np.asarray(omega, float),
        np.asarray(b, float) - np.asarray(k, float),
    )
    shape = d_ang.shape
    d_ang = d_ang.ravel()
    d_b = d_b.ravel()
    n = cfg.indices.astype(float)
    out = np.empty(d_ang.size, dtype=complex)
    step = max(1, _CHUNK // n.size)
    for s in range(0, d_ang.size, step):
        sl = slice(s, s + step)
        ph = np.outer(d_ang[sl], n) + np.outer(d_b[sl], n * n)
        out[sl] = np.exp(1j * np.pi * ph).sum(axis=1)
    return out.reshape(shape)


def hfbg_grid(cfg: ArrayConfig, codeword, omegas, bs) -> np.ndarray:
    """Exact HFBG on the tensor grid ``omegas x bs``; shape ``(len(omegas), len(bs))``.

    The phase separates into an angle part and a curvature part, so the sum
    over antennas is a single matrix product.
    """
    theta, k = codeword
    n = cfg.indices.astype(float)
    ang = np.exp(1j * np.pi * np.outer(theta - np.asarray(omegas, float), n))
    curv = np.exp(1j * np.pi * np.outer(np.asarray(bs, float) - k, n * n))
    return ang @ curv.T


def stationary_point(codeword, target):
    theta, k = codeword
    omega, b = target
    db = np.asarray(b, float) - k
    if np.any(np.abs(db) < DEGENERATE_TOL):
        raise DegenerateQuadratic("b == k: no stationary point (far-field limit)")
    return (np.asarray(omega, float) - theta) / (2 * db)


def hfbg_psp(cfg: ArrayConfig, codeword, target) -> np.ndarray:
    """Stationary-phase approximation of :func:`hfbg_exact`.

    Inside the coverage the magnitude is ``1/sqrt(|b - k|)`` and the phase is
    ``pi*(omega - theta)**2 / (4*(k - b)) + sign(b - k)*pi/4``; outside it is 0.
    The constant ``+-pi/4`` follows the sign of the second derivative of the
    phase, so both sides of ``b == k`` are handled.
    """
    theta, k = codeword
    omega, b = np.broadcast_arrays(np.asarray(target[0], float), np.asarray(target[1], float))
    z0 = stationary_point(codeword, (omega, b))
    db = b - k
    inside = np.abs(z0) <= cfg.n_t / 2
    phase = np.pi * (omega - theta) ** 2 / (4 * (k - b)) + np.sign(db) * np.pi / 4
    val = np.exp(1j * phase) / np.sqrt(np.abs(db))
    return np.where(inside, val, 0.0 + 0.0j)


@dataclass(frozen=True)
class CoverageRegion:
    """Closed beam coverage ``|omega - theta| <= slope * |b - k|`` of a codeword."""

    theta: float
    k: float
    slope: float

    @classmethod
    def of(cls, cfg: ArrayConfig, theta: float, k: float) -> "CoverageRegion":
        return cls(theta, k, float(cfg.n_t))

    def contains(self, omega, b):
        return np.abs(np.asarray(omega) - self.theta) <= self.slope * np.abs(np.asarray(b) - self.k)

    def acw(self, b):
        """Angle coverage width at surrogate distance ``b``."""
        return 2 * self.slope * np.abs(np.asarray(b) - self.k)


def coverage_contains(region: CoverageRegion, target) -> np.ndarray:
    return region.contains(*target)


def acw(region: CoverageRegion, b):
    return region.acw(b)


def fresnel(x):
    """Fresnel integrals ``(C(x), S(x))`` with the ``pi*z**2/2`` convention."""
    s, c = special.fresnel(x)
    return c, s


def distance_coherence(cfg: ArrayConfig, k_step):
    """Coherence of two codewords that differ only by ``k_step`` in curvature."""
    k_step = np.asarray(k_step, dtype=float)
    x = np.sqrt(2 * k_step) * cfg.n_half
    c, s = fresnel(x)
    return np.sqrt((2 * c**2 + 2 * s**2) / k_step) / cfg.n_t


# |C(x) + jS(x)|/x decreases monotonically up to its first minimum at this x;
# past it the coherence oscillates and inversion would be ambiguous.
COHERENCE_MONOTONE_X = 1.9115004360293697


def coherence_bracket(cfg: ArrayConfig) -> tuple[float, float]:
    """Range of curvature steps over which the distance coherence is monotone."""
    to_k = lambda x: 0.5 * (x / cfg.n_half) ** 2
    return to_k(1e-6), to_k(COHERENCE_MONOTONE_X)


def invert_coherence(cfg: ArrayConfig, rho_target: float, lo: float | None = None,
                     hi: float | None = None, tol: float = 1e-14) -> float:
    """Curvature step whose distance coherence equals ``rho_target``, by bisection.

    The default bracket is :func:`coherence_bracket`, which reaches down to a
    coherence of about 0.29 for large arrays.
    """
    if not 0 < rho_target < 1:
        raise NoBracket(f"rho_target must lie in (0, 1), got {rho_target}")
    d_lo, d_hi = coherence_bracket(cfg)
    lo = d_lo if lo is None else lo
    hi = d_hi if hi is None else hi
    f_lo = distance_coherence(cfg, lo) - rho_target
    f_hi = distance_coherence(cfg, hi) - rho_target
    if f_lo * f_hi > 0:
        raise NoBracket(
            f"rho={rho_target} not reachable on [{lo:.3g}, {hi:.3g}] "
            f"(coherence spans {f_hi + rho_target:.4f}..{f_lo + rho_target:.4f})"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = distance_coherence(cfg, mid) - rho_target
        if f_mid == 0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
