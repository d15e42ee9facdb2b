"""Third refinement: neighbouring search, Gaussian main-lobe model and log-weighted LS.

The neighbouring search hill-climbs on a lattice of codewords spaced
``theta_bar_n`` in angle and ``k_bar_n`` in curvature, probing the centre and
its four neighbours per group.  Once the centre wins, the main lobe of the
beam gain around it is modelled as a separable 2-D Gaussian; on that model
the log-amplitude of a probe is quadratic in the unknown ``(omega, b)``, and
an amplitude-weighted linear least-squares solve recovers them from an
``M3 x M3`` grid of probes.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .beamgain import hfbg_grid
from .channel import ArrayConfig, Sounder, range_from_surrogate
from .exceptions import FitDiverged, MissingMeasurements, SingularNormalMatrix
from .refine1 import argmax_first

# probe order within a group: angle -/+, curvature -/+, centre
_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
CENTER = 5


@dataclass
class NeighborSearchState:
    start: tuple[float, float]
    step_angle: float
    step_k: float
    center: tuple[int, int] = (0, 0)
    group_index: int = 0
    last_winner: int = 0
    history: dict = field(default_factory=dict)
    last_group: np.ndarray | None = None

    def params(self, node) -> tuple[float, float]:
        i, j = node
        return self.start[0] + i * self.step_angle, self.start[1] + j * self.step_k

    @property
    def estimate(self) -> tuple[float, float]:
        return self.params(self.center)

    @property
    def success(self) -> bool:
        return self.last_winner == CENTER


def neighbor_search(sounder: Sounder, start, steps, m_n: int) -> NeighborSearchState:
    """Hill-climb from ``start = (omega, b)`` for at most ``m_n`` groups.

    Probes shared with the previous group are reused from ``state.history``,
    so the probe count is at most ``3*m_n + 2``.  The search succeeds when the
    centre codeword wins a group.
    """
    st = NeighborSearchState((float(start[0]), float(start[1])), float(steps[0]), float(steps[1]))
    for m in range(1, m_n + 1):
        st.group_index = m
        ci, cj = st.center
        nodes = [(ci + di, cj + dj) for di, dj in _OFFSETS]
        fresh = [nd for nd in nodes if nd not in st.history]
        if fresh:
            th, kk = zip(*(st.params(nd) for nd in fresh))
            for nd, y in zip(fresh, sounder.probe(np.array(th), np.array(kk))):
                st.history[nd] = y
        group = np.array([st.history[nd] for nd in nodes])
        st.last_group = group
        st.last_winner = argmax_first(np.abs(group)) + 1
        st.center = nodes[st.last_winner - 1]
        if st.last_winner == CENTER:
            break
    return st


def narrow_regions(state: NeighborSearchState, theta3: float, k3: float):
    """Half-intervals of angle and curvature around the converged centre."""
    if state.last_group is None or len(state.last_group) != 5:
        raise MissingMeasurements("neighbouring search produced no complete group")
    y = np.abs(state.last_group)
    om, b = state.estimate
    ang = (om, om + theta3) if y[1] >= y[0] else (om - theta3, om)
    cur = (b, b + k3) if y[3] >= y[2] else (b - k3, b)
    return ang, cur


@dataclass(frozen=True)
class GaussianFit:
    """Separable Gaussian model ``a*exp(-d_omega**2/(2*s1**2) - d_b**2/(2*s2**2))`` of |G|."""

    amplitude: float
    sigma_angle: float
    sigma_k: float
    domain: tuple[float, float]
    max_residual: float = float("nan")   # fraction of the peak gain
    mean_residual: float = float("nan")

    def __call__(self, d_omega, d_b):
        return self.amplitude * np.exp(
            -np.square(d_omega) / (2 * self.sigma_angle**2)
            - np.square(d_b) / (2 * self.sigma_k**2)
        )

    def at(self, codeword, target):
        """Model gain of codeword ``(theta, k)`` at ``(omega, b)``, by translation."""
        return self(np.asarray(target[0]) - codeword[0], np.asarray(target[1]) - codeword[1])


def gaussian_fit_grid(cfg: ArrayConfig, theta3: float, k3: float, n_grid: int = 64):
    omegas = np.linspace(-theta3, theta3, n_grid)
    bs = np.linspace(-k3, k3, n_grid)
    gain = np.abs(hfbg_grid(cfg, (0.0, 0.0), omegas, bs))
    return omegas, bs, gain


def fit_gaussian_surface(x, y, data, max_tol: float = 0.05, mean_tol: float = 0.01):
    """Fit ``a*exp(-x**2/(2*s1**2) - y**2/(2*s2**2))`` to ``data`` on the grid ``x`` by ``y``.

    Inputs should be O(1) in scale.  Returns ``(a, s1, s2, max_residual,
    mean_residual)`` with residuals as fractions of ``data.max()``.  Raises
    FitDiverged if no start meets both residual bounds.
    """
    xx, yy = np.meshgrid(np.asarray(x, float), np.asarray(y, float), indexing="ij")
    peak = float(np.max(data))
    z = np.asarray(data, float) / peak

    def resid(p):
        a, s1, s2 = p
        return (a * np.exp(-xx**2 / (2 * s1**2) - yy**2 / (2 * s2**2)) - z).ravel()

    # initial widths from the second moments of the surface
    w = z / z.sum()
    s1_0 = np.sqrt(np.sum(w * xx**2))
    s2_0 = np.sqrt(np.sum(w * yy**2))
    best = None
    for f1, f2 in ((1.0, 1.0), (2.0, 2.0), (0.5, 2.0), (2.0, 0.5)):
        sol = optimize.least_squares(
            resid, [1.0, f1 * s1_0, f2 * s2_0], method="trf",
            bounds=([0, 1e-6, 1e-6], [np.inf, np.inf, np.inf]), x_scale="jac",
            xtol=1e-14, ftol=1e-14, gtol=1e-14,
        )
        if best is None or sol.cost < best.cost:
            best = sol
    r = np.abs(best.fun)
    rmax, rmean = float(r.max()), float(r.mean())
    if not (rmax <= max_tol and rmean <= mean_tol):
        raise FitDiverged(f"Gaussian fit residual max={rmax:.3%} mean={rmean:.3%} exceeds bounds")
    a, s1, s2 = best.x
    return float(a * peak), float(abs(s1)), float(abs(s2)), rmax, rmean


@functools.lru_cache(maxsize=8)
def fit_gaussian(cfg: ArrayConfig, theta3: float, k3: float, n_grid: int = 64,
                 max_tol: float = 0.05, mean_tol: float = 0.01) -> GaussianFit:
    """Least-squares Gaussian fit of the reference codeword's main lobe.

    The lobe of ``gamma(0, 0)`` is sampled on an ``n_grid x n_grid`` grid
    over ``[-theta3, theta3] x [-k3, k3]`` and fitted with a trust-region
    solver from four starts.  Raises FitDiverged if no start meets the
    residual bounds (fractions of the peak gain).
    """
    omegas, bs, gain = gaussian_fit_grid(cfg, theta3, k3, n_grid)
    # work in units of 1/N_t and 1/N_t**2 so all parameters are O(1)
    a, s1, s2, rmax, rmean = fit_gaussian_surface(
        omegas * cfg.n_t, bs * cfg.n_t**2, gain, max_tol, mean_tol)
    return GaussianFit(
        amplitude=a,
        sigma_angle=s1 / cfg.n_t,
        sigma_k=s2 / cfg.n_t**2,
        domain=(theta3, k3),
        max_residual=rmax,
        mean_residual=rmean,
    )


def ga_samples(intervals, m3: int):
    (pl, pr), (dl, dr) = intervals
    return np.linspace(pl, pr, m3), np.linspace(dl, dr, m3)


def ga_solve(thetas, ks, amplitudes, fit: GaussianFit, floor: float = 1e-6):
    """Amplitude-weighted LS for ``(omega, b)`` from probes on a Gaussian lobe.

    ``thetas``, ``ks`` and ``amplitudes`` are flat arrays of equal length.
    Amplitudes are clamped to ``floor * max`` before the logarithm.
    """
    t = np.asarray(thetas, float)
    k = np.asarray(ks, float)
    a = np.abs(np.asarray(amplitudes))
    a = np.maximum(a, floor * a.max())
    s1, s2 = fit.sigma_angle**2, fit.sigma_k**2
    # shift the origin to the first sample; the LS solution is unchanged
    ct, ck = t[0], k[0]
    dt, dk = t - ct, k - ck
    A = np.column_stack([a * dt / s1, a * dk / s2, a])
    rhs = a * np.log(a) + a * dt**2 / (2 * s1) + a * dk**2 / (2 * s2)
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise SingularNormalMatrix("degenerate GA sampling: a column of the LS matrix vanishes")
    z, _, rank, _ = np.linalg.lstsq(A / norms, rhs, rcond=None)
    if rank < 3:
        raise SingularNormalMatrix("degenerate GA sampling: LS matrix is rank deficient")
    z = z / norms
    return float(ct + z[0]), float(ck + z[1])


def ga_estimate(sounder: Sounder, state: NeighborSearchState, intervals, m3: int,
                fit: GaussianFit, floor: float = 1e-6) -> tuple[float, float]:
    """Probe the ``m3 x m3`` grid over ``intervals`` and solve for ``(omega, b)``.

    The converged centre is a corner of the grid, and its measurement is taken
    from the search history, so this adds ``m3**2 - 1`` probes.
    """
    if m3 < 2:
        raise ValueError("M3 must be at least 2")
    th, kk = ga_samples(intervals, m3)
    tt, kg = np.meshgrid(th, kk, indexing="ij")
    tt, kg = tt.ravel(), kg.ravel()
    c_om, c_b = state.estimate
    y = np.empty(tt.size, dtype=complex)
    is_center = np.isclose(tt, c_om, rtol=0, atol=1e-15) & np.isclose(kg, c_b, rtol=0, atol=1e-18)
    if is_center.sum() == 1:
        y[is_center] = state.history[state.center]
    else:
        is_center[:] = False
    y[~is_center] = sounder.probe(tt[~is_center], kg[~is_center])
    return ga_solve(tt, kg, y, fit, floor)


@dataclass(frozen=True)
class FinalEstimate:
    omega: float
    b: float
    range_m: float
    stage: str

    @property
    def position(self) -> np.ndarray:
        """``(x, y)`` of the source; non-finite when the estimate is far-field."""
        w = np.arcsin(np.clip(self.omega, -1.0, 1.0))
        return np.array([self.range_m * np.cos(w), self.range_m * np.sin(w)])


def finalize(omega: float, b: float, wavelength: float, stage: str = "ga") -> FinalEstimate:
    """Attach the range; a non-positive ``b`` (or ``|omega| >= 1``) gives ``inf``."""
    near = b > 0 and abs(omega) < 1
    rng = float(range_from_surrogate(omega, b, wavelength)) if near else float("inf")
    return FinalEstimate(float(omega), float(b), rng, stage)
