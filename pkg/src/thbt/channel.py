"""Array geometry, steering vectors and random multipath channels.

Antennas are indexed symmetrically, ``n = -N, ..., N`` with ``N_t = 2N + 1``,
and every vector in this package is stored in ascending ``n``.  A path is
described by its complex gain, the sine of its angle ``omega`` and its range.
The quadratic (Fresnel) approximation of the per-antenna distance turns the
spherical wavefront into a chirp ``exp(j*pi*(omega*n - b*n**2))`` whose
curvature ``b = lambda*(1 - omega**2)/(4*r)`` is called the surrogate distance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import EmptyPathList, FresnelBoundViolation, InvalidConfig, InvalidScenario


@dataclass(frozen=True)
class ArrayConfig:
    """Half-wavelength uniform linear array with an odd number of antennas.

    Args:
        n_half: N, so that the array has ``2N + 1`` elements.
        wavelength: carrier wavelength in meters.
    """

    n_half: int = 256
    wavelength: float = 0.005

    def __post_init__(self):
        if int(self.n_half) != self.n_half or self.n_half < 1:
            raise InvalidConfig(f"n_half must be a positive integer, got {self.n_half!r}")
        if not self.wavelength > 0:
            raise InvalidConfig(f"wavelength must be positive, got {self.wavelength!r}")

    @property
    def n_t(self) -> int:
        return 2 * self.n_half + 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.n_half, self.n_half + 1)

    @property
    def fresnel_bound(self) -> float:
        """Smallest range (m) for which the quadratic distance model holds."""
        return 0.5 * np.sqrt(self.n_half**3 * self.wavelength**2)


@dataclass(frozen=True)
class PathParams:
    gain: complex
    omega: float
    range: float

    def __post_init__(self):
        if abs(self.omega) > 1:
            raise InvalidScenario(f"|omega| must be <= 1, got {self.omega}")
        if not self.range > 0:
            raise InvalidScenario(f"range must be positive, got {self.range}")


@dataclass(frozen=True)
class SurrogateCoords:
    """Angle-sine and surrogate distance.  ``b`` may be negative for codewords."""

    omega: float
    b: float

    @property
    def as_tuple(self) -> tuple[float, float]:
        return (self.omega, self.b)


def exact_distance(cfg: ArrayConfig, path: PathParams, n) -> np.ndarray | float:
    lam = cfg.wavelength
    r = path.range
    n = np.asarray(n, dtype=float)
    return np.sqrt(r**2 + n**2 * lam**2 / 4 - n * r * path.omega * lam)


def approx_distance(cfg: ArrayConfig, path: PathParams, n, strict: bool = True):
    """Second-order expansion of :func:`exact_distance`.

    Raises FresnelBoundViolation when ``strict`` and the range is inside the
    region where the expansion is not trusted.
    """
    if strict and path.range < cfg.fresnel_bound:
        raise FresnelBoundViolation(
            f"range {path.range:.4g} m below Fresnel bound {cfg.fresnel_bound:.4g} m"
        )
    lam = cfg.wavelength
    r = path.range
    n = np.asarray(n, dtype=float)
    return r - n * path.omega * lam / 2 + n**2 * lam**2 * (1 - path.omega**2) / (8 * r)


def surrogate_distance(omega, r, wavelength):
    return wavelength * (1 - np.square(omega)) / (4 * np.asarray(r, dtype=float))


def range_from_surrogate(omega, b, wavelength):
    return wavelength * (1 - np.square(omega)) / (4 * np.asarray(b, dtype=float))


def to_surrogate(path: PathParams, wavelength: float) -> SurrogateCoords:
    return SurrogateCoords(path.omega, float(surrogate_distance(path.omega, path.range, wavelength)))


def steering_exact(cfg: ArrayConfig, path: PathParams) -> np.ndarray:
    """Spherical-wave steering vector, phase referenced to the array center."""
    dist = exact_distance(cfg, path, cfg.indices)
    phase = -2 * np.pi / cfg.wavelength * (dist - path.range)
    return np.exp(1j * phase) / np.sqrt(cfg.n_t)


def steering_surrogate(cfg: ArrayConfig, omega, b=0.0) -> np.ndarray:
    """Chirp steering vector(s) ``gamma(omega, b)``.

    ``omega`` and ``b`` broadcast against each other; the antenna axis is
    appended last, so scalar inputs give shape ``(N_t,)`` and arrays of shape
    ``S`` give ``S + (N_t,)``.
    """
    if isinstance(omega, SurrogateCoords):
        omega, b = omega.omega, omega.b
    n = cfg.indices
    omega = np.asarray(omega, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    return np.exp(1j * np.pi * (omega * n - b * n**2)) / np.sqrt(cfg.n_t)


def assemble_channel(cfg: ArrayConfig, paths: Sequence[PathParams]) -> np.ndarray:
    if len(paths) == 0:
        raise EmptyPathList("a channel needs at least one path")
    h = np.zeros(cfg.n_t, dtype=complex)
    for p in paths:
        h += p.gain * steering_exact(cfg, p)
    return h


@dataclass(frozen=True)
class Scenario:
    """Random multipath scenario.

    ``gain_std`` lists the standard deviation of each path's CN(0, std**2)
    gain; its length is the number of paths and the first entry is the
    line-of-sight path.
    """

    angle_range: tuple[float, float] = (-np.sqrt(3) / 2, np.sqrt(3) / 2)
    distance_range: tuple[float, float] = (10.0, 200.0)
    gain_std: tuple[float, ...] = (1.0, 0.1, 0.1)

    @property
    def n_paths(self) -> int:
        return len(self.gain_std)

    def validate(self, cfg: ArrayConfig) -> None:
        lo, hi = self.angle_range
        if not (-1 <= lo <= hi <= 1):
            raise InvalidScenario(f"angle range {self.angle_range} must be ordered within [-1, 1]")
        rlo, rhi = self.distance_range
        if not (0 < rlo <= rhi):
            raise InvalidScenario(f"distance range {self.distance_range} must be ordered and positive")
        if rhi <= cfg.fresnel_bound:
            raise InvalidScenario(
                f"distance range {self.distance_range} lies below the Fresnel bound "
                f"{cfg.fresnel_bound:.4g} m"
            )
        if self.n_paths < 1:
            raise InvalidScenario("scenario needs L >= 1 paths")
        if any(s < 0 for s in self.gain_std):
            raise InvalidScenario("gain standard deviations must be non-negative")

    def min_range(self, cfg: ArrayConfig) -> float:
        """Smallest range that :func:`sample_channel` can return."""
        return max(self.distance_range[0], cfg.fresnel_bound)


def sample_paths(cfg: ArrayConfig, rng, scenario: Scenario) -> list[PathParams]:
    scenario.validate(cfg)
    rng = np.random.default_rng(rng)
    lo, hi = scenario.distance_range
    bound = cfg.fresnel_bound
    paths = []
    for std in scenario.gain_std:
        omega = rng.uniform(*scenario.angle_range)
        r = rng.uniform(lo, hi)
        while r < bound:  # rejection, not clamping
            r = rng.uniform(lo, hi)
        g = std * (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
        paths.append(PathParams(complex(g), float(omega), float(r)))
    return paths


def sample_channel(cfg: ArrayConfig, rng, scenario: Scenario) -> tuple[np.ndarray, list[PathParams]]:
    paths = sample_paths(cfg, rng, scenario)
    return assemble_channel(cfg, paths), paths


@dataclass
class Sounder:
    """Beam-training front end: probes codewords against a fixed channel.

    Each call to :meth:`probe` returns ``y = h^H v + eta`` per codeword with
    ``eta ~ CN(0, noise_var)`` and adds the number of codewords to ``count``.
    """

    cfg: ArrayConfig
    h: np.ndarray
    noise_var: float = 0.0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    count: int = 0

    def measure(self, codewords: np.ndarray) -> np.ndarray:
        codewords = np.atleast_2d(codewords)
        y = codewords @ np.conj(self.h)
        self.count += codewords.shape[0]
        if self.noise_var > 0:
            shape = y.shape
            noise = self.rng.standard_normal(shape) + 1j * self.rng.standard_normal(shape)
            y = y + np.sqrt(self.noise_var / 2) * noise
        return y

    def probe(self, theta, k) -> np.ndarray:
        """Measure the chirp codewords ``gamma(theta_i, k_i)``."""
        theta, k = np.broadcast_arrays(np.atleast_1d(theta), np.atleast_1d(k))
        return self.measure(steering_surrogate(self.cfg, theta.ravel(), k.ravel()))
