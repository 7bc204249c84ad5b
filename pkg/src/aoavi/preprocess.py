"""Data preprocessing: empirical covariance, codebook-correlation pseudo
labels, and sectorization of the angle search range."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .signal_model import ArrayConfig, ObservationSet, _frozen

_HALF_PI = np.pi / 2


@dataclass(frozen=True)
class AngleGrid:
    """Uniform inclusive grid of candidate angles, radians."""

    min_angle: float
    max_angle: float
    step: float

    def __post_init__(self):
        if not self.min_angle < self.max_angle:
            raise ValueError("min_angle must be < max_angle")
        if abs(self.min_angle) > _HALF_PI + 1e-9 or abs(self.max_angle) > _HALF_PI + 1e-9:
            raise ValueError("grid must lie within [-pi/2, pi/2]")
        if not (self.step > 0 and (self.max_angle - self.min_angle) / self.step >= 1):
            raise ValueError("step must be > 0 and span at least one step")

    @property
    def n_points(self) -> int:
        # inclusive endpoints; tolerate rounding in (max-min)/step
        return int(np.floor((self.max_angle - self.min_angle) / self.step + 1e-9)) + 1

    def angles(self) -> np.ndarray:
        return self.min_angle + self.step * np.arange(self.n_points)


@dataclass(frozen=True)
class PseudoLabels:
    """Top-K codebook angles and their correlation values, sorted ascending."""

    angles: np.ndarray
    correlations: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).reshape(-1)
        c = np.asarray(self.correlations, dtype=float).reshape(-1)
        if a.size != c.size or a.size == 0:
            raise ValueError("angles and correlations must be equal-length, nonempty")
        if np.any(np.diff(a) <= 0):
            raise ValueError("angles must be strictly sorted ascending")
        if np.any(c < 0):
            raise ValueError("correlations must be non-negative")
        object.__setattr__(self, "angles", _frozen(a))
        object.__setattr__(self, "correlations", _frozen(c))


@dataclass(frozen=True)
class Sector:
    """Angular search sector [center - width/2, center + width/2], radians."""

    center: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("width must be positive")
        if self.center - self.width / 2 < -_HALF_PI - 1e-9 or self.center + self.width / 2 > _HALF_PI + 1e-9:
            raise ValueError("sector must lie within [-pi/2, pi/2]")

    @property
    def lo(self) -> float:
        return self.center - self.width / 2

    @property
    def hi(self) -> float:
        return self.center + self.width / 2

    @classmethod
    def full_range(cls) -> "Sector":
        return cls(center=0.0, width=np.pi)


def empirical_covariance(obs: ObservationSet) -> np.ndarray:
    """Empirical covariance R = (1/M) Y Y^H, exactly Hermitian PSD."""
    y = obs.signal
    r = (y @ y.conj().T) / obs.n_snapshots
    return (r + r.conj().T) / 2


@lru_cache(maxsize=8)
def _grid_steering(n_antennas: int, spacing_ratio: float, min_angle: float, step: float, n_points: int) -> np.ndarray:
    """Steering matrix over a grid, cached across Monte Carlo trials.

    Returned array is shared; treat as read-only.
    """
    angles = min_angle + step * np.arange(n_points)
    n = np.arange(n_antennas)[:, None]
    out = np.exp(-2j * np.pi * spacing_ratio * n * np.sin(angles)[None, :])
    out.setflags(write=False)
    return out


def grid_steering(array: ArrayConfig, grid: AngleGrid) -> np.ndarray:
    """N x G steering matrix with column g = array_response(grid angle g)."""
    return _grid_steering(array.n_antennas, array.spacing_ratio, grid.min_angle, grid.step, grid.n_points)


def codebook_correlation(obs: ObservationSet, theta: float) -> float:
    """Empirical correlation r(theta, Y) = (1/M) |1_M^T Y^H a(theta)|.

    Invariant to a global phase rotation of Y.
    """
    n = np.arange(obs.array.n_antennas)
    a = np.exp(-2j * np.pi * obs.array.spacing_ratio * n * np.sin(theta))
    return float(np.abs(np.sum(obs.signal.conj().T @ a)) / obs.n_snapshots)


def _correlation_profile(obs: ObservationSet, grid: AngleGrid) -> np.ndarray:
    """codebook_correlation evaluated at every grid angle (vectorized)."""
    steer = grid_steering(obs.array, grid)
    # sum_m y_m^H a(theta) = (column-summed Y)^H a(theta)
    colsum = np.sum(obs.signal, axis=1)
    return np.abs(colsum.conj() @ steer) / obs.n_snapshots


def pseudo_labels(
    obs: ObservationSet,
    grid: AngleGrid,
    k_users: int,
    suppression_radius: float = 0.0,
) -> PseudoLabels:
    """K grid angles with the largest codebook correlations.

    Ties break toward the smaller angle; the result is sorted ascending.
    Equivalent to maximizing the sum of K correlations over distinct grid
    angles, since the objective is separable.

    With ``suppression_radius > 0`` selection is greedy in correlation
    order and any candidate closer than the radius (radians) to an
    already selected angle is skipped, so two picks never straddle one
    physical source. The default keeps the literal top-K behaviour. If
    suppression exhausts the grid before K picks, the remaining slots
    are filled by the best suppressed candidates (deterministically).
    """
    if grid.n_points < k_users:
        raise ValueError("grid must contain at least k_users points")
    if suppression_radius < 0:
        raise ValueError("suppression_radius must be non-negative")
    corr = _correlation_profile(obs, grid)
    angles = grid.angles()
    # stable mergesort on -corr keeps ascending-angle order among exact ties
    ranked = np.argsort(-corr, kind="stable")
    if suppression_radius > 0.0:
        chosen: list[int] = []
        for idx in ranked:
            if all(abs(angles[idx] - angles[j]) >= suppression_radius for j in chosen):
                chosen.append(int(idx))
                if len(chosen) == k_users:
                    break
        if len(chosen) < k_users:
            taken = set(chosen)
            for idx in ranked:
                if int(idx) not in taken:
                    chosen.append(int(idx))
                    taken.add(int(idx))
                    if len(chosen) == k_users:
                        break
        order = np.asarray(chosen, dtype=int)
    else:
        order = ranked[:k_users]
    order = order[np.argsort(angles[order])]
    return PseudoLabels(angles=angles[order], correlations=corr[order])


def sector_grid(sector: Sector, step: float) -> AngleGrid:
    """Uniform grid spanning exactly the sector, inclusive endpoints."""
    if not step > 0:
        raise ValueError("step must be positive")
    # clip rounding spill so the grid type invariant holds at +-pi/2
    lo = max(sector.lo, -_HALF_PI)
    hi = min(sector.hi, _HALF_PI)
    return AngleGrid(min_angle=lo, max_angle=hi, step=step)
