"""Classical reference methods: subspace AoA search over a grid and
least-squares channel recovery at fixed AoAs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import AngleGrid, empirical_covariance, grid_steering
from .signal_model import AoAVector, ObservationSet, array_matrix
from .signal_model import _frozen

# pseudo-spectrum denominator floor; keeps noiseless peaks finite
_EIGEN_FLOOR = 1e-8
_MAX_LS_CONDITION = 1e12


@dataclass(frozen=True)
class MusicSpectrum:
    """Pseudo-spectrum over a grid plus its top-K peak angles.

    degraded is set when the grid produced fewer strict local maxima than
    requested and the remainder was padded with the highest off-peak
    values.
    """

    grid: AngleGrid
    values: np.ndarray
    peaks: tuple[float, ...]
    degraded: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n_points,):
            raise ValueError("one spectrum value per grid point required")
        if np.any(vals < 0):
            raise ValueError("spectrum values must be non-negative")
        peaks = np.asarray(self.peaks, dtype=float)
        if np.any(np.diff(peaks) < 0):
            raise ValueError("peaks must be sorted ascending")
        grid_angles = self.grid.angles()
        for p in peaks:
            if np.min(np.abs(grid_angles - p)) > 1e-12:
                raise ValueError("peaks must lie on the grid")
        object.__setattr__(self, "values", _frozen(vals))


def music_estimate(obs: ObservationSet, grid: AngleGrid, k_sources: int) -> MusicSpectrum:
    """Subspace AoA estimation over the grid.

    The empirical covariance is eigendecomposed; the eigenvectors of the
    N-K smallest eigenvalues span the noise subspace E. The spectrum is
    1 / max(||E^H a(theta)||^2, 1e-8) and the estimates are the K largest
    strict local maxima (3-point test, endpoints eligible), ties broken
    toward the smaller angle.
    """
    if k_sources < 1:
        raise ValueError("k_sources must be at least 1")
    n = obs.array.n_antennas
    if obs.n_snapshots < k_sources:
        raise ValueError("need at least as many snapshots as sources")
    if n <= k_sources:
        raise ValueError("need more antennas than sources")
    if grid.n_points < k_sources:
        raise ValueError("grid too small for the requested number of peaks")

    cov = empirical_covariance(obs)
    _eigvals, eigvecs = np.linalg.eigh(cov)
    noise_basis = eigvecs[:, : n - k_sources]

    steer = grid_steering(obs.array, grid)
    denom = np.sum(np.abs(noise_basis.conj().T @ steer) ** 2, axis=0)
    values = 1.0 / np.maximum(denom, _EIGEN_FLOOR)
    angles = grid.angles()

    g = values.size
    interior = np.zeros(g, dtype=bool)
    if g >= 2:
        interior[0] = values[0] > values[1]
        interior[-1] = values[-1] > values[-2]
    if g >= 3:
        interior[1:-1] = (values[1:-1] > values[:-2]) & (values[1:-1] > values[2:])
    maxima_idx = np.nonzero(interior)[0]

    # tie toward the smaller angle: stable lexsort, value descending first
    order = np.lexsort((angles[maxima_idx], -values[maxima_idx]))
    chosen = list(maxima_idx[order][:k_sources])
    degraded = len(chosen) < k_sources
    if degraded:
        rest = np.setdiff1d(np.arange(g), np.asarray(chosen, dtype=int))
        fill_order = np.lexsort((angles[rest], -values[rest]))
        need = k_sources - len(chosen)
        chosen.extend(rest[fill_order][:need])

    peak_angles = tuple(sorted(float(angles[i]) for i in chosen))
    return MusicSpectrum(grid=grid, values=values, peaks=peak_angles, degraded=degraded)


def ls_channel(obs: ObservationSet, aoas: AoAVector) -> np.ndarray:
    """Least-squares gains at fixed AoAs: per snapshot the minimizer of
    ||y_m - A(aoas) h||, i.e. (A^H A)^{-1} A^H y_m, computed by SVD.

    Rejects steering matrices with condition number above 1e12.
    """
    a_hat = array_matrix(obs.array, aoas)
    if np.linalg.cond(a_hat) > _MAX_LS_CONDITION:
        raise ValueError("steering matrix is numerically rank-deficient")
    solution, _res, _rank, _sv = np.linalg.lstsq(a_hat, obs.signal, rcond=None)
    return solution
