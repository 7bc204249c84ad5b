"""Physical model of the uplink: uniform linear array response, block-fading
complex Gaussian channels, and received-signal synthesis.

Conventions used across the package:
- angles are radians internally; degrees appear only at the CLI boundary
- the received block is an N x M complex matrix Y (antennas x snapshots)
- channel gains are a K x M complex matrix, one column per snapshot
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _frozen(a: np.ndarray) -> np.ndarray:
    """Copy an array and lock it; domain types hold immutable values."""
    out = np.array(a, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear array geometry.

    Parameters
    ----------
    n_antennas : int
        Number of elements N, at least 2.
    spacing_ratio : float
        Element spacing over carrier wavelength d/lambda. Only the ratio
        enters the model. Must be >= 0.5.
    """

    n_antennas: int
    spacing_ratio: float

    def __post_init__(self):
        if not (isinstance(self.n_antennas, (int, np.integer)) and self.n_antennas >= 2):
            raise ValueError("n_antennas must be an integer >= 2")
        if not (np.isfinite(self.spacing_ratio) and self.spacing_ratio >= 0.5):
            raise ValueError("spacing_ratio must be finite and >= 0.5")


@dataclass(frozen=True)
class AoAVector:
    """Angles of arrival for the K users, radians in [-pi/2, pi/2]."""

    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).reshape(-1)
        if a.size == 0:
            raise ValueError("at least one angle required")
        if np.any(np.abs(a) > np.pi / 2 + 1e-12):
            raise ValueError("angles must lie in [-pi/2, pi/2]")
        object.__setattr__(self, "angles", _frozen(a))

    @property
    def k_users(self) -> int:
        return self.angles.size


@dataclass(frozen=True)
class ChannelPrior:
    """Per-snapshot complex Gaussian prior CN(mean, covariance) on the K gains.

    covariance must be Hermitian (to 1e-12 element-wise) and positive
    definite; both are checked at construction.
    """

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mean, dtype=complex).reshape(-1)
        cov = np.asarray(self.covariance, dtype=complex)
        if cov.shape != (mu.size, mu.size):
            raise ValueError("covariance must be K x K for a K-vector mean")
        if np.max(np.abs(cov - cov.conj().T)) > 1e-12:
            raise ValueError("covariance must be Hermitian within 1e-12")
        eigvals = np.linalg.eigvalsh(cov)
        if np.min(eigvals) <= 0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mean", _frozen(mu))
        object.__setattr__(self, "covariance", _frozen(cov))

    @property
    def k_users(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class ChannelRealization:
    """Sampled block-fading channel: gains h, path gains beta, path angles psi.

    gains[k, m] = path_gains[k, m] * exp(j * path_angles[k, m]); the polar
    pieces are derived from the sampled complex gains, with the angle taken
    as the two-argument angle in (-pi, pi].
    """

    gains: np.ndarray
    path_gains: np.ndarray
    path_angles: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=complex)
        b = np.asarray(self.path_gains, dtype=float)
        p = np.asarray(self.path_angles, dtype=float)
        if g.ndim != 2 or b.shape != g.shape or p.shape != g.shape:
            raise ValueError("gains, path_gains, path_angles must share a K x M shape")
        if np.any(b < 0):
            raise ValueError("path_gains must be non-negative")
        if np.max(np.abs(b * np.exp(1j * p) - g)) > 1e-12 * max(1.0, np.max(np.abs(g))):
            raise ValueError("polar decomposition inconsistent with gains")
        object.__setattr__(self, "gains", _frozen(g))
        object.__setattr__(self, "path_gains", _frozen(b))
        object.__setattr__(self, "path_angles", _frozen(p))

    @property
    def n_snapshots(self) -> int:
        return self.gains.shape[1]

    @classmethod
    def from_gains(cls, gains: np.ndarray) -> "ChannelRealization":
        g = np.asarray(gains, dtype=complex)
        return cls(gains=g, path_gains=np.abs(g), path_angles=np.angle(g))


@dataclass(frozen=True)
class ObservationSet:
    """One received block: signal Y (N x M), known noise variance, geometry."""

    signal: np.ndarray
    noise_variance: float
    array: ArrayConfig

    def __post_init__(self):
        y = np.asarray(self.signal, dtype=complex)
        if y.ndim != 2:
            raise ValueError("signal must be an N x M matrix")
        if y.shape[0] != self.array.n_antennas:
            raise ValueError("signal row count must equal array.n_antennas")
        if not (np.isfinite(self.noise_variance) and self.noise_variance >= 0):
            raise ValueError("noise_variance must be finite and >= 0")
        object.__setattr__(self, "signal", _frozen(y))

    @property
    def n_snapshots(self) -> int:
        return self.signal.shape[1]


def array_response(array: ArrayConfig, theta: float) -> np.ndarray:
    """Array response (steering) vector for a plane wave from angle theta.

    Element n (0-indexed) is exp(-j * 2*pi * (d/lambda) * n * sin(theta)).
    Element 0 is exactly 1, every element has unit magnitude.
    """
    n = np.arange(array.n_antennas)
    return np.exp(-2j * np.pi * array.spacing_ratio * n * np.sin(theta))


def array_matrix(array: ArrayConfig, aoas: AoAVector) -> np.ndarray:
    """N x K matrix whose column k is array_response at aoas.angles[k]."""
    n = np.arange(array.n_antennas)[:, None]
    return np.exp(-2j * np.pi * array.spacing_ratio * n * np.sin(aoas.angles)[None, :])


def sample_channel(
    prior: ChannelPrior, n_snapshots: int, rng: np.random.Generator
) -> ChannelRealization:
    """Draw M i.i.d. per-snapshot gain vectors from CN(mean, covariance).

    Circular symmetry: real and imaginary parts of the whitened vector are
    i.i.d. N(0, 1/2). Raises if the prior covariance has no Cholesky factor.
    """
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be >= 1")
    try:
        chol = np.linalg.cholesky(prior.covariance)
    except np.linalg.LinAlgError as exc:
        raise ValueError("prior covariance is not positive definite") from exc
    k = prior.k_users
    eps = rng.standard_normal((k, n_snapshots)) + 1j * rng.standard_normal((k, n_snapshots))
    eps *= np.sqrt(0.5)
    gains = prior.mean[:, None] + chol @ eps
    return ChannelRealization.from_gains(gains)


def synthesize_observation(
    array: ArrayConfig,
    aoas: AoAVector,
    channel: ChannelRealization,
    noise_variance: float,
    rng: np.random.Generator,
) -> ObservationSet:
    """Received block Y = A(theta) H + noise, noise i.i.d. CN(0, sigma^2).

    With noise_variance = 0 the output is exactly A(theta) H.
    """
    if noise_variance < 0:
        raise ValueError("noise_variance must be >= 0")
    if channel.gains.shape[0] != aoas.k_users:
        raise ValueError("channel user count must match aoas")
    a = array_matrix(array, aoas)
    y = a @ channel.gains
    if noise_variance > 0:
        m = channel.n_snapshots
        noise = rng.standard_normal((array.n_antennas, m)) + 1j * rng.standard_normal(
            (array.n_antennas, m)
        )
        y = y + np.sqrt(noise_variance / 2) * noise
    return ObservationSet(signal=y, noise_variance=float(noise_variance), array=array)


def snr_to_noise_variance(
    snr_db: float, array: ArrayConfig, prior: ChannelPrior, aoas: AoAVector
) -> float:
    """Noise variance for a target average receive SNR per antenna.

    Definition (recorded in the README and in benchmark metadata):

        sigma^2 = E[ ||A(theta) h||^2 ] / (N * 10^(snr_db/10)),
        E[ ||A(theta) h||^2 ] = tr(A Sigma_h A^H) + mu_h^H A^H A mu_h.

    snr_db = +inf yields exactly 0 (noiseless).
    """
    a = array_matrix(array, aoas)
    gram = a.conj().T @ a
    power = float(
        np.real(np.trace(gram @ prior.covariance))
        + np.real(prior.mean.conj() @ gram @ prior.mean)
    )
    if np.isposinf(snr_db):
        return 0.0
    return power / (array.n_antennas * 10.0 ** (snr_db / 10.0))
