"""Channel generators: iid Gaussian, ray-based mmWave, and the beamspace map."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import DimensionError, ParameterError, SystemDims, vandermonde

HALF_PI = np.pi / 2.0


@dataclass(frozen=True)
class GaussianChannelParams:
    """Zero-mean iid prior, H_ij ~ CN(0, 2 * sigma_h_sq)."""

    sigma_h_sq: float = 0.5

    def __post_init__(self) -> None:
        if self.sigma_h_sq <= 0:
            raise ParameterError(f"sigma_h_sq must be > 0, got {self.sigma_h_sq}")


@dataclass(frozen=True)
class MmWaveChannelParams:
    """Clustered ray model: n_clusters clusters of rays_per_cluster rays each.

    Ray angles are a per-cluster central angle (uniform on [-pi/2, pi/2))
    plus Laplacian perturbations whose standard deviation is
    ``angle_spread_deg`` degrees, clipped back into [-pi/2, pi/2].
    """

    n_clusters: int = 2
    rays_per_cluster: tuple[int, ...] | int = 15
    angle_spread_deg: float = 10.0
    antenna_spacing_ratio: float = 0.5

    def __post_init__(self) -> None:
        if self.n_clusters < 1:
            raise ParameterError("n_clusters must be >= 1")
        rays = self.rays_per_cluster
        if np.isscalar(rays):
            rays = (int(rays),) * self.n_clusters
        else:
            rays = tuple(int(k) for k in rays)
        if len(rays) != self.n_clusters or any(k < 1 for k in rays):
            raise ParameterError("rays_per_cluster needs one value >= 1 per cluster")
        object.__setattr__(self, "rays_per_cluster", rays)
        if self.angle_spread_deg <= 0 or self.antenna_spacing_ratio <= 0:
            raise ParameterError("angle spread and antenna spacing must be > 0")


@dataclass(frozen=True)
class BeamspaceChannel:
    """Angle-domain representation C with H = U_r C U_t^H (unitary DFT factors)."""

    c_matrix: np.ndarray


def sample_gaussian_channel(dims: SystemDims, params: GaussianChannelParams, seed) -> np.ndarray:
    """iid entries CN(0, 2 * sigma_h_sq); each real dimension has variance sigma_h_sq."""
    rng = np.random.default_rng(seed)
    shape = (dims.n_r, dims.n_t)
    scale = np.sqrt(params.sigma_h_sq)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _ray_angles(rng, n_rays: int, spread_deg: float) -> np.ndarray:
    central = rng.uniform(-HALF_PI, HALF_PI)
    # Laplace scale = std / sqrt(2); spread is given in degrees
    scale = np.deg2rad(spread_deg) / np.sqrt(2.0)
    return np.clip(central + rng.laplace(0.0, scale, size=n_rays), -HALF_PI, HALF_PI)


def sample_mmwave_channel(dims: SystemDims, params: MmWaveChannelParams, seed) -> np.ndarray:
    """Ray-based channel H = (1/sqrt(N_c)) sum_n (1/sqrt(K_n)) sum_m g a_r a_t^H.

    Spatial frequencies are omega = 2 pi (d / lambda) sin(theta), ray gains
    are iid CN(0, 1), so E ||H||_F^2 = n_r * n_t.
    """
    rng = np.random.default_rng(seed)
    two_pi_spacing = 2.0 * np.pi * params.antenna_spacing_ratio
    h = np.zeros((dims.n_r, dims.n_t), dtype=np.complex128)
    for k_rays in params.rays_per_cluster:
        theta_r = _ray_angles(rng, k_rays, params.angle_spread_deg)
        theta_t = _ray_angles(rng, k_rays, params.angle_spread_deg)
        gains = (rng.standard_normal(k_rays) + 1j * rng.standard_normal(k_rays)) / np.sqrt(2.0)
        cluster = np.zeros_like(h)
        for g, tr, tt in zip(gains, theta_r, theta_t):
            a_r = vandermonde(two_pi_spacing * np.sin(tr), dims.n_r)
            a_t = vandermonde(two_pi_spacing * np.sin(tt), dims.n_t)
            cluster += g * np.outer(a_r, a_t.conj())
        h += cluster / np.sqrt(k_rays)
    return h / np.sqrt(params.n_clusters)


def dft_unitary(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries (1/sqrt(n)) e^{-j 2 pi k l / n}."""
    if n < 1:
        raise DimensionError(f"DFT size must be >= 1, got {n}")
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def to_beamspace(h: np.ndarray) -> BeamspaceChannel:
    """Angle-domain transform C = U_{n_r}^H H U_{n_t}."""
    h = np.asarray(h)
    if h.ndim != 2:
        raise DimensionError("channel must be a 2-D matrix")
    n_r, n_t = h.shape
    return BeamspaceChannel(dft_unitary(n_r).conj().T @ h @ dft_unitary(n_t))


def from_beamspace(c) -> np.ndarray:
    """Inverse transform H = U_{n_r} C U_{n_t}^H."""
    c_matrix = c.c_matrix if isinstance(c, BeamspaceChannel) else np.asarray(c)
    if c_matrix.ndim != 2:
        raise DimensionError("beamspace matrix must be 2-D")
    n_r, n_t = c_matrix.shape
    return dft_unitary(n_r) @ c_matrix @ dft_unitary(n_t).conj().T


def channel_to_csv(h: np.ndarray, path) -> None:
    """Export a complex matrix as CSV, row-major, alternating re,im per entry."""
    h = np.asarray(h)
    with open(path, "w", newline="") as fh:
        fh.write(f"# shape: {h.shape[0]},{h.shape[1]}\n")
        writer = csv.writer(fh)
        for row in h:
            cells = []
            for z in row:
                cells.extend([repr(float(z.real)), repr(float(z.imag))])
            writer.writerow(cells)


def channel_from_csv(path) -> np.ndarray:
    """Inverse of :func:`channel_to_csv`."""
    with open(path, newline="") as fh:
        header = fh.readline()
        n_r, n_t = (int(v) for v in header.split(":")[1].split(","))
        rows = []
        for cells in csv.reader(fh):
            values = np.asarray([float(c) for c in cells])
            rows.append(values[0::2] + 1j * values[1::2])
    h = np.asarray(rows)
    if h.shape != (n_r, n_t):
        raise DimensionError(f"CSV payload shape {h.shape} != header shape ({n_r}, {n_t})")
    return h
