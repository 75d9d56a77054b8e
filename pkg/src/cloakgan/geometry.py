"""Shell geometry: random generation, quadrant mirroring, and rasterization.

Two raster representations are used throughout the pipeline and share one
pixel convention that both the networks and the solver rely on:

* quadrant image: ``(S, S)`` uint8 array of one shell quadrant, values 0/1.
  Pixel ``(i, j)`` covers the physical box
  ``[j*R2/S, (j+1)*R2/S] x [i*R2/S, (i+1)*R2/S]`` in (x, y) micrometres,
  i.e. row index runs along +y, column index along +x.
* full image: ``(2S, 2S)`` uint8 array covering ``[-R2, R2]^2`` with the same
  pixel pitch; row 0 sits at y = -R2. The first quadrant of the full image is
  ``full[S:, S:]`` and equals the quadrant image.

All sampling is at cell/pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError

MIN_RESOLUTION = 10.0  # cells per vacuum wavelength; below this the FDFD oracle is junk


@dataclass(frozen=True)
class DomainSpec:
    """Physical layout of the scattering problem (lengths in micrometres)."""

    r_object: float = 1.0
    r_shell: float = 3.0
    r_domain: float = 12.0
    wavelength: float = 1.2
    eps_shell: float = 2.0
    eps_background: float = 1.0
    image_size: int = 64

    def __post_init__(self):
        if not (0 < self.r_object < self.r_shell < self.r_domain):
            raise ConfigurationError(
                f"need 0 < r_object < r_shell < r_domain, got "
                f"{self.r_object}, {self.r_shell}, {self.r_domain}"
            )
        if self.eps_shell < 1 or self.eps_background < 1:
            raise ConfigurationError("relative permittivities must be >= 1")
        if self.image_size < 8 or self.image_size % 2:
            raise ConfigurationError("image_size must be even and >= 8")


@dataclass
class PermittivityMap:
    """Relative permittivity over the square simulation region (no PML).

    ``eps`` and ``pec_mask`` are ``(n, n)`` arrays; cell ``(i, j)`` has its
    center at ``(-half + (j+0.5)*cell_size, -half + (i+0.5)*cell_size)`` with
    ``half = n*cell_size/2``. The PEC disk always sits in the middle.
    """

    eps: np.ndarray
    cell_size: float
    pec_mask: np.ndarray
    spec: DomainSpec = field(repr=False)

    @property
    def n(self) -> int:
        return self.eps.shape[0]

    def cell_centers(self):
        """(x, y) coordinate arrays of cell centers, each shaped (n, n)."""
        n = self.n
        half = n * self.cell_size / 2.0
        c = -half + (np.arange(n) + 0.5) * self.cell_size
        return np.meshgrid(c, c, indexing="xy")


def quadrant_pixel_centers(spec: DomainSpec):
    """(x, y) center coordinates of each quadrant pixel, both (S, S)."""
    s = spec.image_size
    pitch = spec.r_shell / s
    c = (np.arange(s) + 0.5) * pitch
    x, y = np.meshgrid(c, c, indexing="xy")
    return x, y


def annulus_mask(spec: DomainSpec) -> np.ndarray:
    """Quadrant pixels whose center lies strictly inside R1 < r < R2."""
    x, y = quadrant_pixel_centers(spec)
    r = np.hypot(x, y)
    return ((r > spec.r_object) & (r < spec.r_shell)).astype(np.uint8)


def validate_quadrant(q: np.ndarray, spec: DomainSpec) -> None:
    """Raise if ``q`` violates the quadrant-image invariants."""
    s = spec.image_size
    if q.shape != (s, s):
        raise ContractError(f"quadrant shape {q.shape}, expected {(s, s)}")
    if not np.isin(q, (0, 1)).all():
        raise ContractError("quadrant pixels must be exactly 0 or 1")
    if np.any(q & (1 - annulus_mask(spec))):
        raise ContractError("quadrant has material outside the shell annulus")


def random_shell(
    spec: DomainSpec,
    rng_seed: int,
    curve_count: int,
    curve_scale: float,
) -> np.ndarray:
    """Union of ``curve_count`` random filled ellipses, clipped to the annulus.

    Each ellipse draws, in order: center (uniform over the quadrant bounding
    box [0, R2]^2), two semi-axes (uniform in [0.2, 1.0]*curve_scale) and a
    rotation (uniform in [0, pi)). Deterministic for a fixed seed.
    """
    if curve_count < 0:
        raise ContractError("curve_count must be >= 0")
    rng = np.random.default_rng(rng_seed)
    s = spec.image_size
    filled = np.zeros((s, s), dtype=bool)
    x, y = quadrant_pixel_centers(spec)
    for _ in range(curve_count):
        cx = rng.uniform(0.0, spec.r_shell)
        cy = rng.uniform(0.0, spec.r_shell)
        a = rng.uniform(0.2, 1.0) * curve_scale
        b = rng.uniform(0.2, 1.0) * curve_scale
        theta = rng.uniform(0.0, np.pi)
        if a <= 0 or b <= 0:
            continue
        ct, st = np.cos(theta), np.sin(theta)
        u = (x - cx) * ct + (y - cy) * st
        v = -(x - cx) * st + (y - cy) * ct
        filled |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return (filled & annulus_mask(spec).astype(bool)).astype(np.uint8)


def mirror_expand(q: np.ndarray) -> np.ndarray:
    """Expand one quadrant to the full shell image by reflecting about both axes."""
    top = np.hstack([q[:, ::-1], q])          # y > 0 half, x mirrored on the left
    return np.vstack([top[::-1, :], top])     # y < 0 half below


def restrict_quadrant(full: np.ndarray) -> np.ndarray:
    """First-quadrant block of a full shell image (inverse of mirror_expand)."""
    s = full.shape[0] // 2
    return full[s:, s:]


def is_mirror_symmetric(full: np.ndarray) -> bool:
    return bool(np.array_equal(full, full[::-1, :]) and np.array_equal(full, full[:, ::-1]))


def rasterize(full: np.ndarray, spec: DomainSpec, grid_resolution: float) -> PermittivityMap:
    """Sample a full shell image onto the solver's permittivity grid.

    The grid covers the square bounding the circular domain (half-width
    rounded up to a whole number of cells). Cells with center at r < R1 are
    PEC; cells whose center falls on a 1-pixel of ``full`` get eps_shell;
    everything else is eps_background. Nearest-pixel sampling.
    """
    if grid_resolution < MIN_RESOLUTION:
        raise ConfigurationError(
            f"grid_resolution {grid_resolution} below minimum {MIN_RESOLUTION} cells/wavelength"
        )
    two_s = full.shape[0]
    if full.ndim != 2 or full.shape != (two_s, two_s) or two_s != 2 * spec.image_size:
        raise ContractError(f"full image must be {2 * spec.image_size} square, got {full.shape}")

    h = spec.wavelength / grid_resolution
    # tolerance keeps the cell count stable when r_domain/h is a whole number
    # up to float representation noise
    n_half = int(np.ceil(spec.r_domain / h - 1e-9))
    n = 2 * n_half
    half = n_half * h
    c = -half + (np.arange(n) + 0.5) * h
    x, y = np.meshgrid(c, c, indexing="xy")
    r = np.hypot(x, y)

    pec = r < spec.r_object
    eps = np.full((n, n), spec.eps_background, dtype=np.float64)

    pitch = spec.r_shell / spec.image_size
    jj = np.floor((x + spec.r_shell) / pitch).astype(np.int64)
    ii = np.floor((y + spec.r_shell) / pitch).astype(np.int64)
    inside = (jj >= 0) & (jj < two_s) & (ii >= 0) & (ii < two_s)
    hits = np.zeros((n, n), dtype=bool)
    hits[inside] = full[ii[inside], jj[inside]] == 1
    eps[hits & ~pec] = spec.eps_shell
    return PermittivityMap(eps=eps, cell_size=h, pec_mask=pec, spec=spec)
