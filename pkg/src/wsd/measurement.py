"""PSF-based measurement matrices for camera frames over a super-resolution grid.

Column ``i`` of the measurement matrix is the camera frame produced by a single
unit-flux emitter sitting at grid point ``i``.  Pixel values are the Gaussian
PSF mass integrated over each pixel footprint, so a molecule emitting ``P``
photons contributes ``P * A[:, i]`` expected photons.

Frames and grids are vectorized column-major everywhere in this package: pixel
``(r, c)`` of an ``R x C`` frame maps to index ``r + R * c``.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr


class GeometryError(ValueError):
    """Imaging geometry that cannot be realised on the grid."""


class ShapeError(ValueError):
    """Array shapes that do not match the operator or geometry."""


@dataclass(frozen=True)
class ImagingGeometry:
    """Camera and grid layout.

    The raw frame sits centred over the grid; grid points in the margin still
    send PSF tails into the edge pixels.  ``psf_sigma_grids`` is the Gaussian
    standard deviation in grid units.
    """

    grid_size_nm: float = 11.43
    pixel_size_nm: float = 45.714
    upsample_factor: int = 4
    raw_dims: tuple = (14, 14)
    grid_dims: tuple = (64, 64)
    psf_sigma_grids: float = 8.8
    bin_factor: int = 2

    def __post_init__(self):
        object.__setattr__(self, "raw_dims", tuple(int(v) for v in self.raw_dims))
        object.__setattr__(self, "grid_dims", tuple(int(v) for v in self.grid_dims))
        up = self.upsample_factor
        if int(up) != up or up < 1:
            raise GeometryError(f"upsample_factor must be a positive integer, got {up!r}")
        if self.grid_size_nm <= 0 or self.pixel_size_nm <= 0:
            raise GeometryError("grid and pixel sizes must be positive")
        ratio = self.pixel_size_nm / self.grid_size_nm
        # the default 45.714 / 11.43 is 3.9995; the grid size is quoted rounded
        if abs(ratio - up) > 1e-3 * up:
            raise GeometryError(
                f"pixel_size_nm / grid_size_nm = {ratio:.6g} is not the integer "
                f"upsample_factor {up}")
        if len(self.raw_dims) != 2 or len(self.grid_dims) != 2:
            raise GeometryError("raw_dims and grid_dims must be pairs")
        for raw, grid in zip(self.raw_dims, self.grid_dims):
            if raw < 1 or grid < 1:
                raise GeometryError("dimensions must be positive")
            margin = grid - raw * up
            if margin < 0 or margin % 2:
                raise GeometryError(
                    f"raw extent {raw}x{up} grids cannot be centred on {grid} grids")
        if not self.psf_sigma_grids > 0:
            raise GeometryError("psf_sigma_grids must be positive")
        if self.bin_factor < 1 or any(r % self.bin_factor for r in self.raw_dims):
            raise GeometryError(
                f"bin_factor {self.bin_factor} does not divide raw_dims {self.raw_dims}")

    @property
    def n_pixels(self):
        return self.raw_dims[0] * self.raw_dims[1]

    @property
    def n_grid(self):
        return self.grid_dims[0] * self.grid_dims[1]

    @property
    def grid_pitch_nm(self):
        """Grid pitch implied by the pixel size (unrounded grid size)."""
        return self.pixel_size_nm / self.upsample_factor

    @property
    def grid_area_um2(self):
        rows, cols = self.grid_dims
        pitch_um = self.grid_pitch_nm * 1e-3
        return rows * cols * pitch_um ** 2

    def margins(self):
        """Grid offset of the frame's top-left corner, per axis."""
        return tuple((g - r * self.upsample_factor) // 2
                     for r, g in zip(self.raw_dims, self.grid_dims))

    def binned(self):
        """Geometry of the same grid seen by a camera with ``bin_factor``-times larger pixels."""
        b = self.bin_factor
        return replace(self, pixel_size_nm=self.pixel_size_nm * b,
                       upsample_factor=self.upsample_factor * b,
                       raw_dims=(self.raw_dims[0] // b, self.raw_dims[1] // b),
                       bin_factor=1)

    def density_um2(self, k):
        """Molecules per square micron for ``k`` emitters on the grid."""
        return k / self.grid_area_um2


@dataclass(frozen=True)
class MeasurementMatrix:
    entries: np.ndarray
    column_weights: np.ndarray
    geometry: ImagingGeometry
    binned: bool = False

    @property
    def shape(self):
        return self.entries.shape

    def __matmul__(self, x):
        return self.entries @ x


@dataclass(frozen=True)
class AugmentedMatrix:
    """``[A | 1]``: the trailing column absorbs a uniform background at zero cost."""

    entries: np.ndarray
    column_weights: np.ndarray
    source: MeasurementMatrix = field(repr=False, default=None)

    @property
    def shape(self):
        return self.entries.shape

    def __matmul__(self, x):
        return self.entries @ x


def vectorize(frame):
    """Column-major flattening of a 2-D frame."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ShapeError(f"expected a 2-D frame, got shape {frame.shape}")
    return frame.ravel(order="F")


def unvectorize(vec, dims):
    vec = np.asarray(vec)
    if vec.size != dims[0] * dims[1]:
        raise ShapeError(f"vector of length {vec.size} cannot fill {dims}")
    return vec.reshape(tuple(dims), order="F")


def _axis_mass(n_pix, n_grid, up, margin, sigma):
    # mass[g, p]: fraction of a 1-D Gaussian centred on grid cell g landing in pixel p
    edges = margin + up * np.arange(n_pix + 1, dtype=float)
    centres = np.arange(n_grid, dtype=float) + 0.5
    cdf = ndtr((edges[None, :] - centres[:, None]) / sigma)
    return np.diff(cdf, axis=1)


def build_measurement_matrix(geometry=None):
    """Dense ``M x N`` matrix of pixel-integrated Gaussian PSF columns."""
    geometry = geometry or ImagingGeometry()
    (rr, rc), (gr, gc) = geometry.raw_dims, geometry.grid_dims
    mr, mc = geometry.margins()
    up, sigma = geometry.upsample_factor, geometry.psf_sigma_grids
    m_row = _axis_mass(rr, gr, up, mr, sigma)
    m_col = _axis_mass(rc, gc, up, mc, sigma)
    # A4[r, c, g_r, g_c] then column-major flattening of both (r, c) and (g_r, g_c)
    a4 = np.einsum("ar,bc->rcab", m_row, m_col)
    entries = a4.reshape(rr * rc, gr * gc, order="F")
    entries.setflags(write=False)
    weights = column_weights(entries)
    weights.setflags(write=False)
    return MeasurementMatrix(entries, weights, geometry, binned=False)


def column_weights(A):
    """Per-column sums: the weight vector of the weighted-L1 objective."""
    entries = A.entries if hasattr(A, "entries") else np.asarray(A, dtype=float)
    return entries.sum(axis=0)


def augment_background(A):
    entries = np.hstack([A.entries, np.ones((A.shape[0], 1))])
    weights = np.concatenate([A.column_weights, [0.0]])
    return AugmentedMatrix(entries, weights, A)


def bin_frame(frame, factor):
    """Sum ``factor x factor`` blocks; trailing axes beyond the first two are carried along."""
    frame = np.asarray(frame)
    rows, cols = frame.shape[:2]
    if rows % factor or cols % factor:
        raise ShapeError(f"frame {rows}x{cols} is not divisible by bin factor {factor}")
    rest = frame.shape[2:]
    blocks = frame.reshape((rows // factor, factor, cols // factor, factor) + rest)
    return blocks.sum(axis=(1, 3))


def bin_vector(vec, raw_dims, factor):
    """Bin a column-major frame vector and return the binned vector."""
    return vectorize(bin_frame(unvectorize(vec, raw_dims), factor))


def bin_matrix(A):
    """Measurement matrix of the binned camera, obtained by binning every column image."""
    geom = A.geometry
    b = geom.bin_factor
    rr, rc = geom.raw_dims
    if rr % b or rc % b:
        raise ShapeError(f"raw_dims {geom.raw_dims} not divisible by {b}")
    cube = A.entries.reshape(rr, rc, -1, order="F")
    binned = bin_frame(cube, b)
    entries = binned.reshape(-1, A.shape[1], order="F")
    entries.setflags(write=False)
    weights = column_weights(entries)
    weights.setflags(write=False)
    return MeasurementMatrix(entries, weights, geom.binned(), binned=True)


def adjacent_column_correlation(A):
    """Largest Pearson correlation between columns of grid-adjacent emitters."""
    gr, gc = A.geometry.grid_dims
    centred = A.entries - A.entries.mean(axis=0)
    unit = centred / np.linalg.norm(centred, axis=0)
    cube = unit.reshape(A.shape[0], gr, gc, order="F")
    down = np.einsum("pij,pij->ij", cube[:, 1:, :], cube[:, :-1, :])
    right = np.einsum("pij,pij->ij", cube[:, :, 1:], cube[:, :, :-1])
    return float(max(down.max(), right.max()))
