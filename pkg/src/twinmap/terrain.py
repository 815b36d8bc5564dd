"""
Elevation data: ESRI ASCII grid DEMs, XYZ point clouds, ground rasterisation
and bilinear height queries.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DemFormatError,
    NodataError,
    OutOfBoundsError,
    PreconditionError,
    XyzFormatError,
)

logger = logging.getLogger(__name__)

DEFAULT_NODATA = -9999.0
BOUNDS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise PreconditionError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]


@dataclass(frozen=True, eq=False)
class Dem:
    """
    Regular elevation grid.

    values has shape (nrows, ncols) with row 0 the northernmost row, so
    values.ravel() is the ESRI row-major order.
    """
    ncols: int
    nrows: int
    xll: float
    yll: float
    cell_size: float
    nodata: float
    values: np.ndarray

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise DemFormatError("ncols and nrows must be positive")
        if not self.cell_size > 0:
            raise DemFormatError("cellsize must be positive")
        values = np.asarray(self.values, dtype=float)
        if values.size != self.ncols * self.nrows:
            raise DemFormatError(
                f"expected {self.ncols * self.nrows} values, got {values.size}"
            )
        object.__setattr__(self, "values", values.reshape(self.nrows, self.ncols))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dem):
            return NotImplemented
        return (
            (self.ncols, self.nrows, self.xll, self.yll, self.cell_size, self.nodata)
            == (other.ncols, other.nrows, other.xll, other.yll, other.cell_size, other.nodata)
            and np.array_equal(self.values, other.values)
        )

    @property
    def nodata_mask(self) -> np.ndarray:
        return (self.values == self.nodata) | np.isnan(self.values)

    def cell_center(self, row: int, col: int) -> Tuple[float, float]:
        return (
            self.xll + (col + 0.5) * self.cell_size,
            self.yll + (self.nrows - row - 0.5) * self.cell_size,
        )

    def center_bounds(self) -> Tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the rectangle spanned by cell centers."""
        half = 0.5 * self.cell_size
        return (
            self.xll + half,
            self.yll + half,
            self.xll + (self.ncols - 0.5) * self.cell_size,
            self.yll + (self.nrows - 0.5) * self.cell_size,
        )

    def filled(self) -> "Dem":
        """Copy with nodata cells replaced by the nearest valid cell."""
        if not self.nodata_mask.any():
            return self
        return replace(self, values=fill_nodata(self.values, self.nodata))


# ---------------------------------------------------------------------------
# Readers and writers
# ---------------------------------------------------------------------------

_HEADER_KEYS = {
    "ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
    "cellsize", "nodata_value",
}


def load_dem(text: str) -> Dem:
    """
    Parse an ESRI ASCII grid.

    Header keys are case-insensitive; xllcenter/yllcenter are accepted in
    place of the corner keys and NODATA_value defaults to -9999.

    Args:
        text: File contents

    Returns:
        Dem with header fields and grid captured exactly
    """
    lines = text.splitlines()
    header: Dict[str, float] = {}
    index = 0
    while index < len(lines):
        tokens = lines[index].split()
        if not tokens:
            index += 1
            continue
        key = tokens[0].lower()
        if key not in _HEADER_KEYS:
            break
        if len(tokens) != 2:
            raise DemFormatError(f"header '{tokens[0]}' needs exactly one value", index + 1)
        try:
            header[key] = float(tokens[1])
        except ValueError:
            raise DemFormatError(f"non-numeric header value {tokens[1]!r}", index + 1)
        index += 1

    for required in ("ncols", "nrows", "cellsize"):
        if required not in header:
            raise DemFormatError(f"missing header '{required}'")
    ncols, nrows = header["ncols"], header["nrows"]
    if ncols != int(ncols) or nrows != int(nrows) or ncols < 1 or nrows < 1:
        raise DemFormatError("ncols and nrows must be positive integers")
    ncols, nrows = int(ncols), int(nrows)
    cell_size = header["cellsize"]
    if not cell_size > 0:
        raise DemFormatError("cellsize must be positive")

    if "xllcorner" in header:
        xll = header["xllcorner"]
    elif "xllcenter" in header:
        xll = header["xllcenter"] - 0.5 * cell_size
    else:
        raise DemFormatError("missing header 'xllcorner'")
    if "yllcorner" in header:
        yll = header["yllcorner"]
    elif "yllcenter" in header:
        yll = header["yllcenter"] - 0.5 * cell_size
    else:
        raise DemFormatError("missing header 'yllcorner'")
    nodata = header.get("nodata_value", DEFAULT_NODATA)

    rows = []
    for lineno in range(index + 1, len(lines) + 1):
        tokens = lines[lineno - 1].split()
        if not tokens:
            continue
        if len(rows) == nrows:
            raise DemFormatError(f"more than {nrows} data rows", lineno)
        if len(tokens) != ncols:
            raise DemFormatError(f"expected {ncols} values, got {len(tokens)}", lineno)
        try:
            rows.append([float(token) for token in tokens])
        except ValueError as exc:
            raise DemFormatError(f"non-numeric value ({exc})", lineno)
    if len(rows) != nrows:
        raise DemFormatError(f"expected {nrows} data rows, got {len(rows)}")

    return Dem(ncols, nrows, xll, yll, cell_size, nodata, np.array(rows, dtype=float))


def save_dem(dem: Dem) -> str:
    """Write a Dem as ESRI ASCII grid text (17 significant digits)."""
    lines = [
        f"ncols {dem.ncols}",
        f"nrows {dem.nrows}",
        f"xllcorner {dem.xll:.17g}",
        f"yllcorner {dem.yll:.17g}",
        f"cellsize {dem.cell_size:.17g}",
        f"NODATA_value {dem.nodata:.17g}",
    ]
    for row in dem.values:
        lines.append(" ".join(f"{value:.17g}" for value in row))
    return "\n".join(lines) + "\n"


def load_xyz(text: str) -> PointCloud:
    """
    Parse a whitespace-separated "x y z" point cloud.

    Blank lines and lines starting with '#' are skipped.
    """
    points = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise XyzFormatError(f"expected 3 values, got {len(tokens)}", lineno)
        try:
            point = [float(token) for token in tokens]
        except ValueError:
            raise XyzFormatError(f"non-numeric value in {line!r}", lineno)
        if not all(math.isfinite(v) for v in point):
            raise XyzFormatError("non-finite coordinate", lineno)
        points.append(point)
    return PointCloud(np.array(points, dtype=float).reshape(-1, 3))


# ---------------------------------------------------------------------------
# Ground rasterisation
# ---------------------------------------------------------------------------

def nearest_rank(percentile: float, count: int) -> int:
    """1-based nearest-rank index ceil(p*n), at least 1."""
    # the epsilon keeps products like 0.05*20 from rounding up a rank
    return min(count, max(1, math.ceil(percentile * count - 1e-9)))


def fill_nodata(values: np.ndarray, nodata: float) -> np.ndarray:
    """
    Replace nodata cells with the value of the nearest valid cell.

    Ties go to the smaller row, then the smaller column.
    """
    values = np.array(values, dtype=float)
    mask = (values == nodata) | np.isnan(values)
    if not mask.any():
        return values
    valid = np.argwhere(~mask)
    if len(valid) == 0:
        raise NodataError("grid has no valid cells to fill from")
    empty = np.argwhere(mask)

    tree = cKDTree(valid)
    distances, _ = tree.query(empty, k=1)
    candidates = tree.query_ball_point(empty, r=distances + 1e-9)
    # argwhere is row-major, so the smallest index wins the tie
    source = np.array([min(found) for found in candidates])
    values[empty[:, 0], empty[:, 1]] = values[valid[source, 0], valid[source, 1]]
    return values


def rasterize_ground(
    cloud: PointCloud,
    cell_size: float = 1.0,
    percentile: float = 0.05,
    nodata: float = DEFAULT_NODATA,
) -> Dem:
    """
    Derive a ground DEM from a point cloud.

    Each nonempty cell takes the nearest-rank percentile of its points' z;
    empty cells are filled from the nearest nonempty cell.

    Args:
        cloud: Input points
        cell_size: Grid spacing in meters
        percentile: Fraction in [0, 1]; 0 is the per-cell minimum

    Returns:
        Dem whose lower-left corner is the cloud's (xmin, ymin)
    """
    if len(cloud) == 0:
        raise PreconditionError("cannot rasterize an empty point cloud")
    if not cell_size > 0:
        raise PreconditionError("cell_size must be positive")
    if not 0.0 <= percentile <= 1.0:
        raise PreconditionError("percentile must be in [0, 1]")

    x, y, z = cloud.points.T
    xmin, ymin = float(x.min()), float(y.min())
    ncols = int(math.floor((x.max() - xmin) / cell_size)) + 1
    nrows = int(math.floor((y.max() - ymin) / cell_size)) + 1

    cols = np.minimum(np.floor((x - xmin) / cell_size).astype(int), ncols - 1)
    rows_up = np.minimum(np.floor((y - ymin) / cell_size).astype(int), nrows - 1)
    flat = (nrows - 1 - rows_up) * ncols + cols

    order = np.lexsort((z, flat))
    flat_sorted, z_sorted = flat[order], z[order]
    cells, starts, counts = np.unique(flat_sorted, return_index=True, return_counts=True)
    ranks = np.array([nearest_rank(percentile, int(n)) for n in counts])

    grid = np.full(nrows * ncols, nodata, dtype=float)
    grid[cells] = z_sorted[starts + ranks - 1]
    grid = grid.reshape(nrows, ncols)
    logger.debug(f"Rasterized {len(cloud)} points into {nrows}x{ncols} grid, "
                 f"{len(cells)} nonempty cells")
    return Dem(ncols, nrows, xmin, ymin, cell_size, nodata, fill_nodata(grid, nodata))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _axis(coord: np.ndarray, count: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    lower = np.clip(np.floor(coord), 0, max(count - 2, 0)).astype(int)
    frac = coord - lower
    if count == 1:
        frac = np.zeros_like(coord)
    upper = np.minimum(lower + 1, count - 1)
    return lower, upper, frac


def sample_heights(dem: Dem, xs, ys, strict: bool = True) -> np.ndarray:
    """
    Vectorised bilinear sampling over cell centers.

    Only corners with non-zero weight contribute, so a query exactly on a
    valid cell center succeeds next to a nodata neighbour.

    Args:
        dem: Elevation grid
        xs, ys: Query coordinates
        strict: Raise on out-of-bounds or nodata queries instead of NaN

    Returns:
        Heights, same shape as the inputs
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    shape = np.broadcast(xs, ys).shape
    xs, ys = np.broadcast_to(xs, shape).ravel(), np.broadcast_to(ys, shape).ravel()

    u = (xs - (dem.xll + 0.5 * dem.cell_size)) / dem.cell_size
    r = ((dem.yll + (dem.nrows - 0.5) * dem.cell_size) - ys) / dem.cell_size
    inside = (
        (u >= -BOUNDS_TOLERANCE) & (u <= dem.ncols - 1 + BOUNDS_TOLERANCE)
        & (r >= -BOUNDS_TOLERANCE) & (r <= dem.nrows - 1 + BOUNDS_TOLERANCE)
    )
    if strict and not inside.all():
        bad = int(np.argmin(inside))
        raise OutOfBoundsError(f"query ({xs[bad]:.3f}, {ys[bad]:.3f}) is outside the DEM")
    # snap onto cell centers so stored values come back exactly
    u = np.where(np.abs(u - np.round(u)) < BOUNDS_TOLERANCE, np.round(u), u)
    r = np.where(np.abs(r - np.round(r)) < BOUNDS_TOLERANCE, np.round(r), r)
    u = np.clip(u, 0.0, dem.ncols - 1)
    r = np.clip(r, 0.0, dem.nrows - 1)

    c0, c1, fu = _axis(u, dem.ncols)
    r0, r1, fr = _axis(r, dem.nrows)
    corners = (
        (r0, c0, (1 - fu) * (1 - fr)),
        (r0, c1, fu * (1 - fr)),
        (r1, c0, (1 - fu) * fr),
        (r1, c1, fu * fr),
    )
    mask = dem.nodata_mask
    heights = np.zeros(len(xs))
    missing = np.zeros(len(xs), dtype=bool)
    for rows, cols, weight in corners:
        contributes = weight > 0
        missing |= contributes & mask[rows, cols]
        heights += np.where(contributes & ~mask[rows, cols], weight * dem.values[rows, cols], 0.0)

    if strict and missing.any():
        bad = int(np.argmax(missing))
        raise NodataError(f"query ({xs[bad]:.3f}, {ys[bad]:.3f}) touches a nodata cell")
    heights[missing | ~inside] = np.nan
    return heights.reshape(shape)


def sample_height(dem: Dem, x: float, y: float) -> float:
    """
    Bilinear height at (x, y), exact at cell centers.

    Raises:
        OutOfBoundsError: query outside the cell-center rectangle
        NodataError: a contributing cell is nodata
    """
    return float(sample_heights(dem, x, y, strict=True))
