"""Uniform space-time grids on [0, T] x (periodic box)^3 and field storage.

Transform convention, used everywhere in this package and recorded in every
binary/CSV header this module writes: the forward spatial transform is the
unnormalized FFT, the inverse divides by the number of spatial points.  Under
this convention Parseval reads

    sum_x |f(x)|^2 dx^3  ==  (dx^3 / n^3) * sum_k |fhat(k)|^2

with n^3 the number of spatial points.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

FORMAT_MAGIC = b"RGSPDEFB"
FORMAT_VERSION = 1

#: sentinel for GridSpec.level meaning "physical coordinates" (box side L as given)
PHYSICAL = "physical"


class InvalidSpecError(ValueError):
    """Grid specification violates an invariant (power of two, positivity)."""


class DimensionError(ValueError):
    """Array shape does not match the grid."""


class CellRangeError(ValueError):
    """Requested unit cell does not intersect the grid domain."""


@dataclass(frozen=True)
class GridSpec:
    """Parameters of a uniform time x periodic-space grid.

    ``spatial_points`` is the number of points per spatial axis (power of
    two), ``time_points`` the number of time steps; node values live at the
    ``time_points + 1`` instants 0, dt, ..., T.  ``level`` is either the
    integer rescaling level n (box side lambda^-n in unit-scale coordinates)
    or the string "physical".
    """

    spatial_points: int
    box_side: float
    time_points: int
    time_horizon: float
    level: int | str = PHYSICAL

    def __post_init__(self):
        n = self.spatial_points
        if n <= 0 or (n & (n - 1)) != 0:
            raise InvalidSpecError(f"spatial_points must be a power of two, got {n}")
        if self.box_side <= 0 or self.time_horizon <= 0:
            raise InvalidSpecError("box_side and time_horizon must be positive")
        if self.time_points <= 0:
            raise InvalidSpecError("time_points must be positive")

    @property
    def dx(self) -> float:
        return self.box_side / self.spatial_points

    @property
    def dt(self) -> float:
        return self.time_horizon / self.time_points


class Grid:
    """A GridSpec with precomputed wavenumbers and coordinates."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        n, L = spec.spatial_points, spec.box_side
        k1 = 2.0 * np.pi * np.fft.fftfreq(n, d=spec.dx)
        kx, ky, kz = np.meshgrid(k1, k1, k1, indexing="ij")
        self.k1 = k1
        self.k2 = kx**2 + ky**2 + kz**2
        self.x1 = np.arange(n) * spec.dx
        self.times = np.arange(spec.time_points + 1) * spec.dt
        self.cell_volume = spec.dt * spec.dx**3

    @property
    def shape(self) -> tuple[int, int, int, int]:
        n = self.spec.spatial_points
        return (self.spec.time_points + 1, n, n, n)

    def zeros(self) -> "SpaceTimeField":
        return SpaceTimeField(np.zeros(self.shape), self)


def build_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


@dataclass
class SpaceTimeField:
    """Real field samples indexed by (time node, x1, x2, x3)."""

    values: np.ndarray
    grid: Grid = field(repr=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise DimensionError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def copy(self) -> "SpaceTimeField":
        return SpaceTimeField(self.values.copy(), self.grid)


def spectral_transform(grid: Grid, data: np.ndarray, direction: str) -> np.ndarray:
    """Spatial FFT of one slice (n,n,n) or a stack (..., n, n, n).

    Forward is unnormalized; inverse divides by n^3 (see module docstring).
    """
    n = grid.spec.spatial_points
    if data.shape[-3:] != (n, n, n):
        raise DimensionError(f"slice shape {data.shape} does not match grid n={n}")
    axes = (-3, -2, -1)
    if direction == "forward":
        return np.fft.fftn(data, axes=axes)
    if direction == "inverse":
        return np.fft.ifftn(data, axes=axes) * 1.0  # numpy ifftn already divides by n^3
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def to_spectral(field: SpaceTimeField) -> np.ndarray:
    return spectral_transform(field.grid, field.values, "forward")


def from_spectral(grid: Grid, coeffs: np.ndarray) -> SpaceTimeField:
    vals = spectral_transform(grid, coeffs, "inverse")
    return SpaceTimeField(np.ascontiguousarray(vals.real), grid)


def _cell_mask_1d(coords: np.ndarray, center: float, period: float | None) -> np.ndarray:
    """Points of `coords` inside [center-1/2, center+1/2), periodically if period given."""
    if period is None:
        return (coords >= center - 0.5) & (coords < center + 0.5)
    rel = np.mod(coords - (center - 0.5), period)
    return rel < 1.0


def cell_norm(field: SpaceTimeField, cell: tuple[int, int, int, int]) -> float:
    """Discrete L2 norm over the unit space-time cube centered at integer `cell`.

    Riemann weight dt*dx^3 per grid point; the spatial box is periodic, so the
    cube wraps around when the box side exceeds 1.
    """
    g = field.grid
    it, ix, iy, iz = cell
    tmask = _cell_mask_1d(g.times, float(it), None)
    if not tmask.any():
        raise CellRangeError(f"cell {cell} has no time nodes in [0, T]")
    L = g.spec.box_side
    masks = []
    for c in (ix, iy, iz):
        m = _cell_mask_1d(g.x1, float(c), L)
        if not m.any():
            raise CellRangeError(f"cell {cell} lies outside the box")
        masks.append(m)
    sub = field.values[np.ix_(tmask, *masks)]
    return float(np.sqrt(np.sum(sub**2) * g.cell_volume))


def cell_centers(grid: Grid) -> list[tuple[int, int, int, int]]:
    """All unit-cell centers (integer lattice points) intersecting the domain."""
    T, L = grid.spec.time_horizon, grid.spec.box_side
    # spatial centers 0..ceil(L)-1 cover the periodic box without double counting
    ts = range(0, int(np.floor(T)) + 1)
    xs = range(0, max(1, int(np.ceil(L))))
    return [(t, a, b, c) for t in ts for a in xs for b in xs for c in xs]


def write_field(path, field: SpaceTimeField) -> None:
    """Flat binary snapshot: header + row-major float64 values (little endian)."""
    spec = field.grid.spec
    level = -1 if spec.level == PHYSICAL else int(spec.level)
    header = FORMAT_MAGIC + struct.pack(
        "<qqqqdd",
        FORMAT_VERSION,
        level,
        spec.spatial_points,
        spec.time_points,
        spec.time_horizon,
        spec.box_side,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path) -> SpaceTimeField:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FORMAT_MAGIC:
            raise ValueError(f"not a field snapshot: bad magic {magic!r}")
        version, level, n, nt, T, L = struct.unpack("<qqqqdd", fh.read(48))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        spec = GridSpec(int(n), L, int(nt), T, PHYSICAL if level < 0 else int(level))
        grid = Grid(spec)
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(grid.shape)
    return SpaceTimeField(data.copy(), grid)


def write_field_csv(path, field: SpaceTimeField, comment: str = "") -> None:
    """(t, x1, x2, x3, value) rows; only sensible for small fields."""
    g = field.grid
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("t,x1,x2,x3,value\n")
        for i, t in enumerate(g.times):
            for a, xa in enumerate(g.x1):
                for b, xb in enumerate(g.x1):
                    for c, xc in enumerate(g.x1):
                        fh.write(f"{t!r},{xa!r},{xb!r},{xc!r},{field.values[i, a, b, c]!r}\n")
