"""Electrode layouts, source grids, and neighborhood structure.

Everything downstream (forward model, reduction, metrics) works on the
three objects built here: an electrode array on the scalp sphere, a cubic
source grid inside the brain sphere, and neighbor maps over both.
All containers are immutable after construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, GeometryError

SPHERE_TOL_MM = 0.5


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ElectrodeArray:
    """Labeled electrode positions on a scalp sphere.

    Parameters
    ----------
    labels : tuple of str
        Unique channel identifiers.
    positions : ndarray, shape (N, 3)
        Cartesian positions in mm. Every position must lie within
        ``SPHERE_TOL_MM`` of the sphere of radius ``radius``.
    radius : float
        Scalp sphere radius in mm.
    """

    labels: tuple
    positions: np.ndarray
    radius: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ContractError("positions must be (N, 3)")
        if len(self.labels) != len(pos):
            raise ContractError("labels and positions length mismatch")
        if len(set(self.labels)) != len(self.labels):
            raise ContractError("electrode labels must be unique")
        if len(pos) < 16:
            raise ContractError("need at least 16 electrodes")
        r = np.linalg.norm(pos, axis=1)
        off = np.abs(r - self.radius)
        if np.any(off > SPHERE_TOL_MM):
            worst = int(np.argmax(off))
            raise GeometryError(
                "electrode %s is %.2f mm off the %.1f mm sphere"
                % (self.labels[worst], off[worst], self.radius)
            )
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "positions", _freeze(pos))

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class SourceGrid:
    """Regular cubic lattice of candidate source points inside the brain sphere.

    ``points`` are sorted canonically by (z, y, x); ``ijk`` holds the integer
    lattice coordinates of each point (same order). Three orthogonal dipole
    components per point give ``component_count = 3 * len(points)``.
    """

    points: np.ndarray
    ijk: np.ndarray
    spacing: float
    radius: float
    offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if np.any(np.linalg.norm(pts, axis=1) >= self.radius):
            raise GeometryError("grid point on or outside the brain sphere")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "ijk", _freeze(np.asarray(self.ijk, dtype=np.int64)))
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))

    def __len__(self):
        return len(self.points)

    @property
    def component_count(self):
        return 3 * len(self.points)


@dataclass(frozen=True)
class NeighborMap:
    """Symmetric, irreflexive neighbor sets over electrodes or grid points.

    ``metric`` is "geodesic" (electrode maps, with ``param`` = mu in mm) or
    "lattice" (grid maps, with ``param`` = Chebyshev step count).
    """

    neighbors: tuple
    metric: str
    param: float

    def __post_init__(self):
        frozen = tuple(_freeze(np.asarray(n, dtype=np.int64)) for n in self.neighbors)
        for i, nb in enumerate(frozen):
            if i in nb:
                raise ContractError("neighbor map must be irreflexive")
        object.__setattr__(self, "neighbors", frozen)

    def __len__(self):
        return len(self.neighbors)

    def of(self, i):
        return self.neighbors[i]


def geodesic_distance(r_i, r_j, radius):
    """Great-circle distance between two points on a sphere of given radius.

    Both points must lie within ``SPHERE_TOL_MM`` of the sphere. Returns a
    value in ``[0, pi * radius]``.
    """
    r_i = np.asarray(r_i, dtype=float)
    r_j = np.asarray(r_j, dtype=float)
    for p in (r_i, r_j):
        if abs(np.linalg.norm(p) - radius) > SPHERE_TOL_MM:
            raise GeometryError("point %.3f mm off sphere radius %.1f" %
                                (abs(np.linalg.norm(p) - radius), radius))
    c = np.clip(np.dot(r_i, r_j) / radius**2, -1.0, 1.0)
    return radius * np.arccos(c)


def _pairwise_geodesic(electrodes):
    u = electrodes.positions / electrodes.radius
    c = np.clip(u @ u.T, -1.0, 1.0)
    d = electrodes.radius * np.arccos(c)
    np.fill_diagonal(d, 0.0)
    return d


def auto_mu(electrodes):
    """Neighborhood radius giving each electrode one ring of neighbors.

    1.5 times the median nearest-neighbor geodesic distance: wide enough to
    include the first ring on a quasi-uniform layout, short of the second.
    """
    if len(electrodes) < 4:
        raise ContractError("need at least 4 electrodes for auto_mu")
    d = _pairwise_geodesic(electrodes)
    np.fill_diagonal(d, np.inf)
    return 1.5 * float(np.median(d.min(axis=1)))


def electrode_neighbors(electrodes, mu=None):
    """Geodesic neighbor map over electrodes: j in nbr(i) iff d(i,j) <= mu."""
    if mu is None:
        mu = auto_mu(electrodes)
    if mu <= 0:
        raise ContractError("mu must be positive")
    d = _pairwise_geodesic(electrodes)
    np.fill_diagonal(d, np.inf)
    nbrs = [np.flatnonzero(d[i] <= mu) for i in range(len(electrodes))]
    return NeighborMap(tuple(nbrs), metric="geodesic", param=float(mu))


def build_grid(spacing, radius, offset=(0.0, 0.0, 0.0)):
    """Cubic lattice of source points strictly inside the brain sphere.

    The lattice is ``offset + k * spacing`` per axis; points with
    ``||r|| < radius`` are kept and sorted by (z, y, x).

    Parameters
    ----------
    spacing : float
        Lattice pitch in mm, 0 < spacing < radius.
    radius : float
        Brain sphere radius in mm.
    offset : 3-tuple of float
        Lattice origin shift in mm. (0,0,0) puts a point at the origin.
    """
    if not 0 < spacing < radius:
        raise ContractError("need 0 < spacing < radius")
    kmax = int(np.ceil((radius + max(abs(v) for v in offset)) / spacing)) + 1
    ax = np.arange(-kmax, kmax + 1)
    ii, jj, kk = np.meshgrid(ax, ax, ax, indexing="ij")
    ijk = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])
    pts = ijk * spacing + np.asarray(offset, dtype=float)
    keep = np.linalg.norm(pts, axis=1) < radius
    pts, ijk = pts[keep], ijk[keep]
    order = np.lexsort((ijk[:, 0], ijk[:, 1], ijk[:, 2]))
    return SourceGrid(points=pts[order], ijk=ijk[order], spacing=float(spacing),
                      radius=float(radius), offset=tuple(offset))


def grid_neighbors(grid, k=1):
    """Chebyshev lattice neighbor map: 26-cell shell for k=1, 124 for k=2."""
    if k not in (1, 2):
        raise ContractError("k must be 1 or 2")
    index_of = {tuple(v): i for i, v in enumerate(grid.ijk)}
    rng = range(-k, k + 1)
    nbrs = []
    for v in grid.ijk:
        cur = []
        for di in rng:
            for dj in rng:
                for dk in rng:
                    if di == dj == dk == 0:
                        continue
                    q = index_of.get((v[0] + di, v[1] + dj, v[2] + dk))
                    if q is not None:
                        cur.append(q)
        nbrs.append(np.array(sorted(cur), dtype=np.int64))
    return NeighborMap(tuple(nbrs), metric="lattice", param=float(k))


def snap_to_grid(grid, xyz):
    """Index of the grid point nearest to ``xyz`` and the distance to it."""
    d = np.linalg.norm(grid.points - np.asarray(xyz, dtype=float)[None, :], axis=1)
    i = int(np.argmin(d))
    return i, float(d[i])


def geodesic_cap_layout(n=256, radius=92.0, theta_max_deg=150.0):
    """Quasi-uniform spherical-cap electrode layout.

    Golden-angle spiral over the cap ``theta <= theta_max_deg`` (measured from
    the +z pole), mimicking the coverage of a dense geodesic sensor net:
    crown fully sampled, a bottom opening left uncovered. Labels are
    ``E001 .. E{n}``.
    """
    i = np.arange(n)
    zmin = np.cos(np.radians(theta_max_deg))
    z = 1.0 - (1.0 - zmin) * (i + 0.5) / n
    golden = (1 + 5**0.5) / 2
    phi = 2 * np.pi * i / golden
    s = np.sqrt(1.0 - z * z)
    pos = radius * np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    labels = tuple("E%03d" % (j + 1) for j in range(n))
    return ElectrodeArray(labels=labels, positions=pos, radius=float(radius))


def read_electrodes_csv(path, radius=None):
    """Load an electrode layout from CSV with header ``label,x_mm,y_mm,z_mm``.

    If ``radius`` is omitted it is taken as the mean position norm.
    """
    labels, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"label", "x_mm", "y_mm", "z_mm"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ContractError("electrode CSV needs header label,x_mm,y_mm,z_mm")
        for ln, row in enumerate(reader, start=2):
            try:
                labels.append(row["label"])
                rows.append([float(row["x_mm"]), float(row["y_mm"]), float(row["z_mm"])])
            except (TypeError, ValueError) as exc:
                raise ContractError("bad value in %s line %d" % (path, ln)) from exc
    pos = np.asarray(rows, dtype=float)
    if radius is None:
        radius = float(np.mean(np.linalg.norm(pos, axis=1)))
    return ElectrodeArray(labels=tuple(labels), positions=pos, radius=radius)


def write_electrodes_csv(path, electrodes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "x_mm", "y_mm", "z_mm"])
        for lab, p in zip(electrodes.labels, electrodes.positions):
            w.writerow([lab, repr(p[0]), repr(p[1]), repr(p[2])])


def write_grid_csv(path, grid):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x_mm", "y_mm", "z_mm"])
        for i, p in enumerate(grid.points):
            w.writerow([i, repr(p[0]), repr(p[1]), repr(p[2])])


@dataclass(frozen=True)
class GeometryBundle:
    """Everything the reduction pipeline needs about the measurement setup."""

    electrodes: ElectrodeArray
    grid: SourceGrid
    electrode_nbrs: NeighborMap
    grid_nbrs: NeighborMap
    mu: float = field(default=0.0)

    @classmethod
    def build(cls, electrodes, grid, mu=None, dilation=1):
        mu_val = auto_mu(electrodes) if mu is None else float(mu)
        return cls(
            electrodes=electrodes,
            grid=grid,
            electrode_nbrs=electrode_neighbors(electrodes, mu_val),
            grid_nbrs=grid_neighbors(grid, dilation),
            mu=mu_val,
        )
