"""Hexagonal multi-cell layout, sector decomposition and reuse-3 coloring.

Conventions
-----------
``D`` is the cell inradius (BS to edge midpoint), so adjacent BSs sit ``2D``
apart. Each cell is cut into 12 triangular sectors with vertices
(BS, edge midpoint, hexagon corner). Sector ``i`` spans the polar angles
``[90 - 30 (i + 1), 90 - 30 i]`` degrees around its BS, i.e. sector 0 is the
triangle ``(0, 0), (0, D), (D / sqrt(3), D)`` and the others follow clockwise.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "N_SECTORS",
    "N_RANKS",
    "NetworkLayout",
    "SectorRef",
    "OutOfRegionError",
    "build_layout",
    "toy_layout",
    "isolated_layout",
    "locate",
    "sample_uniform_in_sector",
    "interference_set",
]

N_SECTORS = 12
#: BS ranks held in a neighboring set (the backhaul is the implicit 4th).
N_RANKS = 3

_SQRT3 = np.sqrt(3.0)
_TOL = 1e-9


class OutOfRegionError(ValueError):
    """Raised when a point lies outside every deployed cell."""


@dataclass(frozen=True)
class SectorRef:
    cell: int
    sector: int

    def __post_init__(self):
        if self.cell < 0 or not 0 <= self.sector < N_SECTORS:
            raise ValueError(f"invalid sector reference {self}")


@dataclass(frozen=True, eq=False)
class NetworkLayout:
    """Immutable description of BS placement and per-sector neighbor sets.

    Attributes
    ----------
    bs_positions : ndarray, shape (N_b, 2)
        BS coordinates in meters.
    D : float
        Cell inradius in meters.
    band : ndarray of int, shape (N_b,)
        Frequency band of every BS, in {0, 1, 2}.
    ordered_bs : ndarray of int, shape (N_b, 12, 3)
        ``ordered_bs[j, i]`` lists the rank 1..3 BSs of sector ``i`` of cell
        ``j``; ``-1`` marks an absent rank.
    """

    bs_positions: np.ndarray
    D: float
    band: np.ndarray
    ordered_bs: np.ndarray
    hexagonal: bool = True
    _lattice: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("bs_positions", "band", "ordered_bs"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n_b = self.n_cells
        if self.ordered_bs.shape != (n_b, N_SECTORS, N_RANKS):
            raise ValueError(f"ordered_bs must have shape ({n_b}, 12, 3)")
        if np.any(self.ordered_bs[:, :, 0] != np.arange(n_b)[:, None]):
            raise ValueError("rank 1 of every sector must be the local BS")

    @property
    def n_cells(self) -> int:
        return len(self.bs_positions)

    @property
    def sector_count_per_cell(self) -> int:
        return N_SECTORS

    def available_ranks(self) -> np.ndarray:
        """Boolean mask of shape (N_b, 12, 3): rank present in the sector."""
        return self.ordered_bs >= 0

    def sector_vertices(self, cell: int, sector: int) -> np.ndarray:
        """Return the (3, 2) triangle (BS, edge midpoint, corner) of a sector."""
        return self.bs_positions[cell] + _local_sector_vertices(self.D)[sector]

    def sector_area(self) -> float:
        return self.D**2 / (2 * _SQRT3)

    def is_adjacent(self, a: int, b: int) -> bool:
        d = np.linalg.norm(self.bs_positions[a] - self.bs_positions[b])
        return abs(d - 2 * self.D) < 1e-6 * self.D

    def to_csv(self, path) -> None:
        """Write ``bs_index, x_m, y_m, band`` rows for debugging."""
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bs_index", "x_m", "y_m", "band"])
            for b, (x, y) in enumerate(self.bs_positions):
                w.writerow([b, f"{x:.6f}", f"{y:.6f}", int(self.band[b])])


def _local_sector_vertices(D: float) -> np.ndarray:
    """Triangles of the 12 sectors relative to the BS, shape (12, 3, 2)."""
    out = np.empty((N_SECTORS, 3, 2))
    for i in range(N_SECTORS):
        a_start = np.deg2rad(90.0 - 30.0 * i)
        a_end = np.deg2rad(90.0 - 30.0 * (i + 1))
        # even sectors start at an edge midpoint, odd ones at a corner
        if i % 2 == 0:
            mid_angle, corner_angle = a_start, a_end
        else:
            mid_angle, corner_angle = a_end, a_start
        rc = 2.0 * D / _SQRT3
        out[i, 0] = (0.0, 0.0)
        out[i, 1] = (D * np.cos(mid_angle), D * np.sin(mid_angle))
        out[i, 2] = (rc * np.cos(corner_angle), rc * np.sin(corner_angle))
    # snap round-off so that shared vertices compare exactly
    return np.round(out, 12)


def _hex_rings(n_rings: int) -> list[tuple[int, int]]:
    """Axial lattice coordinates: center first, then rings clockwise from +y.

    Lattice vectors are e1 = (sqrt(3) D, D) and e2 = (0, 2D).
    """
    coords = [(0, 0)]
    # clockwise neighbor directions starting at +y
    dirs = [(0, 1), (1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1)]
    for k in range(1, n_rings + 1):
        m, n = 0, k
        # walk direction index d+2 from the +y corner of ring k
        for d in range(6):
            step = dirs[(d + 2) % 6]
            for _ in range(k):
                coords.append((m, n))
                m, n = m + step[0], n + step[1]
    return coords


def _rings_for(n_cells: int) -> int:
    k = 0
    while 1 + 3 * k * (k + 1) < n_cells:
        k += 1
    if 1 + 3 * k * (k + 1) != n_cells:
        raise ValueError(
            f"n_cells={n_cells} is not a full hexagonal layout; "
            "expected 1 + 3k(k+1) cells (1, 7, 19, 37, ...)"
        )
    return k


def build_layout(n_cells: int = 7, D: float = 250.0) -> NetworkLayout:
    """Build a hexagonal layout of ``n_cells`` cells with inradius ``D``.

    Bands follow the canonical reuse-3 coloring ``(n - m) mod 3`` of the
    triangular lattice, which puts the center in band 0 and alternates the
    first ring between bands 1 and 2. Ranks 2 and 3 of every sector are the
    two other deployed BSs closest to the sector centroid (ties broken by
    lower index).
    """
    if D <= 0:
        raise ValueError("D must be positive")
    k = _rings_for(n_cells)
    axial = np.array(_hex_rings(k))
    e1 = np.array([_SQRT3 * D, D])
    e2 = np.array([0.0, 2.0 * D])
    pos = axial[:, :1] * e1 + axial[:, 1:] * e2
    band = np.mod(axial[:, 1] - axial[:, 0], 3)

    local = _local_sector_vertices(D)
    ordered = np.full((n_cells, N_SECTORS, N_RANKS), -1, dtype=int)
    for j in range(n_cells):
        for i in range(N_SECTORS):
            centroid = pos[j] + local[i].mean(axis=0)
            others = [b for b in range(n_cells) if b != j]
            dist = np.linalg.norm(pos[others] - centroid, axis=1)
            # stable sort keeps lower index first on ties
            order = np.argsort(np.round(dist, 9), kind="stable")
            picked = [others[o] for o in order[: N_RANKS - 1]]
            ordered[j, i, : 1 + len(picked)] = [j, *picked]
    return NetworkLayout(pos, float(D), band, ordered, hexagonal=True)


def toy_layout(D: float = 250.0) -> NetworkLayout:
    """Two BSs, each the rank-2 BS of the other's users; rank 3 absent."""
    pos = np.array([[0.0, 0.0], [0.0, 2.0 * D]])
    ordered = np.full((2, N_SECTORS, N_RANKS), -1, dtype=int)
    ordered[0, :, :2] = [0, 1]
    ordered[1, :, :2] = [1, 0]
    return NetworkLayout(pos, float(D), np.array([0, 1]), ordered, hexagonal=False)


def isolated_layout(n_cells: int, D: float = 250.0) -> NetworkLayout:
    """Cells with non-overlapping coverage: only the local BS is reachable."""
    pos = np.column_stack([np.arange(n_cells) * 20.0 * D, np.zeros(n_cells)])
    ordered = np.full((n_cells, N_SECTORS, N_RANKS), -1, dtype=int)
    ordered[:, :, 0] = np.arange(n_cells)[:, None]
    band = np.arange(n_cells) % 3
    return NetworkLayout(pos, float(D), band, ordered, hexagonal=False)


def _in_triangle(p: np.ndarray, tri: np.ndarray, tol: float) -> bool:
    a, b, c = tri

    def cross(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

    d1, d2, d3 = cross(a, b, p), cross(b, c, p), cross(c, a, p)
    has_neg = min(d1, d2, d3) < -tol
    has_pos = max(d1, d2, d3) > tol
    return not (has_neg and has_pos)


def locate(point, layout: NetworkLayout) -> SectorRef:
    """Return the sector containing ``point``.

    Points on shared boundaries go to the smallest ``(cell, sector)`` pair.

    Raises
    ------
    OutOfRegionError
        If no deployed cell contains the point.
    """
    p = np.asarray(point, dtype=float)
    tol = _TOL * layout.D**2
    local = _local_sector_vertices(layout.D)
    for j in range(layout.n_cells):
        rel = p - layout.bs_positions[j]
        if np.hypot(*rel) > 2.0 * layout.D / _SQRT3 * (1 + 1e-9):
            continue
        for i in range(N_SECTORS):
            if _in_triangle(rel, local[i], tol):
                return SectorRef(j, i)
    raise OutOfRegionError(f"point {tuple(p)} lies outside every cell")


def sample_uniform_in_sector(ref: SectorRef, layout: NetworkLayout, rng, size=None):
    """Draw point(s) uniformly from the triangle of sector ``ref``.

    Returns shape (2,) when ``size`` is None, else (size, 2).
    """
    tri = layout.sector_vertices(ref.cell, ref.sector)
    n = 1 if size is None else int(size)
    pts = sample_triangles(np.broadcast_to(tri, (n, 3, 2)), rng)
    return pts[0] if size is None else pts


def sample_triangles(tris: np.ndarray, rng) -> np.ndarray:
    """One uniform point in each triangle of ``tris`` (shape (n, 3, 2))."""
    n = len(tris)
    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1.0
    r1 = np.where(flip, 1.0 - r1, r1)
    r2 = np.where(flip, 1.0 - r2, r2)
    a = tris[:, 0]
    return a + r1[:, None] * (tris[:, 1] - a) + r2[:, None] * (tris[:, 2] - a)


def interference_set(b: int, layout: NetworkLayout) -> set[int]:
    """Co-band BSs of ``b`` (the set of interferers when ``b`` serves)."""
    if not 0 <= b < layout.n_cells:
        raise IndexError(f"BS index {b} out of range")
    same = np.flatnonzero(layout.band == layout.band[b])
    return {int(x) for x in same if x != b}
