"""Great-circle distance and a fixed lat/lon grid."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0088


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; works on scalars and numpy arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=np.float64)) for v in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


@dataclass(frozen=True)
class GridCell:
    row: int
    col: int


@dataclass(frozen=True)
class Grid:
    """Square-ish cells of ``cell_size_m`` over a bounding box.

    Rows count northwards from the south edge, columns eastwards from the west
    edge.  Longitude spacing is scaled by the cosine of the box's mid latitude.
    """

    south: float
    west: float
    north: float
    east: float
    cell_size_m: float = 250.0

    @classmethod
    def from_bbox(cls, bbox, cell_size_m: float = 250.0) -> "Grid":
        return cls(bbox.south, bbox.west, bbox.north, bbox.east, cell_size_m)

    @property
    def dlat(self) -> float:
        return self.cell_size_m / (EARTH_RADIUS_KM * 1000.0 * math.pi / 180.0)

    @property
    def dlon(self) -> float:
        mid = math.radians((self.south + self.north) / 2)
        return self.dlat / math.cos(mid)

    @property
    def n_rows(self) -> int:
        return max(1, math.ceil((self.north - self.south) / self.dlat))

    @property
    def n_cols(self) -> int:
        return max(1, math.ceil((self.east - self.west) / self.dlon))

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    def contains(self, lat, lon):
        return (lat >= self.south) & (lat <= self.north) & (lon >= self.west) & (lon <= self.east)

    def locate(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        """Row and column of each point; points outside the grid get -1."""
        lat = np.asarray(lat, dtype=np.float64)
        lon = np.asarray(lon, dtype=np.float64)
        inside = self.contains(lat, lon)
        row = np.minimum(np.floor((lat - self.south) / self.dlat), self.n_rows - 1)
        col = np.minimum(np.floor((lon - self.west) / self.dlon), self.n_cols - 1)
        row = np.where(inside, row, -1).astype(np.int64)
        col = np.where(inside, col, -1).astype(np.int64)
        return row, col

    def cell_index(self, lat, lon) -> np.ndarray:
        """Flat cell index ``row * n_cols + col``; -1 outside the grid."""
        row, col = self.locate(lat, lon)
        return np.where(row >= 0, row * self.n_cols + col, -1)

    def cell(self, index: int) -> GridCell:
        return GridCell(*divmod(int(index), self.n_cols))

    def flat(self, cell: GridCell) -> int:
        if not (0 <= cell.row < self.n_rows and 0 <= cell.col < self.n_cols):
            raise ValueError(f"{cell} lies outside the {self.n_rows}x{self.n_cols} grid")
        return cell.row * self.n_cols + cell.col
