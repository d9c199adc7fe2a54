"""Exact nearest-neighbor search over a target cloud."""
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyTargetError
from .geometry import PointCloud

# Distances within this relative band count as ties and resolve to the lowest index
TIE_RTOL = 1e-12
TIE_ATOL = 1e-300


class NnIndex:
    """Balanced k-d tree (median split on the largest-spread axis) over a point set.

    Queries are exact. Among equidistant points the lowest stored index wins.
    The index is immutable after construction and safe to query concurrently.
    """

    def __init__(self, points: np.ndarray, source_indices: Optional[np.ndarray] = None):
        points = np.asarray(points, dtype=np.float64)
        if len(points) == 0:
            raise EmptyTargetError('empty target')
        if source_indices is None:
            source_indices = np.arange(len(points))
        self._points = points
        self._indices = np.asarray(source_indices, dtype=np.intp)
        self._tree = cKDTree(points, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self._points)

    @property
    def source_indices(self) -> np.ndarray:
        """Indices into the originating cloud for every stored point."""
        return self._indices

    def query(self, queries: np.ndarray, workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest stored point for every query row.

        Returns:
            (indices into the originating cloud, Euclidean distances)
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        k = min(2, len(self._points))
        distances, local = self._tree.query(queries, k=k, workers=workers)
        if k == 1:
            return self._indices[local], distances

        best_local = local[:, 0].copy()
        best_dist = distances[:, 0].copy()
        tied = np.flatnonzero(distances[:, 1] <= distances[:, 0] * (1.0 + TIE_RTOL) + TIE_ATOL)
        for row in tied:
            best_local[row], best_dist[row] = self._resolve_tie(queries[row], distances[row, 0])
        return self._indices[best_local], best_dist

    def _resolve_tie(self, query: np.ndarray, radius: float) -> Tuple[int, float]:
        candidates = np.array(
            sorted(self._tree.query_ball_point(query, r=radius * (1.0 + 1e-9) + 1e-15)),
            dtype=np.intp,
        )
        dist = np.sqrt(np.sum((self._points[candidates] - query) ** 2, axis=1))
        closest = dist <= dist.min() * (1.0 + TIE_RTOL) + TIE_ATOL
        pick = int(np.flatnonzero(closest)[0])
        return int(candidates[pick]), float(dist[pick])


def build_index(cloud: PointCloud, mask: Optional[np.ndarray] = None) -> NnIndex:
    """Build an index over a cloud, optionally restricted to the points selected by `mask`.

    Raises:
        EmptyTargetError: If no point is selected
    """
    if mask is None:
        return NnIndex(cloud.points)
    selected = np.flatnonzero(mask)
    return NnIndex(cloud.points[selected], selected)


def nearest(index: NnIndex, query) -> Tuple[int, float]:
    """Index and distance of the stored point closest to a single 3-vector."""
    indices, distances = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3))
    return int(indices[0]), float(distances[0])
