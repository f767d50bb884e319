"""Connected components of the radius-r neighbour graph without listing every edge.

Points are binned into cubic cells of side just under r/sqrt(3), so any two
points sharing a cell are within r of each other and every cell is internally
connected. Components are then found by union-find over cells: a pair of nearby
cells is joined as soon as one cross pair of points lies within r. Dense clouds
(hundreds of points per cell) are handled in time roughly linear in the point
count, where an explicit pair list would need billions of entries.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

_CHUNK = 256


def _offsets() -> np.ndarray:
    # all cells whose closest approach can be <= r, keeping one of each +/- pair
    out = [o for o in itertools.product(range(-2, 3), repeat=3) if o > (0, 0, 0)]
    return np.array(out, dtype=np.int64)


OFFSETS = _offsets()


def cell_pairs(points: np.ndarray, radius: float):
    """Bin points into cells. Returns (order, start, end, pair_a, pair_b).

    ``order`` sorts the points by cell; cell ``c`` holds ``order[start[c]:end[c]]``;
    ``(pair_a[i], pair_b[i])`` enumerates occupied neighbouring cells.
    """
    side = radius / math.sqrt(3.0) * (1.0 - 1e-9)
    cells = np.floor(points / side).astype(np.int64)
    cells -= cells.min(axis=0) - 2
    dims = cells.max(axis=0) + 3
    if float(dims[0]) * float(dims[1]) * float(dims[2]) > 2.0**62:
        raise ValueError("point cloud extent too large for the clustering radius")
    keys = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    uniq, start = np.unique(sorted_keys, return_index=True)
    end = np.append(start[1:], len(order))
    pa, pb = [], []
    for o in OFFSETS:
        off = (o[0] * dims[1] + o[1]) * dims[2] + o[2]
        want = uniq + off
        j = np.searchsorted(uniq, want)
        j[j == len(uniq)] = 0
        hit = uniq[j] == want
        pa.append(np.flatnonzero(hit))
        pb.append(j[hit])
    return (order, start.astype(np.int64), end.astype(np.int64),
            np.concatenate(pa).astype(np.int64), np.concatenate(pb).astype(np.int64))


def _find(parent: np.ndarray, i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def _close(a: np.ndarray, b: np.ndarray, r2: float) -> bool:
    for k in range(0, len(a), _CHUNK):
        d = a[k:k + _CHUNK, None, :] - b[None, :, :]
        if np.any(np.einsum("ijk,ijk->ij", d, d) <= r2):
            return True
    return False


def _union_cells_py(pts, start, end, pair_a, pair_b, r2, parent):
    for a, b in zip(pair_a.tolist(), pair_b.tolist()):
        ra, rb = _find(parent, a), _find(parent, b)
        if ra == rb:
            continue
        if _close(pts[start[a]:end[a]], pts[start[b]:end[b]], r2):
            parent[max(ra, rb)] = min(ra, rb)


def component_labels(points: np.ndarray, radius: float, backend: str | None = None) -> np.ndarray:
    """Label per point; equal labels mean connected by hops of length <= radius."""
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order, start, end, pair_a, pair_b = cell_pairs(pts, radius)
    sorted_pts = np.ascontiguousarray(pts[order])
    parent = np.arange(len(start), dtype=np.int64)
    use_c = _ckernel is not None if backend is None else backend == "cython"
    if use_c:
        if _ckernel is None:
            raise ImportError("compiled kernel is not available")
        _ckernel.union_cells(sorted_pts, start, end, pair_a, pair_b, radius * radius, parent)
    else:
        _union_cells_py(sorted_pts, start, end, pair_a, pair_b, radius * radius, parent)
    roots = np.array([_find(parent, i) for i in range(len(parent))], dtype=np.int64)
    cell_of = np.empty(n, dtype=np.int64)
    cell_of[order] = np.repeat(np.arange(len(start)), end - start)
    return roots[cell_of]
