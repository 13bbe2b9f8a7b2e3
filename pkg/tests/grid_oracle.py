"""Independent dense-grid Dijkstra oracle for shortest-path checks.

Deliberately unrelated to the package's visibility-graph pathfinder: free
space is rasterized at 5 cm, motion uses an extended lattice neighborhood
(coprime moves up to radius 4, max angular gap ~14 deg so the metric
overestimate stays under ~0.8%), and edges are validated by requiring every
supercover cell of the move to be free.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as sparse_dijkstra

from evacsim.geometry import points_walls_distance

CELL = 0.05


def _moves():
    out = []
    for dx in range(-4, 5):
        for dy in range(-4, 5):
            if (dx, dy) == (0, 0):
                continue
            if math.gcd(abs(dx), abs(dy)) != 1:
                continue
            out.append((dx, dy))
    return out


@lru_cache(maxsize=None)
def _supercover(dx: int, dy: int) -> tuple[tuple[int, int], ...]:
    """All lattice cells touched by the segment (0,0)->(dx,dy), by sampling."""
    steps = 8 * max(abs(dx), abs(dy))
    cells = {(0, 0), (dx, dy)}
    for k in range(1, steps):
        f = k / steps
        cells.add((round(f * dx), round(f * dy)))
    return tuple(sorted(cells))


def grid_shortest_distance(scenario, start, goal, clearance) -> float:
    (x0, y0), (x1, y1) = scenario.bounds
    nx = int(round((x1 - x0) / CELL))
    ny = int(round((y1 - y0) / CELL))
    xs = x0 + (np.arange(nx) + 0.5) * CELL
    ys = y0 + (np.arange(ny) + 0.5) * CELL
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    walls = scenario._walls_np
    if walls.shape[0]:
        dmin = np.full(centers.shape[0], np.inf)
        chunk = 200_000
        for i in range(0, centers.shape[0], chunk):
            dmin[i:i + chunk] = points_walls_distance(centers[i:i + chunk], walls).min(axis=1)
        free = (dmin >= clearance).reshape(nx, ny)
    else:
        free = np.ones((nx, ny), dtype=bool)

    def cell_index(p):
        i = min(nx - 1, max(0, int((p[0] - x0) / CELL)))
        j = min(ny - 1, max(0, int((p[1] - y0) / CELL)))
        return i, j

    def nearest_free(p):
        i0, j0 = cell_index(p)
        if free[i0, j0]:
            return i0 * ny + j0
        best, best_d = None, float("inf")
        for r in range(1, 12):
            sl = free[max(0, i0 - r):i0 + r + 1, max(0, j0 - r):j0 + r + 1]
            ii, jj = np.nonzero(sl)
            if ii.size:
                ii = ii + max(0, i0 - r)
                jj = jj + max(0, j0 - r)
                d = (ii - i0) ** 2 + (jj - j0) ** 2
                k = int(np.argmin(d))
                if d[k] < best_d:
                    best, best_d = (int(ii[k]), int(jj[k])), float(d[k])
                break
        if best is None:
            raise RuntimeError(f"no free cell near {p}")
        return best[0] * ny + best[1]

    rows, cols, weights = [], [], []
    for dx, dy in _moves():
        ok = np.ones((nx, ny), dtype=bool)
        for ox, oy in _supercover(dx, dy):
            shifted = np.zeros((nx, ny), dtype=bool)
            si0, si1 = max(0, -ox), min(nx, nx - ox)
            sj0, sj1 = max(0, -oy), min(ny, ny - oy)
            if si0 < si1 and sj0 < sj1:
                shifted[si0:si1, sj0:sj1] = free[si0 + ox:si1 + ox, sj0 + oy:sj1 + oy]
            ok &= shifted
        ii, jj = np.nonzero(ok)
        rows.append(ii * ny + jj)
        cols.append((ii + dx) * ny + (jj + dy))
        weights.append(np.full(ii.size, math.hypot(dx, dy) * CELL))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.concatenate(weights)
    n = nx * ny
    graph = coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()
    src = nearest_free(start)
    dst = nearest_free(goal)
    dist = sparse_dijkstra(graph, directed=True, indices=[src], min_only=False)[0]
    return float(dist[dst])
