"""Planar geometry helpers: polygons, line of sight, grid A* planning."""

from __future__ import annotations

import heapq
import math

import numpy as np


def point_in_polygon(p, poly) -> bool:
    """Even-odd ray casting test. Points exactly on an edge count as inside."""
    x, y = p
    inside = False
    n = len(poly)
    for k in range(n):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % n]
        if _on_segment((x, y), (x0, y0), (x1, y1)):
            return True
        if (y0 > y) != (y1 > y):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if x < xc:
                inside = not inside
    return inside


def _on_segment(p, a, b, eps=1e-12) -> bool:
    cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    if abs(cross) > eps:
        return False
    return (min(a[0], b[0]) - eps <= p[0] <= max(a[0], b[0]) + eps
            and min(a[1], b[1]) - eps <= p[1] <= max(a[1], b[1]) + eps)


def point_segment_distance(p, a, b) -> float:
    px, py = p
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    if L2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / L2))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def polygon_distance(p, poly) -> float:
    """Distance from p to the polygon region (0 inside)."""
    if point_in_polygon(p, poly):
        return 0.0
    n = len(poly)
    return min(point_segment_distance(p, poly[k], poly[(k + 1) % n]) for k in range(n))


def obstacles_distance(p, obstacles) -> float:
    if not obstacles:
        return math.inf
    return min(polygon_distance(p, poly) for poly in obstacles)


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of closed segments p1p2 and q1q2."""
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(q1, p1, p2):
        return True
    if o2 == 0 and _on_segment(q2, p1, p2):
        return True
    if o3 == 0 and _on_segment(p1, q1, q2):
        return True
    if o4 == 0 and _on_segment(p2, q1, q2):
        return True
    return False


def segment_blocked(a, b, obstacles) -> bool:
    """True if segment ab touches any obstacle polygon (edge crossing or endpoint inside)."""
    for poly in obstacles:
        if point_in_polygon(a, poly) or point_in_polygon(b, poly):
            return True
        n = len(poly)
        for k in range(n):
            if segments_intersect(a, b, poly[k], poly[(k + 1) % n]):
                return True
    return False


def visible_mask(origin, targets: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Vectorized line-of-sight test.

    ``targets`` is (K, 2); ``origin`` is one point or (K, 2), one per target;
    ``edges`` is (L, 4) rows of (x0, y0, x1, y1) obstacle edges. Returns a
    bool (K,) mask, True where the segment origin->target crosses no edge.
    Targets strictly inside a polygon are always separated by at least one
    edge from an outside origin, so edge tests suffice.
    """
    K = len(targets)
    if K == 0 or len(edges) == 0:
        return np.ones(K, dtype=bool)
    o = np.asarray(origin, dtype=float).reshape(-1, 2)   # (1 or K, 2)
    d = targets - o                                   # (K, 2)
    e0 = edges[:, :2]                                 # (L, 2)
    e = edges[:, 2:] - e0                             # (L, 2)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]  # (K, L)
    w = e0[None, :, :] - o[:, None, :]                # (1 or K, L, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0]) / denom
        u = (w[..., 0] * d[:, None, 1] - w[..., 1] * d[:, None, 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    return ~hit.any(axis=1)


def polygon_edges(obstacles) -> np.ndarray:
    rows = []
    for poly in obstacles:
        n = len(poly)
        for k in range(n):
            rows.append((*poly[k], *poly[(k + 1) % n]))
    return np.asarray(rows, dtype=float).reshape(-1, 4)


def points_obstacle_distance(points: np.ndarray, edges: np.ndarray, poly_id: np.ndarray) -> np.ndarray:
    """Vectorized ``obstacles_distance`` for (K, 2) points; 0 inside any polygon."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(edges) == 0:
        return np.full(len(P), np.inf)
    a = edges[None, :, :2]
    d = edges[None, :, 2:] - a
    L2 = (d ** 2).sum(-1)
    w = P[:, None, :] - a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(np.where(L2 > 0, (w * d).sum(-1) / L2, 0.0), 0.0, 1.0)
    dist = np.hypot(*(w - t[..., None] * d).transpose(2, 0, 1)).min(axis=1)
    x, y = P[:, 0:1], P[:, 1:2]
    y0, y1 = edges[None, :, 1], edges[None, :, 3]
    x0, x1 = edges[None, :, 0], edges[None, :, 2]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    cross = straddle & (x < xc)
    n_poly = int(poly_id.max()) + 1
    parity = np.zeros((len(P), n_poly), dtype=np.int64)
    for k in range(n_poly):
        parity[:, k] = cross[:, poly_id == k].sum(axis=1)
    inside = (parity % 2 == 1).any(axis=1)
    return np.where(inside, 0.0, dist)


class GridPlanner:
    """8-connected A* over a coarse occupancy grid with line-of-sight smoothing."""

    def __init__(self, bounds, obstacles, cell=0.5, clearance=0.45):
        self.xmin, self.ymin, self.xmax, self.ymax = bounds
        self.cell = cell
        self.clearance = clearance
        self.obstacles = [tuple(map(tuple, p)) for p in obstacles]
        self.nx = int(math.ceil((self.xmax - self.xmin) / cell))
        self.ny = int(math.ceil((self.ymax - self.ymin) / cell))
        self._edges = polygon_edges(self.obstacles)
        self._poly_id = np.repeat(np.arange(len(self.obstacles)), [len(p) for p in self.obstacles])
        self.free = np.ones((self.nx, self.ny), dtype=bool)
        for i in range(self.nx):
            for j in range(self.ny):
                c = self.center(i, j)
                if not self.is_clear(c):
                    self.free[i, j] = False

    def center(self, i, j):
        return (self.xmin + (i + 0.5) * self.cell, self.ymin + (j + 0.5) * self.cell)

    def cell_of(self, p):
        i = int((p[0] - self.xmin) / self.cell)
        j = int((p[1] - self.ymin) / self.cell)
        return min(max(i, 0), self.nx - 1), min(max(j, 0), self.ny - 1)

    def is_clear(self, p, margin=None) -> bool:
        margin = self.clearance if margin is None else margin
        x, y = p
        if not (self.xmin + margin * 0.5 <= x <= self.xmax - margin * 0.5
                and self.ymin + margin * 0.5 <= y <= self.ymax - margin * 0.5):
            return False
        return obstacles_distance(p, self.obstacles) > margin

    def segment_clear(self, a, b, margin=None, step=0.1) -> bool:
        margin = self.clearance if margin is None else margin
        L = math.hypot(b[0] - a[0], b[1] - a[1])
        n = max(1, int(L / step))
        t = np.arange(n + 1)[:, None] / n
        P = np.asarray(a, dtype=float) + t * (np.asarray(b, dtype=float) - np.asarray(a, dtype=float))
        h = margin * 0.5
        if not ((P[:, 0] >= self.xmin + h) & (P[:, 0] <= self.xmax - h)
                & (P[:, 1] >= self.ymin + h) & (P[:, 1] <= self.ymax - h)).all():
            return False
        if not self.obstacles:
            return True
        return bool((points_obstacle_distance(P, self._edges, self._poly_id) > margin).all())

    def _nearest_free(self, c):
        if self.free[c]:
            return c
        best, bd = None, math.inf
        for i in range(self.nx):
            for j in range(self.ny):
                if self.free[i, j]:
                    d = (i - c[0]) ** 2 + (j - c[1]) ** 2
                    if d < bd:
                        best, bd = (i, j), d
        return best

    def plan(self, start, goal):
        """Return a smoothed waypoint list from start to goal, or None if unreachable."""
        s = self._nearest_free(self.cell_of(start))
        g = self._nearest_free(self.cell_of(goal))
        if s is None or g is None:
            return None
        cells = self._astar(s, g)
        if cells is None:
            return None
        pts = [tuple(start)] + [self.center(*c) for c in cells[1:-1]] + [tuple(goal)]
        return self._smooth(pts)

    def _astar(self, s, g):
        diag = math.sqrt(2.0)
        h = lambda c: math.hypot(c[0] - g[0], c[1] - g[1])
        openq = [(h(s), 0.0, s)]
        came = {s: None}
        cost = {s: 0.0}
        while openq:
            _, gc, c = heapq.heappop(openq)
            if c == g:
                path = []
                while c is not None:
                    path.append(c)
                    c = came[c]
                return path[::-1]
            if gc > cost[c]:
                continue
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    n = (c[0] + di, c[1] + dj)
                    if not (0 <= n[0] < self.nx and 0 <= n[1] < self.ny) or not self.free[n]:
                        continue
                    if di and dj and not (self.free[c[0] + di, c[1]] and self.free[c[0], c[1] + dj]):
                        continue
                    nc = gc + (diag if di and dj else 1.0)
                    if nc < cost.get(n, math.inf):
                        cost[n] = nc
                        came[n] = c
                        heapq.heappush(openq, (nc + h(n), nc, n))
        return None

    def _smooth(self, pts):
        out = [pts[0]]
        k = 0
        while k < len(pts) - 1:
            j = len(pts) - 1
            while j > k + 1 and not self.segment_clear(pts[k], pts[j], margin=self.clearance * 0.6):
                j -= 1
            out.append(pts[j])
            k = j
        return out
