"""Geometry-aware event-to-splat data association.

Events near a reference time are unprojected through the rendered depth
map; each Gaussian then binds to its k nearest unprojected events with
normalized inverse-distance weights.  The neighbor search runs on a
uniform grid but is exact: the test suite requires it to match an
exhaustive brute-force oracle on every instance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .events import EventStream
from .geometry import CameraIntrinsics, Pose, unproject_many

logger = logging.getLogger(__name__)

__all__ = [
    "UnprojectedEvents",
    "BindingTable",
    "filter_events_near",
    "unproject_events",
    "bind",
    "should_rebind",
    "exact_knn",
    "DEFAULT_K",
    "DEFAULT_REBIND_PERIOD",
    "DEFAULT_ALPHA_THRESHOLD",
    "DISTANCE_EPS",
]

DEFAULT_K = 3
DEFAULT_REBIND_PERIOD = 500
DEFAULT_ALPHA_THRESHOLD = 0.5
DISTANCE_EPS = 1e-6


@dataclass
class UnprojectedEvents:
    """World-space points for events that landed on rendered geometry."""

    event_ids: np.ndarray   # indices into the source stream
    points: np.ndarray      # (M, 3)
    xs: np.ndarray
    ys: np.ndarray
    ts: np.ndarray

    def __len__(self) -> int:
        return len(self.event_ids)


@dataclass
class BindingTable:
    """Per-Gaussian (event_id, weight) associations, weights summing to 1."""

    entries: list[list[tuple[int, float]]]
    k: int

    def bound_indices(self) -> np.ndarray:
        return np.array([i for i, e in enumerate(self.entries) if e], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.entries)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("gaussian_id,event_id,weight\n")
            for gid, items in enumerate(self.entries):
                for eid, wgt in items:
                    fh.write(f"{gid},{eid},{wgt:.12g}\n")


def filter_events_near(stream: EventStream, t0: int, delta_t: int) -> EventStream:
    """Events with |t - t0| <= delta_t, order preserved."""
    if delta_t < 0:
        raise ValueError("delta_t must be non-negative")
    lo = np.searchsorted(stream.t, t0 - delta_t, side="left")
    hi = np.searchsorted(stream.t, t0 + delta_t, side="right")
    return EventStream(
        stream.t[lo:hi], stream.x[lo:hi], stream.y[lo:hi], stream.p[lo:hi],
        stream.width, stream.height, stream.t_start, stream.t_end,
    )


def unproject_events(
    stream: EventStream,
    depth_map: np.ndarray,
    alpha_map: np.ndarray,
    pose: Pose,
    intr: CameraIntrinsics,
    alpha_threshold: float = DEFAULT_ALPHA_THRESHOLD,
) -> UnprojectedEvents:
    """Lift events to 3-D through the rendered depth.

    Events on pixels whose accumulated alpha is below the threshold hit
    the background and are dropped; the rest follow the camera ray to the
    rendered depth.
    """
    xs = stream.x
    ys = stream.y
    depth = depth_map[ys, xs]
    alpha = alpha_map[ys, xs]
    keep = (alpha >= alpha_threshold) & (depth > 0)
    ids = np.flatnonzero(keep)
    if ids.size == 0:
        return UnprojectedEvents(ids, np.zeros((0, 3)), ids.astype(np.int32),
                                 ids.astype(np.int32), ids.astype(np.int64))
    uv = np.stack([xs[ids].astype(np.float64), ys[ids].astype(np.float64)], axis=1)
    points = unproject_many(uv, depth[ids], pose, intr)
    return UnprojectedEvents(ids, points, xs[ids], ys[ids], stream.t[ids])


def exact_knn(queries: np.ndarray, points: np.ndarray, k: int):
    """Exact k nearest neighbors via a uniform grid with ring expansion.

    Returns (indices (N, k'), distances (N, k')) sorted by (distance,
    point index); k' = min(k, len(points)).  Matches brute force exactly,
    including tie-breaking on equal distances.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n_q, m = len(queries), len(points)
    kk = min(k, m)
    if m == 0 or kk == 0:
        return (np.zeros((n_q, 0), dtype=np.int64), np.zeros((n_q, 0)))

    both = np.concatenate([points, queries], axis=0)
    lo = both.min(axis=0)
    span = float(np.max(both.max(axis=0) - lo))
    cells_per_axis = max(1, int(np.ceil(m ** (1.0 / 3.0))))
    cell = max(span / cells_per_axis, 1e-12)

    grid: dict[tuple[int, int, int], list[int]] = {}
    coords = np.floor((points - lo) / cell).astype(np.int64)
    for i, c in enumerate(map(tuple, coords)):
        grid.setdefault(c, []).append(i)
    grid_lo = coords.min(axis=0)
    grid_hi = coords.max(axis=0)

    out_idx = np.zeros((n_q, kk), dtype=np.int64)
    out_dist = np.zeros((n_q, kk))

    for qi in range(n_q):
        q = queries[qi]
        qc = np.floor((q - lo) / cell).astype(np.int64)
        # farthest ring that can still contain occupied cells
        reach = int(max(np.max(qc - grid_lo), np.max(grid_hi - qc), 0))
        cand: list[int] = []
        best_kth = np.inf
        ring = 0
        while ring <= reach:
            # any point in a cell at Chebyshev ring r is at least (r-1)*cell away
            if len(cand) >= kk and (ring - 1) * cell > best_kth:
                break
            found = _ring_cells(grid, qc, ring)
            if found:
                cand.extend(found)
                if len(cand) >= kk:
                    d = np.sqrt(np.sum((points[cand] - q) ** 2, axis=1))
                    best_kth = np.partition(d, kk - 1)[kk - 1]
            ring += 1
        cand = np.asarray(cand, dtype=np.int64)
        d = np.sqrt(np.sum((points[cand] - q) ** 2, axis=1))
        order = np.lexsort((cand, d))[:kk]
        out_idx[qi] = cand[order]
        out_dist[qi] = d[order]
    return out_idx, out_dist


def _ring_cells(grid, center, ring: int):
    """Point indices in all cells at exactly Chebyshev distance `ring`."""
    cx, cy, cz = int(center[0]), int(center[1]), int(center[2])
    found: list[int] = []
    if ring == 0:
        hit = grid.get((cx, cy, cz))
        return list(hit) if hit else []
    r = ring
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            zs = (-r, r) if max(abs(dx), abs(dy)) < r else range(-r, r + 1)
            for dz in zs:
                hit = grid.get((cx + dx, cy + dy, cz + dz))
                if hit:
                    found.extend(hit)
    return found


def bind(
    gaussian_positions: np.ndarray,
    unprojected: UnprojectedEvents,
    k: int = DEFAULT_K,
    cutoff: float | None = None,
    eps: float = DISTANCE_EPS,
) -> BindingTable:
    """Associate each Gaussian with its k nearest unprojected events.

    Weights are normalized inverse distances 1 / (d + eps).  A Gaussian
    whose nearest event is farther than `cutoff` gets no bindings;
    `cutoff=None` derives it as 5% of the Gaussian bounding-box diagonal.
    Events may be shared between Gaussians.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    positions = np.atleast_2d(np.asarray(gaussian_positions, dtype=np.float64))
    n = len(positions)
    entries: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    if len(unprojected) == 0:
        return BindingTable(entries, k)
    if cutoff is None:
        diag = float(np.linalg.norm(positions.max(axis=0) - positions.min(axis=0)))
        cutoff = 0.05 * diag if diag > 0 else np.inf

    idx, dist = exact_knn(positions, unprojected.points, k)
    for gi in range(n):
        if dist[gi, 0] > cutoff:
            continue
        raw = 1.0 / (dist[gi] + eps)
        weights = raw / raw.sum()
        entries[gi] = [
            (int(unprojected.event_ids[idx[gi, j]]), float(weights[j]))
            for j in range(idx.shape[1])
        ]
    return BindingTable(entries, k)


def should_rebind(iteration: int, period: int = DEFAULT_REBIND_PERIOD) -> bool:
    """True on iteration 0 and every `period` iterations after."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return iteration % period == 0
