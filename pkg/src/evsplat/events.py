"""Event data types, the threshold-crossing simulator, and encodings.

The simulator follows the classic DVS model: per pixel it tracks log
intensity and emits an event each time the linearly-interpolated log
signal crosses the next multiple of the contrast threshold away from the
reference level of the previous event.  Reference levels persist across
the whole sequence (no reset at frame boundaries).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Event",
    "EventStream",
    "VoxelGrid",
    "simulate_events",
    "accumulate_polarity",
    "voxelize",
    "write_events_csv",
    "read_events_csv",
    "write_events_binary",
    "read_events_binary",
    "DEFAULT_CONTRAST_THRESHOLD",
    "DEFAULT_BINS",
    "INTENSITY_FLOOR",
]

DEFAULT_CONTRAST_THRESHOLD = 0.1
DEFAULT_BINS = 5
INTENSITY_FLOOR = 1e-3

_BINARY_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int  # microseconds
    p: int  # +1 or -1


class EventStream:
    """Time-ordered polarity spikes plus sensor geometry and time range."""

    __slots__ = ("t", "x", "y", "p", "width", "height", "t_start", "t_end")

    def __init__(self, t, x, y, p, width: int, height: int, t_start: int, t_end: int):
        self.t = np.asarray(t, dtype=np.int64)
        self.x = np.asarray(x, dtype=np.int32)
        self.y = np.asarray(y, dtype=np.int32)
        self.p = np.asarray(p, dtype=np.int8)
        self.width = int(width)
        self.height = int(height)
        self.t_start = int(t_start)
        self.t_end = int(t_end)
        self._validate()

    def _validate(self):
        n = self.t.size
        if not (self.x.size == self.y.size == self.p.size == n):
            raise ValueError("event arrays must have equal length")
        if n == 0:
            return
        if np.any(np.diff(self.t) < 0):
            raise ValueError("event timestamps must be non-decreasing")
        if self.t[0] < self.t_start or self.t[-1] > self.t_end:
            raise ValueError("events outside the declared time range")
        if np.any((self.x < 0) | (self.x >= self.width)) or np.any(
            (self.y < 0) | (self.y >= self.height)
        ):
            raise ValueError("event pixel indices outside the sensor")
        if not np.all(np.abs(self.p) == 1):
            raise ValueError("polarities must be +1 or -1")

    def __len__(self) -> int:
        return self.t.size

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EventStream)
            and self.width == other.width
            and self.height == other.height
            and self.t_start == other.t_start
            and self.t_end == other.t_end
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def slice_window(self, t_a: int, t_b: int) -> "EventStream":
        """Events with t_a <= t < t_b; declared range becomes the window."""
        lo = np.searchsorted(self.t, t_a, side="left")
        hi = np.searchsorted(self.t, t_b, side="left")
        return EventStream(
            self.t[lo:hi], self.x[lo:hi], self.y[lo:hi], self.p[lo:hi],
            self.width, self.height, t_a, t_b,
        )

    def normalized_times(self, t_ref: float | None = None) -> np.ndarray:
        """Event times mapped so the declared window spans [0, 1]."""
        span = max(self.t_end - self.t_start, 1)
        ts = (self.t - self.t_start) / span
        if t_ref is None:
            return ts
        return ts - (t_ref - self.t_start) / span


@dataclass
class VoxelGrid:
    """B temporal bins of bilinearly-shared event polarity."""

    values: np.ndarray  # (B, H, W)
    t_start: int
    t_end: int

    @property
    def bins(self) -> int:
        return self.values.shape[0]


def _log_intensity(frame: np.ndarray, floor: float) -> np.ndarray:
    return np.log(np.maximum(np.asarray(frame, dtype=np.float64), floor))


def simulate_events(
    frames,
    timestamps,
    threshold: float = DEFAULT_CONTRAST_THRESHOLD,
    *,
    intensity_floor: float = INTENSITY_FLOOR,
    threshold_jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> EventStream:
    """Run the brightness-threshold model over an intensity sequence.

    frames: sequence of (H, W) linear-intensity images.
    timestamps: matching strictly-increasing times in microseconds.
    threshold: log-intensity step per event.
    threshold_jitter: optional stddev of per-pixel additive threshold noise,
        for robustness experiments; 0 keeps the model exact.
    """
    frames = list(frames)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    if len(frames) < 2:
        raise ValueError("need at least 2 frames to simulate events")
    if timestamps.size != len(frames):
        raise ValueError("one timestamp per frame required")
    if np.any(np.diff(timestamps) <= 0):
        raise ValueError("timestamps must be strictly increasing")

    height, width = np.asarray(frames[0]).shape
    c_map = np.full((height, width), float(threshold))
    if threshold_jitter > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        # floor at half the nominal threshold: an unbounded low tail turns
        # single pixels into event fire-hoses that dominate every
        # accumulation image
        c_map = np.maximum(c_map + threshold_jitter * rng.standard_normal((height, width)),
                           0.5 * threshold)

    log_prev = _log_intensity(frames[0], intensity_floor)
    ref = log_prev.copy()
    ts_parts, xs_parts, ys_parts, ps_parts = [], [], [], []

    for k in range(1, len(frames)):
        log_cur = _log_intensity(frames[k], intensity_floor)
        t0, t1 = timestamps[k - 1], timestamps[k]
        diff = log_cur - ref
        # 1e-9 guard so an exact multiple of the threshold still fires
        n_pos = np.floor(np.maximum(diff, 0.0) / c_map + 1e-9).astype(np.int64)
        n_neg = np.floor(np.maximum(-diff, 0.0) / c_map + 1e-9).astype(np.int64)
        for counts, sign in ((n_pos, 1), (n_neg, -1)):
            total = int(counts.sum())
            if total == 0:
                continue
            ys, xs = np.nonzero(counts)
            reps = counts[ys, xs]
            ry = np.repeat(ys, reps)
            rx = np.repeat(xs, reps)
            starts = np.concatenate([[0], np.cumsum(reps)[:-1]])
            step = np.arange(total) - np.repeat(starts, reps) + 1
            level = ref[ry, rx] + sign * c_map[ry, rx] * step
            slope = log_cur[ry, rx] - log_prev[ry, rx]
            frac = np.where(np.abs(slope) > 1e-15, (level - log_prev[ry, rx]) / np.where(slope == 0, 1.0, slope), 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            t_ev = np.rint(t0 + frac * (t1 - t0)).astype(np.int64)
            ts_parts.append(t_ev)
            xs_parts.append(rx)
            ys_parts.append(ry)
            ps_parts.append(np.full(total, sign, dtype=np.int8))
        ref = ref + c_map * n_pos - c_map * n_neg
        log_prev = log_cur

    if ts_parts:
        t = np.concatenate(ts_parts)
        x = np.concatenate(xs_parts)
        y = np.concatenate(ys_parts)
        p = np.concatenate(ps_parts)
        order = np.lexsort((p, x, y, t))
        t, x, y, p = t[order], x[order], y[order], p[order]
    else:
        t = np.zeros(0, np.int64)
        x = np.zeros(0, np.int32)
        y = np.zeros(0, np.int32)
        p = np.zeros(0, np.int8)
    return EventStream(t, x, y, p, width, height, int(timestamps[0]), int(timestamps[-1]))


def accumulate_polarity(
    stream: EventStream,
    t_a: int,
    t_b: int,
    threshold: float = DEFAULT_CONTRAST_THRESHOLD,
) -> np.ndarray:
    """Per-pixel sum of polarity * threshold for events with t_a <= t < t_b."""
    if t_a > t_b:
        raise ValueError("window start must not exceed window end")
    lo = np.searchsorted(stream.t, t_a, side="left")
    hi = np.searchsorted(stream.t, t_b, side="left")
    image = np.zeros((stream.height, stream.width), dtype=np.float64)
    np.add.at(image, (stream.y[lo:hi], stream.x[lo:hi]), stream.p[lo:hi] * threshold)
    return image


def voxelize(stream: EventStream, t_start: int, t_end: int, bins: int = DEFAULT_BINS) -> VoxelGrid:
    """Bin events into a (B, H, W) grid with a bilinear temporal kernel.

    Each event splits its polarity between the two nearest bins; events
    outside [t_start, t_end] are excluded.  Total grid mass equals the sum
    of in-window polarities.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    if t_end <= t_start:
        raise ValueError("t_end must exceed t_start")
    grid = np.zeros((bins, stream.height, stream.width), dtype=np.float64)
    inside = (stream.t >= t_start) & (stream.t <= t_end)
    if not inside.any():
        return VoxelGrid(grid, t_start, t_end)
    t = stream.t[inside].astype(np.float64)
    x = stream.x[inside]
    y = stream.y[inside]
    p = stream.p[inside].astype(np.float64)
    t_star = (t - t_start) * (bins - 1) / (t_end - t_start)
    i0 = np.minimum(np.floor(t_star).astype(np.int64), bins - 2)
    frac = t_star - i0
    np.add.at(grid, (i0, y, x), p * (1.0 - frac))
    np.add.at(grid, (i0 + 1, y, x), p * frac)
    return VoxelGrid(grid, t_start, t_end)


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def write_events_csv(stream: EventStream, path) -> None:
    """One `t_us,x,y,p` line per event."""
    with open(path, "w") as fh:
        for i in range(len(stream)):
            fh.write(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{stream.p[i]}\n")


def read_events_csv(path, width: int, height: int, t_start: int, t_end: int) -> EventStream:
    rows = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2) if _nonempty(path) \
        else np.zeros((0, 4), dtype=np.int64)
    return EventStream(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3],
                       width, height, t_start, t_end)


def write_events_binary(stream: EventStream, path) -> None:
    """Packed little-endian records: u64 t, u16 x, u16 y, i8 p."""
    rec = np.empty(len(stream), dtype=_BINARY_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    rec.tofile(path)


def read_events_binary(path, width: int, height: int, t_start: int, t_end: int) -> EventStream:
    rec = np.fromfile(path, dtype=_BINARY_DTYPE)
    return EventStream(
        rec["t"].astype(np.int64), rec["x"].astype(np.int32),
        rec["y"].astype(np.int32), rec["p"].astype(np.int8),
        width, height, t_start, t_end,
    )


def _nonempty(path) -> bool:
    import os

    return os.path.getsize(path) > 0
