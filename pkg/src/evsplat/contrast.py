"""Event warping, warped-event images, and sharpness objectives.

Flow fields carry one displacement vector per pixel, in pixels per event
window: warping transports each event along its flow to a reference time
with the window normalized to unit length.  The sharpness of the
resulting accumulation image (variance or squared gradient magnitude)
scores how well the flow explains the motion.

Two parallel code paths live here: plain numpy functions used by oracles
and the grid-search baseline, and autodiff twins (suffix `_graph`) used
to backpropagate through the objective when training the flow predictor.
The twins are cross-checked against the numpy path in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tensor, concat
from .events import EventStream

__all__ = [
    "FlowField",
    "WarpedEventImage",
    "warp_events",
    "build_iwe",
    "variance_objective",
    "gradient_magnitude_objective",
    "multiscale_sharpness",
    "tile_multiscale_objective",
    "cm_grid_search",
    "bilinear_vote_graph",
    "multiscale_sharpness_graph",
]

DEFAULT_SCALES = (1, 2, 4)
DEFAULT_TILE_SIZE = 16


@dataclass
class FlowField:
    """Per-pixel displacement (u, v) in pixels over one event window."""

    vectors: np.ndarray  # (H, W, 2)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 2:
            raise ValueError("flow must be (H, W, 2)")
        if not np.isfinite(self.vectors).all():
            raise ValueError("flow must be finite")

    @classmethod
    def constant(cls, u: float, v: float, width: int, height: int) -> "FlowField":
        vec = np.empty((height, width, 2), dtype=np.float64)
        vec[..., 0] = u
        vec[..., 1] = v
        return cls(vec)

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]


@dataclass
class WarpedEventImage:
    values: np.ndarray  # (H, W)
    t_ref: float


def warp_events(stream: EventStream, flow: FlowField, t_ref: float):
    """Transport events to t_ref along their per-pixel flow.

    Returns sub-pixel (xs, ys) arrays; positions may leave the sensor and
    are clipped later, at voting time.
    """
    if flow.height != stream.height or flow.width != stream.width:
        raise ValueError("flow dimensions must match the sensor")
    dt = stream.normalized_times(t_ref)
    u = flow.vectors[stream.y, stream.x, 0]
    v = flow.vectors[stream.y, stream.x, 1]
    xs = stream.x - dt * u
    ys = stream.y - dt * v
    return xs, ys


def build_iwe(xs, ys, weights, width: int, height: int, t_ref: float = 0.0) -> WarpedEventImage:
    """Bilinear-vote warped events into an accumulation image."""
    values = kernels.bilinear_vote(xs, ys, weights, width, height)
    return WarpedEventImage(values, t_ref)


def variance_objective(image) -> float:
    """Population variance of the accumulation image."""
    image = _values(image)
    if image.size == 0:
        raise ValueError("empty image")
    return float(np.var(image))


def _image_gradients(image: np.ndarray):
    """Central differences inside, one-sided at the borders, on (..., H, W)."""
    gx = np.empty_like(image)
    gx[..., :, 1:-1] = (image[..., :, 2:] - image[..., :, :-2]) * 0.5
    gx[..., :, 0] = image[..., :, 1] - image[..., :, 0]
    gx[..., :, -1] = image[..., :, -1] - image[..., :, -2]
    gy = np.empty_like(image)
    gy[..., 1:-1, :] = (image[..., 2:, :] - image[..., :-2, :]) * 0.5
    gy[..., 0, :] = image[..., 1, :] - image[..., 0, :]
    gy[..., -1, :] = image[..., -1, :] - image[..., -2, :]
    return gx, gy


def gradient_magnitude_objective(image) -> float:
    """Mean squared gradient magnitude of the accumulation image."""
    image = _values(image)
    if image.shape[-2] < 3 or image.shape[-1] < 3:
        raise ValueError("image must be at least 3x3")
    gx, gy = _image_gradients(image)
    return float(np.mean(gx * gx + gy * gy))


def _pool(image: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return image
    h = (image.shape[0] // factor) * factor
    w = (image.shape[1] // factor) * factor
    v = image[:h, :w].reshape(h // factor, factor, w // factor, factor)
    return v.mean(axis=(1, 3))


def _pad_to_multiple(image: np.ndarray, tile: int) -> np.ndarray:
    # edge replication keeps constant images exactly constant
    h, w = image.shape
    ph = (-h) % tile
    pw = (-w) % tile
    if ph == 0 and pw == 0:
        return image
    return np.pad(image, ((0, ph), (0, pw)), mode="edge")


def multiscale_sharpness(
    image: np.ndarray,
    scales=DEFAULT_SCALES,
    tile_size: int = DEFAULT_TILE_SIZE,
) -> float:
    """Average tile-wise gradient sharpness across down-sampled scales.

    The image is average-pooled by each factor in `scales`, zero-padded to
    a multiple of `tile_size`, cut into non-overlapping tiles, and the
    squared-gradient objective is averaged over tiles, then over scales.
    """
    if not scales:
        raise ValueError("need at least one scale")
    if tile_size < 3:
        raise ValueError("tile size must be at least 3")
    totals = []
    for s in scales:
        scaled = _pad_to_multiple(_pool(image, s), tile_size)
        h, w = scaled.shape
        tiles = scaled.reshape(h // tile_size, tile_size, w // tile_size, tile_size)
        tiles = tiles.transpose(0, 2, 1, 3).reshape(-1, tile_size, tile_size)
        gx, gy = _image_gradients(tiles)
        totals.append(float(np.mean(gx * gx + gy * gy)))
    return float(np.mean(totals))


def tile_multiscale_objective(
    stream: EventStream,
    flow: FlowField,
    t_ref: float,
    scales=DEFAULT_SCALES,
    tile_size: int = DEFAULT_TILE_SIZE,
    signed: bool = False,
) -> float:
    """Warp, vote, and score with the tiled multi-scale objective."""
    xs, ys = warp_events(stream, flow, t_ref)
    weights = stream.p.astype(np.float64) if signed else np.ones(len(stream))
    iwe = build_iwe(xs, ys, weights, stream.width, stream.height, t_ref)
    return multiscale_sharpness(iwe.values, scales, tile_size)


def cm_grid_search(
    stream: EventStream,
    t_ref: float,
    flow_range: float,
    step: float,
    signed: bool = False,
):
    """Exhaustive search for the constant flow maximizing sharpness.

    Brute-force oracle: evaluates the squared-gradient objective on the
    full image for every constant (u, v) on the grid and returns the
    winning FlowField together with (u, v) and the objective value.
    """
    values = np.arange(-flow_range, flow_range + step * 0.5, step)
    dt = stream.normalized_times(t_ref)
    weights = stream.p.astype(np.float64) if signed else np.ones(len(stream))
    x0 = stream.x.astype(np.float64)
    y0 = stream.y.astype(np.float64)
    best = (-np.inf, 0.0, 0.0)
    for v in values:
        ys = y0 - dt * v
        for u in values:
            xs = x0 - dt * u
            img = kernels.bilinear_vote(xs, ys, weights, stream.width, stream.height)
            score = gradient_magnitude_objective(img)
            if score > best[0]:
                best = (score, float(u), float(v))
    score, u, v = best
    return FlowField.constant(u, v, stream.width, stream.height), (u, v), score


def _values(image) -> np.ndarray:
    if isinstance(image, WarpedEventImage):
        return image.values
    return np.asarray(image, dtype=np.float64)


# --------------------------------------------------------------------------
# autodiff twins
# --------------------------------------------------------------------------

def bilinear_vote_graph(xs: Tensor, ys: Tensor, weights: np.ndarray, width: int, height: int) -> Tensor:
    """Differentiable bilinear voting (gradient w.r.t. sample positions)."""
    weights = np.asarray(weights, dtype=np.float64)
    out_data = kernels.bilinear_vote(xs.data, ys.data, weights, width, height)
    xs_data, ys_data = xs.data, ys.data

    def backward(g):
        gx, gy, _ = kernels.bilinear_vote_backward(xs_data, ys_data, weights, g)
        xs._accumulate(gx)
        ys._accumulate(gy)

    return Tensor._result(out_data, (xs, ys), backward)


def _image_gradients_graph(image: Tensor):
    gx_mid = (image[..., :, 2:] - image[..., :, :-2]) * 0.5
    gx_lo = image[..., :, 1:2] - image[..., :, 0:1]
    gx_hi = image[..., :, -1:] - image[..., :, -2:-1]
    gx = concat([gx_lo, gx_mid, gx_hi], axis=-1)
    gy_mid = (image[..., 2:, :] - image[..., :-2, :]) * 0.5
    gy_lo = image[..., 1:2, :] - image[..., 0:1, :]
    gy_hi = image[..., -1:, :] - image[..., -2:-1, :]
    gy = concat([gy_lo, gy_mid, gy_hi], axis=-2)
    return gx, gy


def _pool_graph(image: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return image
    h = (image.shape[0] // factor) * factor
    w = (image.shape[1] // factor) * factor
    v = image[:h, :w].reshape(h // factor, factor, w // factor, factor)
    return v.mean(axis=(1, 3))


def _pad_to_multiple_graph(image: Tensor, tile: int) -> Tensor:
    h, w = image.shape
    ph = (-h) % tile
    pw = (-w) % tile
    if ph:
        image = concat([image] + [image[-1:, :]] * ph, axis=0)
    if pw:
        image = concat([image] + [image[:, -1:]] * pw, axis=1)
    return image


def multiscale_sharpness_graph(
    image: Tensor,
    scales=DEFAULT_SCALES,
    tile_size: int = DEFAULT_TILE_SIZE,
) -> Tensor:
    """Autodiff twin of `multiscale_sharpness`; same value, plus gradients."""
    if not scales:
        raise ValueError("need at least one scale")
    total = None
    for s in scales:
        scaled = _pad_to_multiple_graph(_pool_graph(image, s), tile_size)
        h, w = scaled.shape
        tiles = scaled.reshape(h // tile_size, tile_size, w // tile_size, tile_size)
        tiles = tiles.transpose(0, 2, 1, 3).reshape(-1, tile_size, tile_size)
        gx, gy = _image_gradients_graph(tiles)
        term = (gx * gx + gy * gy).mean()
        total = term if total is None else total + term
    return total * (1.0 / len(scales))
