"""Learned event optical flow: a tiled dense predictor with frozen base
weights, low-rank adapters, and unsupervised contrast fine-tuning.

The predictor maps a voxel-grid patch (all temporal bins of one P x P
tile) through shared dense layers to one flow vector per tile, then
bilinearly upsamples the tile map to a per-pixel field.  Fine-tuning on a
new scene never touches the base weights: each layer carries an additive
low-rank correction B @ A that starts at exactly zero and is trained by
minimizing the reciprocal of the warped-event sharpness objective plus a
total-variation penalty on the flow.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, gather_pixels, numeric_gradient
from .contrast import (
    DEFAULT_SCALES,
    DEFAULT_TILE_SIZE,
    FlowField,
    bilinear_vote_graph,
    multiscale_sharpness_graph,
)
from .events import EventStream, VoxelGrid, voxelize
from .optim import AdamOptimizer, ExponentialDecay

logger = logging.getLogger(__name__)

__all__ = [
    "TiledFlowPredictor",
    "LoraAdapterSet",
    "FlowTrainConfig",
    "FlowSample",
    "TrainingError",
    "make_flow_samples",
    "tv_regularizer",
    "flow_loss_graph",
    "pretrain",
    "contrast_finetune",
    "gradient_check",
    "weights_checksum",
]

DEFAULT_RANK = 16
DEFAULT_EPOCHS = 3
DEFAULT_LR_START = 5e-4
DEFAULT_LR_END = 1e-4


class TrainingError(RuntimeError):
    """Raised when a training run produces a non-finite loss."""


@dataclass
class FlowTrainConfig:
    epochs: int = DEFAULT_EPOCHS
    lr_start: float = DEFAULT_LR_START
    lr_end: float = DEFAULT_LR_END
    tv_weight: float = 0.01
    scales: tuple = DEFAULT_SCALES
    tile_size: int = DEFAULT_TILE_SIZE
    sharpness_floor: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.tv_weight < 0:
            raise ValueError("TV weight must be non-negative")


@dataclass
class FlowSample:
    """One training window: the event slice and its voxel encoding."""

    stream: EventStream
    grid: VoxelGrid


def make_flow_samples(stream: EventStream, n_windows: int, bins: int = 5,
                      min_events: int = 0, offsets=(0.0,)) -> list[FlowSample]:
    """Cut a scene stream into equal windows and voxelize each.

    `offsets` (fractions of one window) adds shifted copies of the
    tiling, giving overlapping samples; windows with fewer than
    `min_events` events are dropped — a near-empty window carries no
    contrast signal but a huge reciprocal loss.
    """
    span = (stream.t_end - stream.t_start) / n_windows
    samples = []
    for off in offsets:
        start = stream.t_start + off * span
        k = 0
        while start + (k + 1) * span <= stream.t_end + 1e-9:
            a = int(round(start + k * span))
            b = int(round(start + (k + 1) * span))
            k += 1
            win = stream.slice_window(a, b)
            if len(win) < min_events:
                continue
            samples.append(FlowSample(win, voxelize(win, a, b, bins)))
    return samples


class LoraAdapterSet:
    """Per-layer low-rank corrections: effective weight = W0 + B @ A.

    A is small random Gaussian, B starts at zero, so the correction is
    exactly zero at creation and predictions match the frozen base.
    """

    def __init__(self, layer_shapes, rank: int = DEFAULT_RANK,
                 init_scale: float | None = None,
                 rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.rank = int(rank)
        self.down: list[np.ndarray] = []  # A: (r, in)
        self.up: list[np.ndarray] = []    # B: (out, r)
        for out_dim, in_dim in layer_shapes:
            # fan-in scale for A keeps A @ x of order |x|, so the zero-init
            # B factor sees usable gradients from the first step
            scale = init_scale if init_scale is not None else 1.0 / np.sqrt(in_dim)
            self.down.append(scale * rng.standard_normal((self.rank, in_dim)))
            self.up.append(np.zeros((out_dim, self.rank)))

    def arrays(self) -> list[np.ndarray]:
        """Trainable factors interleaved (A0, B0, A1, B1, ...)."""
        out: list[np.ndarray] = []
        for a, b in zip(self.down, self.up):
            out.extend([a, b])
        return out

    def set_arrays(self, arrays) -> None:
        for i in range(len(self.down)):
            self.down[i] = np.array(arrays[2 * i])
            self.up[i] = np.array(arrays[2 * i + 1])


class TiledFlowPredictor:
    """Per-tile dense flow network with shared weights.

    Each tile of the voxel grid is summarized by normalized temporal
    correlation features: the early-bin slice correlated against the
    late-bin slice over a grid of candidate displacements.  The features
    are translation-equivariant, so the dense stack learns a
    displacement readout instead of memorizing scene layouts (raw
    flattened patches were tried first and did exactly that).  Hidden
    activations are tanh; the linear output is scaled by `flow_scale`.
    """

    def __init__(self, width: int, height: int, bins: int = 5, patch: int = 16,
                 hidden: tuple[int, ...] = (64, 64), flow_scale: float = 10.0,
                 corr_radius: int = 10, corr_step: int = 2,
                 rng: np.random.Generator | None = None):
        if width % patch or height % patch:
            raise ValueError("patch size must divide the sensor dimensions")
        if rng is None:
            rng = np.random.default_rng(0)
        self.width = width
        self.height = height
        self.bins = bins
        self.patch = patch
        self.hidden = tuple(hidden)
        self.flow_scale = float(flow_scale)
        self.corr_radius = int(corr_radius)
        self.corr_step = int(corr_step)
        self._shifts = [(dy, dx)
                        for dy in range(-corr_radius, corr_radius + 1, corr_step)
                        for dx in range(-corr_radius, corr_radius + 1, corr_step)]
        in_dim = len(self._shifts) + 1  # correlations + event-density feature
        sizes = [in_dim, *hidden, 2]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i in range(len(sizes) - 1):
            w = rng.standard_normal((sizes[i + 1], sizes[i])) / np.sqrt(sizes[i])
            if i == len(sizes) - 2:
                # moderate head, zero bias (a zero grid maps to zero flow).
                # A dead-zero head would block gradients to the hidden
                # layers, and near-zero initial flows start inside the
                # zero-warp sharpness hump that pixel-quantized events
                # carry; ~0.3 px initial tile flows clear both traps.
                w *= 0.3
            self.weights.append(w)
            self.biases.append(np.zeros(sizes[i + 1]))
        self._upsample = _tile_upsample_matrix(width, height, patch)

    @property
    def tiles_x(self) -> int:
        return self.width // self.patch

    @property
    def tiles_y(self) -> int:
        return self.height // self.patch

    def layer_shapes(self):
        return [w.shape for w in self.weights]

    def base_arrays(self) -> list[np.ndarray]:
        """Base parameters interleaved (W0, b0, W1, b1, ...)."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_base_arrays(self, arrays) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = np.array(arrays[2 * i])
            self.biases[i] = np.array(arrays[2 * i + 1])

    def _tile_sum(self, image: np.ndarray) -> np.ndarray:
        p = self.patch
        v = image.reshape(self.tiles_y, p, self.tiles_x, p)
        return v.sum(axis=(1, 3)).reshape(-1)

    def patches(self, grid: VoxelGrid) -> np.ndarray:
        """(tiles, features) input matrix of normalized correlations.

        Unsigned early/late occupancy maps (first vs last half of the
        temporal bins) are correlated per tile over the displacement
        grid; each tile normalizes by its occupancy norms so the features
        live in [0, 1] regardless of event density.
        """
        v = grid.values
        if v.shape != (self.bins, self.height, self.width):
            raise ValueError(
                f"voxel grid shape {v.shape} does not match predictor "
                f"({self.bins}, {self.height}, {self.width})"
            )
        half = max(1, self.bins // 2)
        early = np.abs(v[:half]).sum(axis=0)
        late = np.abs(v[-half:]).sum(axis=0)
        n_tiles = self.tiles_y * self.tiles_x
        feats = np.zeros((n_tiles, len(self._shifts) + 1))
        e_norm = self._tile_sum(early * early)
        l_norm = self._tile_sum(late * late)
        denom = np.sqrt(e_norm * l_norm) + 1e-9
        h, w = early.shape
        for k, (dy, dx) in enumerate(self._shifts):
            shifted = np.zeros_like(late)
            ys0, ys1 = max(dy, 0), h + min(dy, 0)
            xs0, xs1 = max(dx, 0), w + min(dx, 0)
            shifted[ys0:ys1, xs0:xs1] = late[ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx]
            feats[:, k] = self._tile_sum(early * shifted) / denom
        total = self._tile_sum(np.abs(v).sum(axis=0))
        feats[:, -1] = total / (total.max() + 1e-9)
        return feats

    def forward_graph(self, grid: VoxelGrid, adapters: LoraAdapterSet | None = None,
                      leaves: list[Tensor] | None = None) -> Tensor:
        """Prediction graph for one voxel grid -> flow tensor (H, W, 2).

        `leaves` supplies the trainable tensors: adapter factors
        (A0, B0, ...) when adapters are attached, else base parameters
        (W0, b0, ...).  Without leaves the pass is constant-folded.
        """
        x = Tensor(self.patches(grid))
        h = x
        n_layers = len(self.weights)
        for i in range(n_layers):
            if adapters is not None:
                w0 = Tensor(self.weights[i])
                if leaves is not None:
                    a_t, b_t = leaves[2 * i], leaves[2 * i + 1]
                else:
                    a_t, b_t = Tensor(adapters.down[i]), Tensor(adapters.up[i])
                w_eff = w0 + b_t @ a_t
                bias = Tensor(self.biases[i])
            else:
                if leaves is not None:
                    w_eff, bias = leaves[2 * i], leaves[2 * i + 1]
                else:
                    w_eff, bias = Tensor(self.weights[i]), Tensor(self.biases[i])
            h = h @ w_eff.T + bias.reshape(1, -1)
            if i < n_layers - 1:
                h = h.tanh()
        tile_flow = h * self.flow_scale  # (tiles, 2)
        flow = Tensor(self._upsample) @ tile_flow
        return flow.reshape(self.height, self.width, 2)

    def predict(self, grid: VoxelGrid, adapters: LoraAdapterSet | None = None) -> FlowField:
        """Deterministic forward pass to a per-pixel flow field."""
        return FlowField(self.forward_graph(grid, adapters).data)


def make_leaves(predictor: TiledFlowPredictor, adapters: LoraAdapterSet | None) -> list[Tensor]:
    """Trainable tensors for a run: adapter factors, or the base weights."""
    source = adapters.arrays() if adapters is not None else predictor.base_arrays()
    return [Tensor(a.copy(), requires_grad=True) for a in source]


def write_back_leaves(predictor: TiledFlowPredictor, adapters: LoraAdapterSet | None,
                      leaves: list[Tensor]) -> None:
    arrays = [t.data for t in leaves]
    if adapters is not None:
        adapters.set_arrays(arrays)
    else:
        predictor.set_base_arrays(arrays)


def _tile_upsample_matrix(width: int, height: int, patch: int) -> np.ndarray:
    """Dense bilinear interpolation from tile centers to pixels.

    Pixels beyond the outer tile centers clamp to the edge value, so the
    operator preserves constants exactly.
    """
    tx = width // patch
    ty = height // patch
    mat = np.zeros((height * width, ty * tx))

    def axis_weights(coord: float, n_tiles: int):
        if n_tiles == 1:
            return [(0, 1.0)]
        s = (coord - (patch - 1) / 2.0) / patch
        s = min(max(s, 0.0), n_tiles - 1.0)
        j0 = min(int(np.floor(s)), n_tiles - 2)
        f = s - j0
        return [(j0, 1.0 - f), (j0 + 1, f)]

    for y in range(height):
        wy = axis_weights(float(y), ty)
        for x in range(width):
            wx = axis_weights(float(x), tx)
            for jy, fy in wy:
                for jx, fx in wx:
                    mat[y * width + x, jy * tx + jx] += fy * fx
    return mat


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def tv_regularizer(flow: FlowField) -> float:
    """Forward-difference total variation of the flow field."""
    vec = flow.vectors
    total = 0.0
    for ch in range(2):
        plane = vec[..., ch]
        if plane.shape[1] > 1:
            total += np.abs(np.diff(plane, axis=1)).mean()
        if plane.shape[0] > 1:
            total += np.abs(np.diff(plane, axis=0)).mean()
    return float(total)


def tv_graph(flow: Tensor) -> Tensor:
    u = flow[:, :, 0]
    v = flow[:, :, 1]
    total = None
    for plane in (u, v):
        for term in ((plane[:, 1:] - plane[:, :-1]).abs().mean(),
                     (plane[1:, :] - plane[:-1, :]).abs().mean()):
            total = term if total is None else total + term
    return total


def flow_loss_graph(predictor: TiledFlowPredictor, adapters: LoraAdapterSet | None,
                    sample: FlowSample, config: FlowTrainConfig,
                    leaves: list[Tensor] | None = None):
    """Unsupervised loss: 1 / sharpness(warped events) + tv_weight * TV.

    Returns (loss tensor, sharpness value), or None when the window is too
    flat to score (empty, or sharpness below the floor); callers skip such
    samples.
    """
    stream = sample.stream
    if len(stream) == 0:
        return None
    flow = predictor.forward_graph(sample.grid, adapters, leaves)
    dt = stream.normalized_times(stream.t_start)
    per_event = gather_pixels(flow, stream.y, stream.x)  # (N, 2)
    xs = Tensor(stream.x.astype(np.float64)) - Tensor(dt) * per_event[:, 0]
    ys = Tensor(stream.y.astype(np.float64)) - Tensor(dt) * per_event[:, 1]
    iwe = bilinear_vote_graph(xs, ys, np.ones(len(stream)), stream.width, stream.height)
    sharp = multiscale_sharpness_graph(iwe, config.scales, config.tile_size)
    if sharp.item() < config.sharpness_floor:
        return None
    loss = 1.0 / sharp + config.tv_weight * tv_graph(flow)
    return loss, sharp.item()


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def _run_epochs(predictor, adapters, samples, config, rng) -> list[float]:
    """Per-sample stochastic steps, `config.epochs` passes over the windows."""
    leaves = make_leaves(predictor, adapters)
    schedule = ExponentialDecay(config.lr_start, config.lr_end,
                                config.epochs * len(samples))
    optimizer = AdamOptimizer(leaves)
    history: list[float] = []
    step = 0
    for _ in range(config.epochs):
        for idx in rng.permutation(len(samples)):
            out = flow_loss_graph(predictor, adapters, samples[idx], config, leaves)
            if out is None:
                logger.warning("skipping window %d: sharpness below floor", idx)
                continue
            loss, _ = out
            if not np.isfinite(loss.item()):
                raise TrainingError(f"non-finite flow loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr=schedule.lr(step))
            history.append(loss.item())
            step += 1
    write_back_leaves(predictor, adapters, leaves)
    return history


def pretrain(predictor: TiledFlowPredictor, samples: list[FlowSample],
             config: FlowTrainConfig, rng: np.random.Generator,
             steps: int = 300) -> list[float]:
    """Fit the base weights on a synthetic corpus; they freeze afterwards.

    Uses full-batch accumulation: with motions of opposite signs in the
    corpus, per-sample steps make Adam's second moment absorb the
    direction conflicts and progress stalls, while the summed gradient
    keeps a clean descent direction.  Returns per-step mean losses.
    """
    del rng  # full-batch pass is order-independent; kept for symmetry
    leaves = make_leaves(predictor, None)
    schedule = ExponentialDecay(config.lr_start, config.lr_end, steps)
    optimizer = AdamOptimizer(leaves)
    history: list[float] = []
    for step in range(steps):
        optimizer.zero_grad()
        total = 0.0
        used = 0
        for idx in range(len(samples)):
            out = flow_loss_graph(predictor, None, samples[idx], config, leaves)
            if out is None:
                continue
            loss, _ = out
            if not np.isfinite(loss.item()):
                raise TrainingError(f"non-finite flow loss at step {step}")
            loss.backward()
            total += loss.item()
            used += 1
        if used == 0:
            raise TrainingError("every corpus window fell below the sharpness floor")
        optimizer.step(lr=schedule.lr(step))
        history.append(total / used)
    write_back_leaves(predictor, None, leaves)
    return history


def contrast_finetune(predictor: TiledFlowPredictor, adapters: LoraAdapterSet,
                      samples: list[FlowSample], config: FlowTrainConfig,
                      rng: np.random.Generator) -> list[float]:
    """Adapt to one scene by training only the low-rank factors.

    Runs exactly `config.epochs` stochastic passes over the scene windows;
    the base weights are never touched.
    """
    return _run_epochs(predictor, adapters, samples, config, rng)


def gradient_check(predictor: TiledFlowPredictor, adapters: LoraAdapterSet | None,
                   sample: FlowSample, config: FlowTrainConfig,
                   fd_step: float = 1e-4) -> float:
    """Max relative error between analytic and finite-difference gradients
    of the flow loss with respect to every trainable parameter."""
    leaves = make_leaves(predictor, adapters)
    out = flow_loss_graph(predictor, adapters, sample, config, leaves)
    if out is None:
        return 0.0
    loss, _ = out
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]

    def evaluate(_values):
        res = flow_loss_graph(predictor, adapters, sample, config, leaves)
        return res[0].item()

    numeric = numeric_gradient(evaluate, [t.data for t in leaves], eps=fd_step)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def weights_checksum(predictor: TiledFlowPredictor) -> str:
    """Byte-level digest of the frozen base weights and biases."""
    h = hashlib.sha256()
    for w, b in zip(predictor.weights, predictor.biases):
        h.update(np.ascontiguousarray(w).tobytes())
        h.update(np.ascontiguousarray(b).tobytes())
    return h.hexdigest()
