"""Decomposed-motion and photometric supervision, and the training loop.

Training runs in two phases.  A warm-up phase fits the splats (and the
deformation at keyframe times) to the sparse RGB frames alone.  The joint
phase then samples a consecutive frame pair per iteration, renders at a
random in-between time against an event-integrated pseudo label, and ties
per-splat image motion to the measured event flow after splitting it into
the camera's rigid ego-motion and the splats' own scene flow.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .association import (
    BindingTable,
    bind,
    filter_events_near,
    should_rebind,
    unproject_events,
)
from .autodiff import Tensor, stack
from .contrast import FlowField
from .events import EventStream, accumulate_polarity
from .geometry import CameraIntrinsics, Pose, RigidVelocity, relative_velocity_graph
from .optim import AdamOptimizer
from .scene import (
    DeformationField,
    GaussianScene,
    PoseCorrector,
    RenderSettings,
    pose_at,
    pose_at_graph,
    render,
    render_graph,
)

logger = logging.getLogger(__name__)

__all__ = [
    "LossWeights",
    "FrameTriplet",
    "TrainConfig",
    "TrainingDiverged",
    "ego_flow_vectors",
    "ego_flow_field",
    "ego_flow_graph",
    "project_graph",
    "scene_flow_graph",
    "gaussian_scene_flow",
    "event_window",
    "event_pseudo_label",
    "event_loss",
    "binding_flow_targets",
    "motion_loss_graph",
    "motion_loss",
    "total_loss",
    "train",
]

DEFAULT_WARM_UP = 3500
DEFAULT_GAMMA2_TAU = 4000.0


class TrainingDiverged(RuntimeError):
    """Raised when the total loss goes non-finite; carries a snapshot path."""


@dataclass
class LossWeights:
    """Loss mixing: constant event weight, annealed motion weight."""

    gamma1: float = 1.0
    gamma2_tau: float = DEFAULT_GAMMA2_TAU
    warm_up: int = DEFAULT_WARM_UP

    def gamma2(self, iteration: int) -> float:
        return 1.0 - math.exp(-iteration / self.gamma2_tau)

    def phase(self, iteration: int) -> str:
        return "warmup" if iteration < self.warm_up else "joint"


@dataclass
class FrameTriplet:
    """A consecutive keyframe pair and a sampled event time between them."""

    t0: int
    t2: int
    t_e: int
    image0: np.ndarray
    image2: np.ndarray
    pair_index: int

    def __post_init__(self):
        if not (self.t0 < self.t_e < self.t2):
            raise ValueError("need t0 < t_e < t2")


def total_loss(l_rgb, l_event, l_motion, iteration: int,
               weights: LossWeights | None = None):
    """Weighted sum of the three losses at a training iteration."""
    if weights is None:
        weights = LossWeights()
    return l_rgb + weights.gamma1 * l_event + weights.gamma2(iteration) * l_motion


# --------------------------------------------------------------------------
# ego-motion image velocity
# --------------------------------------------------------------------------

def ego_flow_vectors(xs_pix, ys_pix, inv_depth, vel: RigidVelocity,
                     intr: CameraIntrinsics) -> np.ndarray:
    """Rigid-motion image velocity at given pixels, in pixels per time unit.

    Evaluated in focal-normalized coordinates and rescaled to pixels by
    the focal lengths; `inv_depth` is 1/Z at each pixel.
    """
    x, y = intr.pixel_to_normalized(np.asarray(xs_pix, dtype=np.float64),
                                    np.asarray(ys_pix, dtype=np.float64))
    inv_depth = np.asarray(inv_depth, dtype=np.float64)
    vx, vy, vz = vel.v_c
    wx, wy, wz = vel.w_c
    fn_x = inv_depth * (-vx + x * vz) + (x * y * wx - (1.0 + x * x) * wy + y * wz)
    fn_y = inv_depth * (-vy + y * vz) + ((1.0 + y * y) * wx - x * y * wy - x * wz)
    return np.stack([intr.fx * fn_x, intr.fy * fn_y], axis=-1)


def ego_flow_field(inv_depth_map: np.ndarray, vel: RigidVelocity,
                   intr: CameraIntrinsics, valid: np.ndarray | None = None):
    """Dense ego-motion flow; invalid-depth pixels get zero flow.

    Returns (FlowField, valid mask).
    """
    h, w = inv_depth_map.shape
    ys, xs = np.mgrid[0:h, 0:w]
    vec = ego_flow_vectors(xs, ys, inv_depth_map, vel, intr)
    if valid is None:
        valid = np.isfinite(inv_depth_map) & (inv_depth_map > 0)
    vec = np.where(valid[..., None], vec, 0.0)
    return FlowField(vec), valid


def ego_flow_graph(xs_pix, ys_pix, inv_depth, v: Tensor, w: Tensor,
                   intr: CameraIntrinsics) -> Tensor:
    """Differentiable ego flow at given pixels for twist tensors (v, w)."""
    x, y = intr.pixel_to_normalized(np.asarray(xs_pix, dtype=np.float64),
                                    np.asarray(ys_pix, dtype=np.float64))
    x = Tensor(x)
    y = Tensor(y)
    iz = Tensor(np.asarray(inv_depth, dtype=np.float64))
    fn_x = iz * (-v[0] + x * v[2]) + (x * y * w[0] - (1.0 + x * x) * w[1] + y * w[2])
    fn_y = iz * (-v[1] + y * v[2]) + ((1.0 + y * y) * w[0] - x * y * w[1] - x * w[2])
    return stack([fn_x * intr.fx, fn_y * intr.fy], axis=-1)


# --------------------------------------------------------------------------
# projected splat scene flow
# --------------------------------------------------------------------------

def project_graph(points: Tensor, pose: Pose, intr: CameraIntrinsics) -> Tensor:
    """Differentiable pinhole projection of (N, 3) points, pose constant."""
    cam = points @ Tensor(pose.rotation.T) + Tensor(pose.t).reshape(1, 3)
    u = cam[:, 0] / cam[:, 2] * intr.fx + intr.cx
    v = cam[:, 1] / cam[:, 2] * intr.fy + intr.cy
    return stack([u, v], axis=1)


def scene_flow_graph(positions: np.ndarray, field: DeformationField,
                     t0: float, t1: float, pose: Pose, intr: CameraIntrinsics,
                     leaves=None) -> Tensor:
    """Projected 2-D displacement of each splat due to deformation alone.

    Positions are canonical; the camera pose is held fixed so rigid camera
    motion stays out of this term.
    """
    dx0, _, _ = field.offsets_graph(positions, t0, leaves)
    dx1, _, _ = field.offsets_graph(positions, t1, leaves)
    base = Tensor(positions)
    uv0 = project_graph(base + dx0, pose, intr)
    uv1 = project_graph(base + dx1, pose, intr)
    return uv1 - uv0


def gaussian_scene_flow(positions: np.ndarray, field: DeformationField,
                        t0: float, t1: float, pose: Pose,
                        intr: CameraIntrinsics) -> np.ndarray:
    """Numeric convenience wrapper around `scene_flow_graph`."""
    return scene_flow_graph(positions, field, t0, t1, pose, intr).data


# --------------------------------------------------------------------------
# event pseudo-image loss
# --------------------------------------------------------------------------

def event_window(t0: int, t_e: int, t2: int):
    """Polarity-integration window for the pseudo label: from the nearer
    keyframe toward the sample time (left branch on the exact midpoint)."""
    if t_e <= (t0 + t2) / 2.0:
        return t0, t_e, "left"
    return t_e, t2, "right"


def event_pseudo_label(image0: np.ndarray, image2: np.ndarray,
                       polarity_sum: np.ndarray, t0: int, t_e: int, t2: int) -> np.ndarray:
    """Brightness-transported label at t_e from the nearest keyframe.

    Left of the midpoint the label is I(t0) * exp(sum pC); right of it
    I(t2) / exp(sum pC), with the polarity sum taken over the matching
    window.  Single-channel polarity applies to every color channel.
    """
    _, _, side = event_window(t0, t_e, t2)
    factor = np.exp(polarity_sum)[..., None]
    if side == "left":
        return image0 * factor
    return image2 / factor


def event_loss(render_te, image0, image2, polarity_sum, t_e: int, t0: int, t2: int):
    """L1 mean between the render at t_e and the event pseudo label.

    `render_te` may be a Tensor (training) or an array (evaluation).
    """
    label = event_pseudo_label(np.asarray(image0, dtype=np.float64),
                               np.asarray(image2, dtype=np.float64),
                               polarity_sum, t0, t_e, t2)
    if isinstance(render_te, Tensor):
        return (render_te - Tensor(label)).abs().mean()
    return float(np.abs(np.asarray(render_te) - label).mean())


# --------------------------------------------------------------------------
# motion loss over bindings
# --------------------------------------------------------------------------

def binding_flow_targets(table: BindingTable, flow: FlowField, stream: EventStream):
    """Per-bound-Gaussian measured flow and binding centroids.

    Returns (bound gaussian indices (M,), weighted flow targets (M, 2),
    centroid pixels (M, 2) float).  The predicted event flow acts as the
    supervision signal, so targets are plain numbers, not graph nodes.
    """
    bound = table.bound_indices()
    targets = np.zeros((len(bound), 2))
    centroids = np.zeros((len(bound), 2))
    for row, gi in enumerate(bound):
        for eid, wgt in table.entries[gi]:
            px = int(stream.x[eid])
            py = int(stream.y[eid])
            targets[row] += wgt * flow.vectors[py, px]
            centroids[row] += wgt * np.array([px, py], dtype=np.float64)
    return bound, targets, centroids


def motion_loss_graph(targets: np.ndarray, ego: Tensor, scene_flow: Tensor) -> Tensor:
    """Mean L1 norm of (measured flow - (ego flow + scene flow)) per splat."""
    residual = Tensor(targets) - (ego + scene_flow)
    return residual.abs().sum(axis=1).mean()


def motion_loss(targets, ego, scene_flow) -> float:
    """Numeric twin of `motion_loss_graph` for plain arrays."""
    if len(targets) == 0:
        logger.warning("motion loss over an empty binding table is zero")
        return 0.0
    residual = np.asarray(targets) - (np.asarray(ego) + np.asarray(scene_flow))
    return float(np.abs(residual).sum(axis=1).mean())


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    warm_up: int = DEFAULT_WARM_UP
    iterations: int = 6000
    lr_gaussians: float = 1.6e-4
    lr_deformation: float = 1.6e-4
    lr_pose: float = 1e-4
    gamma1: float = 1.0
    gamma2_tau: float = DEFAULT_GAMMA2_TAU
    use_event_loss: bool = True
    use_motion_loss: bool = True
    rebind_period: int = 500
    delta_t_fraction: float = 0.1
    binding_k: int = 3
    alpha_threshold: float = 0.5
    contrast_threshold: float = 0.1
    flow_bins: int = 5
    background: tuple = (0.0, 0.0, 0.0)
    eval_every: int = 50
    snapshot_path: str | None = None

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            gamma1=self.gamma1 if self.use_event_loss else 0.0,
            gamma2_tau=self.gamma2_tau,
            warm_up=self.warm_up,
        )


class _PairState:
    """Cached per-pair binding data: targets, centroids, inverse depths."""

    __slots__ = ("bound", "targets", "centroids", "inv_depths")

    def __init__(self, bound, targets, centroids, inv_depths):
        self.bound = bound
        self.targets = targets
        self.centroids = centroids
        self.inv_depths = inv_depths


def train(
    scene: GaussianScene,
    deformation: DeformationField,
    corrector: PoseCorrector | None,
    key_times_us,
    key_poses,
    key_images,
    stream: EventStream,
    flow_for_pair,
    intr: CameraIntrinsics,
    config: TrainConfig,
    rng: np.random.Generator,
    heldout=None,
):
    """Two-phase optimization of splats, deformation, and pose correction.

    flow_for_pair(pair_index, t0_us, t2_us) -> FlowField supplies the
    measured event flow per keyframe interval (typically the fine-tuned
    predictor; tests may pass ground truth).  `heldout` is an optional
    list of (time_us, image) pairs; one held-out PSNR is logged every
    `eval_every` iterations.  Returns a list of per-iteration metric rows;
    the model objects are updated in place.
    """
    key_times = np.asarray(key_times_us, dtype=np.int64)
    if len(key_times) < 2:
        raise ValueError("need at least two keyframes")
    if len(key_images) != len(key_times):
        raise ValueError("one image per keyframe required")
    weights = config.loss_weights()
    settings = RenderSettings(background=config.background)

    t_min, t_max = float(key_times[0]), float(key_times[-1])

    def t_norm(t_us) -> float:
        return (float(t_us) - t_min) / max(t_max - t_min, 1.0)

    pos_t = Tensor(scene.positions.copy(), requires_grad=True)
    opa_t = Tensor(scene.opacities_raw.copy(), requires_grad=True)
    col_t = Tensor(scene.colors.copy(), requires_grad=True)
    field_leaves = deformation.make_leaves()
    corr_leaves = corrector.make_leaves() if corrector is not None else []

    opt_gauss = AdamOptimizer([pos_t, opa_t, col_t], lr=config.lr_gaussians)
    opt_field = AdamOptimizer(field_leaves, lr=config.lr_deformation)
    opt_pose = AdamOptimizer(corr_leaves, lr=config.lr_pose) if corr_leaves else None

    bindings: dict[int, _PairState] = {}
    delta_t = int(config.delta_t_fraction * (t_max - t_min) / max(len(key_times) - 1, 1))
    history: list[dict] = []
    heldout_psnr = ""

    def deformed_graph(t_us):
        """Deformed positions tensor at a time, plus frozen scale/quat arrays."""
        dx, ds, dq = deformation.offsets_graph(pos_t.data, t_norm(t_us), field_leaves)
        mu = pos_t + dx
        log_s = scene.log_scales + ds.data
        q = scene.quats + dq.data
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        return mu, log_s, q

    def render_at(t_us):
        mu, log_s, q = deformed_graph(t_us)
        pose = pose_at(corrector, key_times, key_poses, float(t_us)) \
            if corrector is not None else _interp(key_times, key_poses, t_us)
        color_t, out = render_graph(mu, opa_t.sigmoid(), col_t, log_s, q,
                                    pose, intr, settings)
        return color_t, out, pose

    def snapshot_and_raise(iteration, message):
        path = config.snapshot_path
        if path:
            state = {
                "iteration": iteration,
                "message": message,
                "positions_norm": float(np.linalg.norm(pos_t.data)),
                "opacity_range": [float(opa_t.data.min()), float(opa_t.data.max())],
            }
            with open(path, "w") as fh:
                json.dump(state, fh, indent=1, sort_keys=True)
        raise TrainingDiverged(f"{message} at iteration {iteration}")

    for iteration in range(config.iterations):
        phase = weights.phase(iteration)
        l_rgb_val = l_event_val = l_motion_val = 0.0

        if phase == "warmup":
            ki = int(rng.integers(len(key_times)))
            color_t, _, _ = render_at(key_times[ki])
            loss = (color_t - Tensor(key_images[ki])).abs().mean()
            l_rgb_val = loss.item()
        else:
            pi = int(rng.integers(len(key_times) - 1))
            t0, t2 = int(key_times[pi]), int(key_times[pi + 1])
            t_e = int(rng.integers(t0 + 1, t2))

            c0, _, _ = render_at(t0)
            c2, _, _ = render_at(t2)
            l_rgb = ((c0 - Tensor(key_images[pi])).abs().mean()
                     + (c2 - Tensor(key_images[pi + 1])).abs().mean()) * 0.5
            loss = l_rgb
            l_rgb_val = l_rgb.item()

            if config.use_event_loss:
                win_a, win_b, _ = event_window(t0, t_e, t2)
                pol = accumulate_polarity(stream, win_a, win_b, config.contrast_threshold)
                ce, _, _ = render_at(t_e)
                l_event = event_loss(ce, key_images[pi], key_images[pi + 1],
                                     pol, t_e, t0, t2)
                loss = loss + weights.gamma1 * l_event
                l_event_val = l_event.item()

            if config.use_motion_loss:
                if should_rebind(iteration - config.warm_up, config.rebind_period):
                    bindings.clear()
                state = bindings.get(pi)
                if state is None:
                    state = _build_bindings(
                        scene, deformation, corrector, key_times, key_poses,
                        stream, flow_for_pair, intr, config, settings,
                        pos_t.data, opa_t.data, col_t.data, field_leaves,
                        pi, t0, t2, delta_t, t_norm,
                    )
                    bindings[pi] = state
                if len(state.bound) > 0:
                    pose_fixed = pose_at(corrector, key_times, key_poses, float(t0)) \
                        if corrector is not None else _interp(key_times, key_poses, t0)
                    sf = scene_flow_graph(pos_t.data[state.bound], deformation,
                                          t_norm(t0), t_norm(t2), pose_fixed, intr,
                                          field_leaves)
                    if corrector is not None:
                        qa, ta = pose_at_graph(corrector, key_times, key_poses,
                                               float(t0), corr_leaves)
                        qb, tb = pose_at_graph(corrector, key_times, key_poses,
                                               float(t2), corr_leaves)
                        v, w = relative_velocity_graph(qa, ta, qb, tb, 1.0)
                    else:
                        v, w = Tensor(np.zeros(3)), Tensor(np.zeros(3))
                    ego = ego_flow_graph(state.centroids[:, 0], state.centroids[:, 1],
                                         state.inv_depths, v, w, intr)
                    # residuals in image-normalized units so the three loss
                    # terms share a scale under the documented weights
                    l_motion = motion_loss_graph(state.targets, ego, sf) \
                        * (1.0 / intr.width)
                    loss = loss + weights.gamma2(iteration) * l_motion
                    l_motion_val = l_motion.item()
                else:
                    logger.warning("pair %d has no bindings; motion loss skipped", pi)

        if not np.isfinite(loss.item()):
            snapshot_and_raise(iteration, "non-finite total loss")

        opt_gauss.zero_grad()
        opt_field.zero_grad()
        if opt_pose:
            opt_pose.zero_grad()
        loss.backward()
        opt_gauss.step()
        opt_field.step()
        if opt_pose:
            opt_pose.step()
        np.clip(col_t.data, 0.0, 1.0, out=col_t.data)

        if heldout and iteration % config.eval_every == 0:
            hi = (iteration // config.eval_every) % len(heldout)
            t_h, img_h = heldout[hi]
            mu, log_s, q = deformed_graph(t_h)
            pose_h = pose_at(corrector, key_times, key_poses, float(t_h)) \
                if corrector is not None else _interp(key_times, key_poses, t_h)
            out_h = render(mu.data, log_s, q, _sigmoid_np(opa_t.data), col_t.data,
                           pose_h, intr, settings)
            mse = float(np.mean((out_h.color - img_h) ** 2))
            heldout_psnr = f"{10.0 * math.log10(1.0 / max(mse, 1e-10)):.4f}"

        history.append({
            "iteration": iteration,
            "phase": phase,
            "l_rgb": l_rgb_val,
            "l_event": l_event_val,
            "l_motion": l_motion_val,
            "gamma2": weights.gamma2(iteration),
            "heldout_psnr": heldout_psnr,
        })

    scene.positions = pos_t.data
    scene.opacities_raw = opa_t.data
    scene.colors = col_t.data
    deformation.write_back(field_leaves)
    if corrector is not None:
        corrector.write_back(corr_leaves)
    return history


def _interp(key_times, key_poses, t_us) -> Pose:
    from .geometry import interpolate_pose

    return interpolate_pose(np.asarray(key_times, dtype=np.float64), key_poses, float(t_us))


def _sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x))


def _build_bindings(scene, deformation, corrector, key_times, key_poses, stream,
                    flow_for_pair, intr, config, settings, positions_now,
                    opa_raw_now, colors_now, field_leaves,
                    pi, t0, t2, delta_t, t_norm) -> _PairState:
    """Render depth at t0, lift nearby events, and bind them to the
    deformed splats; precompute the per-splat flow targets."""
    dx, ds, dq = deformation.offsets_graph(positions_now, t_norm(t0), field_leaves)
    mu = positions_now + dx.data
    log_s = scene.log_scales + ds.data
    q = scene.quats + dq.data
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    pose0 = pose_at(corrector, key_times, key_poses, float(t0)) \
        if corrector is not None else _interp(key_times, key_poses, t0)
    out = render(mu, log_s, q, _sigmoid_np(opa_raw_now), colors_now,
                 pose0, intr, settings)

    near = filter_events_near(stream, t0, delta_t)
    lifted = unproject_events(near, out.depth, out.alpha, pose0, intr,
                              config.alpha_threshold)
    table = bind(mu, lifted, k=config.binding_k)

    flow = flow_for_pair(pi, t0, t2)
    bound, targets, centroids = binding_flow_targets(table, flow, near)
    if len(bound) == 0:
        return _PairState(bound, targets, centroids, np.zeros(0))
    cx = np.clip(np.rint(centroids[:, 0]).astype(int), 0, intr.width - 1)
    cy = np.clip(np.rint(centroids[:, 1]).astype(int), 0, intr.height - 1)
    depth = out.depth[cy, cx]
    alpha = out.alpha[cy, cx]
    inv_depth = np.where((depth > 0) & (alpha > 1e-6), 1.0 / np.maximum(depth, 1e-9), 0.0)
    return _PairState(bound, targets, centroids, inv_depth)
