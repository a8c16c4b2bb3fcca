"""3-D Gaussian primitives, deformation and pose-correction networks, and
a CPU splatting renderer with analytic gradients.

Rendering projects each Gaussian to the image plane (first-order
perspective approximation of the covariance), sorts front-to-back, and
alpha-blends per pixel.  The forward pass keeps per-pixel contributor
records so the backward pass can return exact gradients with respect to
world position, opacity, and color, including the dependence of the 2-D
covariance on position through the projection Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import Tensor, concat
from .geometry import (
    CameraIntrinsics,
    Pose,
    interpolate_pose,
    pose_step_graph,
    quat_to_matrix,
)

__all__ = [
    "GaussianScene",
    "RenderSettings",
    "RenderOutput",
    "render",
    "render_backward",
    "render_graph",
    "positional_encoding",
    "DeformationField",
    "PoseCorrector",
    "pose_at",
    "pose_at_graph",
]


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-5, 1.0 - 1e-5)
    return np.log(p / (1.0 - p))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


class GaussianScene:
    """Struct-of-arrays container for the splat parameters.

    Opacity is stored pre-sigmoid; scales are stored as log-scale; colors
    are plain RGB in [0, 1].
    """

    def __init__(self, positions, log_scales, quats, opacities_raw, colors):
        self.positions = np.asarray(positions, dtype=np.float64)
        self.log_scales = np.asarray(log_scales, dtype=np.float64)
        self.quats = np.asarray(quats, dtype=np.float64)
        self.opacities_raw = np.asarray(opacities_raw, dtype=np.float64)
        self.colors = np.asarray(colors, dtype=np.float64)
        n = len(self.positions)
        if not (len(self.log_scales) == len(self.quats) == len(self.opacities_raw)
                == len(self.colors) == n):
            raise ValueError("all parameter arrays must have the same length")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def opacities(self) -> np.ndarray:
        return _sigmoid(self.opacities_raw)

    def normalized_quats(self) -> np.ndarray:
        q = self.quats
        return q / np.linalg.norm(q, axis=1, keepdims=True)

    def copy(self) -> "GaussianScene":
        return GaussianScene(self.positions.copy(), self.log_scales.copy(),
                             self.quats.copy(), self.opacities_raw.copy(),
                             self.colors.copy())

    def to_dicts(self) -> list[dict]:
        out = []
        opa = self.opacities
        scales = np.exp(self.log_scales)
        for i in range(len(self)):
            out.append({
                "position": self.positions[i].tolist(),
                "scale": scales[i].tolist(),
                "rotation": self.quats[i].tolist(),
                "opacity": float(opa[i]),
                "color": self.colors[i].tolist(),
            })
        return out

    @classmethod
    def from_dicts(cls, items: list[dict]) -> "GaussianScene":
        n = len(items)
        pos = np.zeros((n, 3))
        log_s = np.zeros((n, 3))
        quat = np.zeros((n, 4))
        opa = np.zeros(n)
        col = np.zeros((n, 3))
        for i, g in enumerate(items):
            pos[i] = g["position"]
            log_s[i] = np.log(np.asarray(g["scale"], dtype=np.float64))
            quat[i] = g["rotation"]
            opa[i] = _logit(np.float64(g["opacity"]))
            col[i] = g["color"]
        return cls(pos, log_s, quat, opa, col)


@dataclass
class RenderSettings:
    alpha_min: float = 1.0 / 255.0
    trans_min: float = 1e-4
    alpha_max: float = 0.999
    cov_floor: float = 0.3          # px^2 added to the 2-D covariance diagonal
    sigma_cutoff: float = 3.0       # footprint radius in standard deviations
    background: tuple = (0.0, 0.0, 0.0)
    z_near: float = 1e-4

    @classmethod
    def exact(cls, background=(0.0, 0.0, 0.0)) -> "RenderSettings":
        """No pruning thresholds or clamps: smooth everywhere, for
        gradient checks and closed-form blending examples."""
        return cls(alpha_min=0.0, trans_min=0.0, alpha_max=1.0,
                   background=background)


class RenderOutput:
    """Images plus the contributor records needed by the backward pass."""

    def __init__(self, color, depth, alpha, records, cache, background):
        self.color = color          # (H, W, 3)
        self.depth = depth          # (H, W) alpha-normalized expected depth
        self.alpha = alpha          # (H, W) accumulated opacity
        self.records = records      # (pix, gauss, alpha, trans) flat arrays
        self.background = background
        self._cache = cache

    @property
    def depth_valid(self) -> np.ndarray:
        return self.alpha > 1e-12


def _quat_to_matrices(quats: np.ndarray) -> np.ndarray:
    """Vectorized unit-quaternion to rotation-matrix conversion, (N,4)->(N,3,3)."""
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def render(
    positions: np.ndarray,
    log_scales: np.ndarray,
    quats: np.ndarray,
    opacities: np.ndarray,
    colors: np.ndarray,
    pose: Pose,
    intr: CameraIntrinsics,
    settings: RenderSettings | None = None,
) -> RenderOutput:
    """Differentiable splatting forward pass.

    `opacities` are the activated values in [0, 1].  Gaussians behind the
    camera are culled; the rest are blended front-to-back per pixel with
    early termination once transmittance drops below `trans_min`.
    """
    if settings is None:
        settings = RenderSettings()
    n = len(positions)
    width, height = intr.width, intr.height
    bg = np.asarray(settings.background, dtype=np.float64)

    rot = pose.rotation
    mu_cam = positions @ rot.T + pose.t
    z = mu_cam[:, 2]
    visible = z > settings.z_near

    mean2d = np.zeros((n, 2))
    inv_cov = np.zeros((n, 3))
    bbox = np.zeros((n, 4), dtype=np.int64)
    jac = np.zeros((n, 2, 3))
    cov_cam = np.zeros((n, 3, 3))

    if visible.any():
        idx = np.flatnonzero(visible)
        zc = z[idx]
        xc, yc = mu_cam[idx, 0], mu_cam[idx, 1]
        mean2d[idx, 0] = intr.fx * xc / zc + intr.cx
        mean2d[idx, 1] = intr.fy * yc / zc + intr.cy

        r_g = _quat_to_matrices(quats[idx])
        s = np.exp(log_scales[idx])
        m = r_g * s[:, None, :]
        cov3 = m @ m.transpose(0, 2, 1)
        cov_c = rot @ cov3 @ rot.T
        cov_cam[idx] = cov_c

        j = np.zeros((len(idx), 2, 3))
        j[:, 0, 0] = intr.fx / zc
        j[:, 0, 2] = -intr.fx * xc / zc**2
        j[:, 1, 1] = intr.fy / zc
        j[:, 1, 2] = -intr.fy * yc / zc**2
        jac[idx] = j

        cov2 = j @ cov_c @ j.transpose(0, 2, 1)
        cov2[:, 0, 0] += settings.cov_floor
        cov2[:, 1, 1] += settings.cov_floor
        det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
        det = np.maximum(det, 1e-12)
        inv_cov[idx, 0] = cov2[:, 1, 1] / det
        inv_cov[idx, 1] = -cov2[:, 0, 1] / det
        inv_cov[idx, 2] = cov2[:, 0, 0] / det

        mid = 0.5 * (cov2[:, 0, 0] + cov2[:, 1, 1])
        eig_max = mid + np.sqrt(np.maximum(mid**2 - det, 0.0))
        radius = settings.sigma_cutoff * np.sqrt(eig_max)
        x0 = np.maximum(np.floor(mean2d[idx, 0] - radius), 0)
        x1 = np.minimum(np.floor(mean2d[idx, 0] + radius) + 2, width)
        y0 = np.maximum(np.floor(mean2d[idx, 1] - radius), 0)
        y1 = np.minimum(np.floor(mean2d[idx, 1] + radius) + 2, height)
        bbox[idx] = np.stack([x0, x1, y0, y1], axis=1).astype(np.int64)

        order = idx[np.argsort(zc, kind="stable")]
    else:
        order = np.zeros(0, dtype=np.int64)

    records = kernels.splat_records(
        order, mean2d, inv_cov, opacities, bbox, width, height,
        settings.alpha_min, settings.trans_min, settings.alpha_max,
    )
    pix, gauss, alpha, trans = records
    w = alpha * trans

    flat_color = np.zeros((height * width, 3))
    flat_depth = np.zeros(height * width)
    flat_alpha = np.zeros(height * width)
    np.add.at(flat_color, pix, w[:, None] * colors[gauss])
    np.add.at(flat_depth, pix, w * z[gauss])
    np.add.at(flat_alpha, pix, w)

    color = flat_color + (1.0 - flat_alpha)[:, None] * bg
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(flat_alpha > 1e-12, flat_depth / np.maximum(flat_alpha, 1e-12), 0.0)

    cache = {
        "mean2d": mean2d, "inv_cov": inv_cov, "jac": jac, "cov_cam": cov_cam,
        "z": z, "mu_cam": mu_cam, "rot": rot, "colors": colors,
        "opacities": opacities, "settings": settings, "intr": intr,
        "flat_color_fg": flat_color, "flat_depth": flat_depth, "flat_alpha": flat_alpha,
        "n": n, "width": width, "height": height,
    }
    return RenderOutput(
        color.reshape(height, width, 3),
        depth.reshape(height, width),
        flat_alpha.reshape(height, width),
        records,
        cache,
        bg,
    )


def render_backward(
    output: RenderOutput,
    grad_color: np.ndarray,
    grad_depth: np.ndarray | None = None,
    grad_alpha: np.ndarray | None = None,
):
    """Analytic reverse pass through the blending and the projection.

    Returns a dict with gradients of the loss with respect to world
    positions, activated opacities, and colors.  Depth gradients follow
    the alpha-normalized expected-depth definition.
    """
    if output.records is None or output._cache is None:
        raise RuntimeError("render output carries no contributor records")
    cache = output._cache
    n, width, height = cache["n"], cache["width"], cache["height"]
    pix, gauss, alpha, trans = output.records
    settings: RenderSettings = cache["settings"]
    colors = cache["colors"]
    opacities = cache["opacities"]
    z = cache["z"]

    if pix.size == 0:
        return {"positions": np.zeros((n, 3)), "opacities": np.zeros(n),
                "colors": np.zeros((n, 3))}

    gc = np.ascontiguousarray(grad_color, dtype=np.float64).reshape(-1, 3)
    flat_alpha = cache["flat_alpha"]
    flat_depth = cache["flat_depth"]

    # fold normalized-depth and alpha-map gradients into accumulator space
    gd_acc = np.zeros(height * width)
    ga_img = np.zeros(height * width)
    if grad_depth is not None:
        gd = np.asarray(grad_depth, dtype=np.float64).reshape(-1)
        denom = np.maximum(flat_alpha, 1e-12)
        live = flat_alpha > 1e-12
        gd_acc = np.where(live, gd / denom, 0.0)
        ga_img -= np.where(live, gd * flat_depth / denom**2, 0.0)
    if grad_alpha is not None:
        ga_img += np.asarray(grad_alpha, dtype=np.float64).reshape(-1)

    grad_colors, grad_opacity, grad_mean2d, grad_ic, grad_z = kernels.splat_backward(
        pix, gauss, alpha, trans, colors, z, opacities, cache["mean2d"],
        cache["inv_cov"], gc, gd_acc, ga_img, cache["flat_color_fg"],
        flat_depth, flat_alpha, output.background, settings.alpha_max, width,
    )

    # chain: inverse covariance -> 2-D covariance -> projection Jacobian -> camera point
    intr = cache["intr"]
    jac = cache["jac"]
    cov_cam = cache["cov_cam"]
    mu_cam = cache["mu_cam"]
    inv_cov = cache["inv_cov"]

    gm = np.zeros((n, 2, 2))
    gm[:, 0, 0] = grad_ic[:, 0]
    gm[:, 0, 1] = gm[:, 1, 0] = 0.5 * grad_ic[:, 1]
    gm[:, 1, 1] = grad_ic[:, 2]
    m_full = np.zeros((n, 2, 2))
    m_full[:, 0, 0] = inv_cov[:, 0]
    m_full[:, 0, 1] = m_full[:, 1, 0] = inv_cov[:, 1]
    m_full[:, 1, 1] = inv_cov[:, 2]
    grad_cov2 = -m_full @ gm @ m_full
    grad_jac = 2.0 * grad_cov2 @ jac @ cov_cam

    zc = np.where(np.abs(z) > 1e-30, z, 1.0)
    xc, yc = mu_cam[:, 0], mu_cam[:, 1]
    grad_cam = np.zeros((n, 3))
    grad_cam[:, 0] = grad_jac[:, 0, 2] * (-intr.fx / zc**2)
    grad_cam[:, 1] = grad_jac[:, 1, 2] * (-intr.fy / zc**2)
    grad_cam[:, 2] = (grad_jac[:, 0, 0] * (-intr.fx / zc**2)
                      + grad_jac[:, 0, 2] * (2.0 * intr.fx * xc / zc**3)
                      + grad_jac[:, 1, 1] * (-intr.fy / zc**2)
                      + grad_jac[:, 1, 2] * (2.0 * intr.fy * yc / zc**3))
    # mean projection path
    grad_cam[:, 0] += grad_mean2d[:, 0] * intr.fx / zc
    grad_cam[:, 1] += grad_mean2d[:, 1] * intr.fy / zc
    grad_cam[:, 2] += (grad_mean2d[:, 0] * (-intr.fx * xc / zc**2)
                       + grad_mean2d[:, 1] * (-intr.fy * yc / zc**2))
    grad_cam[:, 2] += grad_z

    grad_positions = grad_cam @ cache["rot"]
    return {"positions": grad_positions, "opacities": grad_opacity, "colors": grad_colors}


def render_graph(
    positions: Tensor,
    opacities: Tensor,
    colors: Tensor,
    log_scales: np.ndarray,
    quats: np.ndarray,
    pose: Pose,
    intr: CameraIntrinsics,
    settings: RenderSettings | None = None,
):
    """Autodiff wrapper around the renderer.

    positions/opacities/colors may require grad; scales and rotations are
    taken as constants (they receive no gradients from the renderer).
    Returns (color tensor (H,W,3), RenderOutput).
    """
    out = render(positions.data, log_scales, quats, opacities.data, colors.data,
                 pose, intr, settings)

    def backward(g):
        grads = render_backward(out, g)
        positions._accumulate(grads["positions"])
        opacities._accumulate(grads["opacities"])
        colors._accumulate(grads["colors"])

    color_t = Tensor._result(out.color, (positions, opacities, colors), backward)
    return color_t, out


# --------------------------------------------------------------------------
# positional encoding and the deformation / pose-correction networks
# --------------------------------------------------------------------------

def positional_encoding(x: np.ndarray, freqs: int) -> np.ndarray:
    """[x, sin(2^l pi x), cos(2^l pi x)] for l = 0..freqs-1, concatenated.

    Output width is d * (2 * freqs + 1) for d input columns.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    parts = [x]
    for l in range(freqs):
        arg = (2.0 ** l) * np.pi * x
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=1)


class _DenseNet:
    """Shared plumbing: parameter storage and leaf management."""

    def __init__(self):
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_arrays(self, arrays) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = np.array(arrays[2 * i])
            self.biases[i] = np.array(arrays[2 * i + 1])

    def make_leaves(self) -> list[Tensor]:
        return [Tensor(a.copy(), requires_grad=True) for a in self.arrays()]

    def write_back(self, leaves: list[Tensor]) -> None:
        self.set_arrays([t.data for t in leaves])

    def _layer(self, i: int, leaves: list[Tensor] | None):
        if leaves is not None:
            return leaves[2 * i], leaves[2 * i + 1]
        return Tensor(self.weights[i]), Tensor(self.biases[i])


class DeformationField(_DenseNet):
    """Canonical-to-deformed mapping: (encoded position, encoded time) ->
    offsets for position, log-scale, and rotation.

    Dense stack with a skip connection re-joining the input encoding at
    the middle layer; the three output heads start at zero so the field is
    the identity at initialization.
    """

    def __init__(self, pos_freqs: int = 6, time_freqs: int = 4, depth: int = 8,
                 width: int = 256, skip_at: int = 4,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.pos_freqs = pos_freqs
        self.time_freqs = time_freqs
        self.depth = depth
        self.width = width
        self.skip_at = skip_at
        in_dim = 3 * (2 * pos_freqs + 1) + (2 * time_freqs + 1)
        self.in_dim = in_dim
        dims_in = []
        for i in range(depth):
            d = in_dim if i == 0 else width
            if i == skip_at:
                d += in_dim
            dims_in.append(d)
        for i in range(depth):
            self.weights.append(rng.standard_normal((width, dims_in[i])) / np.sqrt(dims_in[i]))
            self.biases.append(np.zeros(width))
        for head_dim in (3, 3, 4):  # position, log-scale, rotation offsets
            self.weights.append(np.zeros((head_dim, width)))
            self.biases.append(np.zeros(head_dim))

    def encode(self, positions: np.ndarray, t: float) -> np.ndarray:
        n = len(positions)
        enc_x = positional_encoding(positions, self.pos_freqs)
        enc_t = positional_encoding(np.array([[t]]), self.time_freqs)
        return np.concatenate([enc_x, np.repeat(enc_t, n, axis=0)], axis=1)

    def offsets_graph(self, positions: np.ndarray, t: float,
                      leaves: list[Tensor] | None = None):
        """Offset tensors (dx, ds, dq) for canonical positions at time t.

        The positions feed the encoding as constants; gradients flow to
        the network parameters only.
        """
        enc = Tensor(self.encode(positions, t))
        h = enc
        for i in range(self.depth):
            if i == self.skip_at:
                h = concat([h, enc], axis=1)
            w_t, b_t = self._layer(i, leaves)
            h = (h @ w_t.T + b_t.reshape(1, -1)).relu()
        heads = []
        for k in range(3):
            w_t, b_t = self._layer(self.depth + k, leaves)
            heads.append(h @ w_t.T + b_t.reshape(1, -1))
        return heads[0], heads[1], heads[2]

    def offsets(self, positions: np.ndarray, t: float):
        dx, ds, dq = self.offsets_graph(positions, t)
        return dx.data, ds.data, dq.data


def deform(scene: GaussianScene, field: DeformationField | None, t: float) -> GaussianScene:
    """Apply the deformation field at normalized time t.

    Position and log-scale offsets add; the rotation offset adds to the
    quaternion before re-normalization.  Opacity and color pass through.
    """
    out = scene.copy()
    if field is None:
        return out
    dx, ds, dq = field.offsets(scene.positions, t)
    out.positions = scene.positions + dx
    out.log_scales = scene.log_scales + ds
    q = scene.quats + dq
    out.quats = q / np.linalg.norm(q, axis=1, keepdims=True)
    return out


class PoseCorrector(_DenseNet):
    """Continuous pose correction: encoded time -> camera twist (v, w).

    Two dense layers with a zero-initialized head, so the correction
    starts as the identity; the twist composes with the interpolated
    keyframe pose through the exponential map.
    """

    def __init__(self, time_freqs: int = 6, hidden: int = 32,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.time_freqs = time_freqs
        in_dim = 2 * time_freqs + 1
        self.weights.append(rng.standard_normal((hidden, in_dim)) / np.sqrt(in_dim))
        self.biases.append(np.zeros(hidden))
        self.weights.append(np.zeros((6, hidden)))
        self.biases.append(np.zeros(6))

    def twist_graph(self, t: float, leaves: list[Tensor] | None = None):
        enc = Tensor(positional_encoding(np.array([[t]]), self.time_freqs))
        w0, b0 = self._layer(0, leaves)
        h = (enc @ w0.T + b0.reshape(1, -1)).relu()
        w1, b1 = self._layer(1, leaves)
        out = (h @ w1.T + b1.reshape(1, -1)).reshape(6)
        return out[0:3], out[3:6]


def _local_interval(times: np.ndarray, t: float) -> float:
    """Inter-keyframe interval at t as a fraction of the full span, so the
    corrector's twist reads as a velocity over the whole sequence."""
    idx = int(np.searchsorted(times, t, side="right")) - 1
    idx = max(0, min(idx, len(times) - 2))
    span = float(times[-1] - times[0])
    return float(times[idx + 1] - times[idx]) / max(span, 1e-12)


def pose_at_graph(corrector: PoseCorrector | None, key_times, key_poses, t: float,
                  leaves: list[Tensor] | None = None):
    """Differentiable corrected pose at time t: (q tensor, t tensor).

    The keyframe interpolation is constant; the corrector's twist, scaled
    by the local inter-keyframe interval, perturbs it through the
    exponential map.  With a zero twist the interpolated pose is returned
    exactly.
    """
    times = np.asarray(key_times, dtype=np.float64)
    base = interpolate_pose(times, key_poses, t)
    if corrector is None:
        return Tensor(base.q), Tensor(base.t)
    span = max(float(times[-1] - times[0]), 1e-12)
    t_norm = (t - float(times[0])) / span
    v, w = corrector.twist_graph(t_norm, leaves)
    dt_local = _local_interval(times, t)
    return pose_step_graph(base.q, base.t, v, w, dt_local)


def pose_at(corrector: PoseCorrector | None, key_times, key_poses, t: float) -> Pose:
    """Numeric corrected pose at time t."""
    q_t, t_t = pose_at_graph(corrector, key_times, key_poses, t)
    return Pose(q_t.data, t_t.data)
