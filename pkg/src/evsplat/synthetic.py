"""Synthetic scenes and patterns with analytic ground truth.

Patterns are closed-form blob fields evaluated at shifted coordinates, so
moving sequences have no resampling blur and the true motion is known
exactly.  The toy 3-D scene is a colored splat lattice with a scripted
global oscillation, used by the end-to-end pipeline and the ablation
acceptance runs.
"""

from __future__ import annotations

import numpy as np

from .events import EventStream, simulate_events
from .geometry import CameraIntrinsics, Pose
from .scene import GaussianScene

__all__ = [
    "blob_pattern",
    "moving_frames",
    "moving_stream",
    "motion_offset",
    "make_toy_scene",
    "scene_to_dict",
    "scene_from_dict",
]


def blob_pattern(seed: int, size: int = 64, n_blobs: int | None = None,
                 sigma: float | None = None):
    """Smooth periodic intensity function made of Gaussian bumps.

    Returns eval(xx, yy) -> image; coordinates wrap on the torus so a
    translating pattern stays statistically stationary.  Blob count and
    width scale with the canvas so small sensors keep local contrast.
    """
    if n_blobs is None:
        n_blobs = max(6, round(40 * (size / 64) ** 2))
    if sigma is None:
        sigma = max(1.2, 2.5 * size / 64)
    rng = np.random.default_rng(seed)
    cx = rng.uniform(0, size, n_blobs)
    cy = rng.uniform(0, size, n_blobs)
    amp = rng.uniform(0.4, 1.0, n_blobs)

    def eval_at(xx, yy):
        out = np.full(np.shape(xx), 0.08)
        for k in range(n_blobs):
            dx = (xx - cx[k] + size / 2) % size - size / 2
            dy = (yy - cy[k] + size / 2) % size - size / 2
            out = out + amp[k] * np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
        return np.clip(out, 0.05, 1.5)

    return eval_at


def moving_frames(velocity, n_frames: int = 17, size: int = 64, seed: int = 0,
                  frame_dt_us: int = 10_000):
    """Frames of a pattern translating by `velocity` pixels over the sequence."""
    pattern = blob_pattern(seed, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    frames, times = [], []
    for k in range(n_frames):
        frac = k / (n_frames - 1)
        frames.append(pattern(xx - velocity[0] * frac, yy - velocity[1] * frac))
        times.append(k * frame_dt_us)
    return frames, times


def moving_stream(velocity, n_frames: int = 17, size: int = 64, seed: int = 0,
                  threshold: float = 0.1) -> EventStream:
    frames, times = moving_frames(velocity, n_frames, size, seed)
    return simulate_events(frames, times, threshold)


def splat_translation_stream(velocity, seed: int = 0, n_frames: int = 21,
                             size: int = 64, threshold: float = 0.1,
                             background: float = 0.35,
                             threshold_jitter: float = 0.0) -> EventStream:
    """Events from a random sparse-splat field translating linearly.

    Rendered with the package renderer so the event statistics match the
    reconstruction scenes; `velocity` is the pixel displacement over the
    whole window.
    """
    from .scene import RenderSettings, render

    scene, intr, pose, _ = make_toy_scene(size=size, seed=seed)
    settings = RenderSettings(background=(background,) * 3)
    depth = float(np.median(scene.positions[:, 2]))
    step_world = np.array([velocity[0], velocity[1], 0.0]) * depth / intr.fx
    times = np.linspace(0, 1_000_000, n_frames).astype(np.int64)
    lums = []
    for k, t in enumerate(times):
        frac = k / (n_frames - 1)
        out = render(scene.positions + frac * step_world, scene.log_scales,
                     scene.quats, scene.opacities, scene.colors, pose, intr,
                     settings)
        lums.append(out.color.mean(axis=2))
    return simulate_events(lums, times, threshold, threshold_jitter=threshold_jitter,
                           rng=np.random.default_rng(seed + 7777))


# --------------------------------------------------------------------------
# scripted scene motion (simulation-side ground truth)
# --------------------------------------------------------------------------

def motion_offset(script: dict | None, t_norm: float,
                  positions: np.ndarray | None = None) -> np.ndarray:
    """Ground-truth position offset at normalized time in [0, 1].

    Returns a (3,) global offset, or per-splat (N, 3) offsets when the
    script depends on canonical positions (banded motion).
    """
    if script is None or script.get("kind", "static") == "static":
        return np.zeros(3)
    if script["kind"] == "oscillate":
        axis = np.asarray(script["axis"], dtype=np.float64)
        amp = float(script["amplitude"])
        cycles = float(script.get("cycles", 1.0))
        return amp * np.sin(2.0 * np.pi * cycles * t_norm) * axis
    if script["kind"] == "bands":
        # alternating vertical bands oscillate in antiphase: adjacent
        # bands swap travel direction, so photometric matching between
        # look-alike splats is ambiguous while per-tile flow is not
        if positions is None:
            raise ValueError("banded motion needs canonical positions")
        axis = np.asarray(script["axis"], dtype=np.float64)
        amp = float(script["amplitude"])
        cycles = float(script.get("cycles", 1.0))
        width = float(script["band_width"])
        origin = float(script.get("band_origin", 0.0))
        band = np.floor((positions[:, 0] - origin) / width).astype(np.int64)
        sign = np.where(band % 2 == 0, 1.0, -1.0)
        base = amp * _waveform(script.get("waveform", "sine"), cycles * t_norm)
        return (base * sign)[:, None] * axis[None, :]
    raise ValueError(f"unknown motion kind {script.get('kind')!r}")


def _waveform(kind: str, u: float) -> float:
    """Unit oscillation starting at 0: sine, or a triangle wave whose
    piecewise-constant velocity keeps per-window event flow constant."""
    if kind == "sine":
        return float(np.sin(2.0 * np.pi * u))
    if kind == "triangle":
        s = u - np.floor(u)
        if s < 0.25:
            return float(4.0 * s)
        if s < 0.75:
            return float(2.0 - 4.0 * s)
        return float(4.0 * s - 4.0)
    raise ValueError(f"unknown waveform {kind!r}")


def apply_motion(script: dict | None, positions: np.ndarray, t_norm: float) -> np.ndarray:
    """Canonical positions displaced by the scripted motion at t_norm."""
    off = motion_offset(script, t_norm, positions)
    if off.ndim == 1:
        return positions + off[None, :]
    return positions + off


def make_toy_scene(
    n_side: int = 12,
    size: int = 64,
    depth: float = 2.0,
    extent: float = 1.4,
    amplitude: float = 0.15,
    cycles: float = 1.0,
    seed: int = 0,
    color_center: float = 0.55,
    color_span: float = 0.8,
    motion: str = "oscillate",
    band_px: int = 16,
    aspect: float = 1.0,
    waveform: str = "sine",
):
    """Colored splat lattice oscillating along x, viewed by a static camera.

    Returns (scene, intrinsics, keyframe poses placeholder-free dict) as a
    plain dict ready for JSON serialization; the dense frame times and the
    motion script live alongside.
    """
    rng = np.random.default_rng(seed)
    span = np.linspace(-extent / 2, extent / 2, n_side)
    xs, ys = np.meshgrid(span, span)
    n = n_side * n_side
    spacing = extent / (n_side - 1)
    # jitter breaks the lattice period, which would otherwise alias the
    # contrast-maximization objective at one-period shifts; small sharp
    # splats keep the event edges crisp enough to localize flow
    jitter = 0.35 * spacing * rng.uniform(-1, 1, (n, 2))
    positions = np.stack([xs.ravel() + jitter[:, 0], ys.ravel() + jitter[:, 1],
                          np.full(n, depth) + 0.05 * rng.standard_normal(n)], axis=1)
    scales = (0.25 * spacing * rng.uniform(0.7, 1.3, n))[:, None] * np.ones((1, 3))
    # aspect > 1 stretches splats along x: photometric residuals for
    # x-motion then live only at the tips (aperture ambiguity)
    scales[:, 0] *= aspect
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    opacities = rng.uniform(0.75, 0.95, n)
    # a narrow color span makes splats photometrically confusable, which
    # is the regime where explicit motion supervision earns its keep
    lo = np.clip(color_center - color_span / 2, 0.02, 1.0)
    hi = np.clip(color_center + color_span / 2, 0.02, 1.0)
    colors = lo + (hi - lo) * rng.random((n, 3))

    scene = GaussianScene(
        positions,
        np.log(scales),
        quats,
        np.log(opacities / (1 - opacities)),
        colors,
    )
    fov_scale = 1.15
    f = size * depth / (extent * fov_scale)
    intr = CameraIntrinsics(fx=f, fy=f, cx=(size - 1) / 2.0, cy=(size - 1) / 2.0,
                            width=size, height=size)
    pose = Pose.identity()
    if motion == "bands":
        script = {
            "kind": "bands", "axis": [1.0, 0.0, 0.0],
            "amplitude": amplitude, "cycles": cycles,
            "waveform": waveform,
            # band boundaries aligned to flow-tile boundaries in pixels
            "band_width": band_px * depth / f,
            "band_origin": (0.0 - intr.cx) / f * depth,
        }
    else:
        script = {"kind": "oscillate", "axis": [1.0, 0.0, 0.0],
                  "amplitude": amplitude, "cycles": cycles}
    return scene, intr, pose, script


def scene_to_dict(scene: GaussianScene, intr: CameraIntrinsics, key_times_us,
                  key_poses, motion: dict | None = None) -> dict:
    d = {
        "camera": intr.to_dict(),
        "gaussians": scene.to_dicts(),
        "keyframes": [
            {"time_us": int(t), **pose.to_dict()}
            for t, pose in zip(key_times_us, key_poses)
        ],
    }
    if motion is not None:
        d["motion"] = motion
    return d


def scene_from_dict(d: dict):
    intr = CameraIntrinsics.from_dict(d["camera"])
    scene = GaussianScene.from_dicts(d["gaussians"])
    key_times = [int(k["time_us"]) for k in d["keyframes"]]
    key_poses = [Pose(np.array(k["q"]), np.array(k["t"])) for k in d["keyframes"]]
    motion = d.get("motion")
    return scene, intr, key_times, key_poses, motion
