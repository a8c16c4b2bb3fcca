"""Checkpoint format: one JSON header line, then little-endian float32.

The header records array names, shapes, and any model metadata; arrays
follow concatenated in header order.  Serialization is deterministic:
identical arrays and metadata produce identical bytes.
"""

from __future__ import annotations

import json

import numpy as np

from .flow import LoraAdapterSet, TiledFlowPredictor
from .scene import DeformationField, GaussianScene, PoseCorrector

__all__ = [
    "save_arrays",
    "load_arrays",
    "save_predictor",
    "load_predictor",
    "save_model",
    "load_model",
]


def save_arrays(path, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(meta)
    header["arrays"] = [{"name": n, "shape": list(np.asarray(a).shape)} for n, a in arrays]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_arrays(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        blob = fh.read()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(np.float64)
        offset += count * 4
    return header, arrays


# --------------------------------------------------------------------------
# flow predictor
# --------------------------------------------------------------------------

def save_predictor(path, predictor: TiledFlowPredictor,
                   adapters: LoraAdapterSet | None = None) -> None:
    meta = {
        "kind": "flow_predictor",
        "width": predictor.width,
        "height": predictor.height,
        "bins": predictor.bins,
        "patch": predictor.patch,
        "hidden": list(predictor.hidden),
        "flow_scale": predictor.flow_scale,
        "corr_radius": predictor.corr_radius,
        "corr_step": predictor.corr_step,
        "rank": adapters.rank if adapters is not None else 0,
    }
    arrays = []
    for i, (w, b) in enumerate(zip(predictor.weights, predictor.biases)):
        arrays.append((f"w{i}", w))
        arrays.append((f"b{i}", b))
    if adapters is not None:
        for i, (a, b) in enumerate(zip(adapters.down, adapters.up)):
            arrays.append((f"lora_a{i}", a))
            arrays.append((f"lora_b{i}", b))
    save_arrays(path, meta, arrays)


def load_predictor(path):
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "flow_predictor":
        raise ValueError(f"{path} is not a flow predictor checkpoint")
    predictor = TiledFlowPredictor(
        meta["width"], meta["height"], bins=meta["bins"], patch=meta["patch"],
        hidden=tuple(meta["hidden"]), flow_scale=meta["flow_scale"],
        corr_radius=meta.get("corr_radius", 10), corr_step=meta.get("corr_step", 2),
    )
    n_layers = len(predictor.weights)
    for i in range(n_layers):
        predictor.weights[i] = arrays[f"w{i}"]
        predictor.biases[i] = arrays[f"b{i}"]
    adapters = None
    if meta.get("rank", 0) > 0:
        adapters = LoraAdapterSet(predictor.layer_shapes(), rank=meta["rank"])
        for i in range(n_layers):
            adapters.down[i] = arrays[f"lora_a{i}"]
            adapters.up[i] = arrays[f"lora_b{i}"]
    return predictor, adapters


# --------------------------------------------------------------------------
# scene + networks bundle
# --------------------------------------------------------------------------

def save_model(path, scene: GaussianScene, deformation: DeformationField | None,
               corrector: PoseCorrector | None) -> None:
    meta: dict = {"kind": "scene_model"}
    arrays = [
        ("positions", scene.positions),
        ("log_scales", scene.log_scales),
        ("quats", scene.quats),
        ("opacities_raw", scene.opacities_raw),
        ("colors", scene.colors),
    ]
    if deformation is not None:
        meta["deformation"] = {
            "pos_freqs": deformation.pos_freqs,
            "time_freqs": deformation.time_freqs,
            "depth": deformation.depth,
            "width": deformation.width,
            "skip_at": deformation.skip_at,
        }
        for i, a in enumerate(deformation.arrays()):
            arrays.append((f"deform{i}", a))
    if corrector is not None:
        meta["corrector"] = {
            "time_freqs": corrector.time_freqs,
            "hidden": corrector.weights[0].shape[0],
        }
        for i, a in enumerate(corrector.arrays()):
            arrays.append((f"pose{i}", a))
    save_arrays(path, meta, arrays)


def load_model(path):
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "scene_model":
        raise ValueError(f"{path} is not a scene model checkpoint")
    scene = GaussianScene(arrays["positions"], arrays["log_scales"], arrays["quats"],
                          arrays["opacities_raw"], arrays["colors"])
    deformation = None
    if "deformation" in meta:
        d = meta["deformation"]
        deformation = DeformationField(pos_freqs=d["pos_freqs"], time_freqs=d["time_freqs"],
                                       depth=d["depth"], width=d["width"], skip_at=d["skip_at"])
        deformation.set_arrays([arrays[f"deform{i}"]
                                for i in range(2 * (deformation.depth + 3))])
    corrector = None
    if "corrector" in meta:
        c = meta["corrector"]
        corrector = PoseCorrector(time_freqs=c["time_freqs"], hidden=c["hidden"])
        corrector.set_arrays([arrays[f"pose{i}"] for i in range(4)])
    return scene, deformation, corrector
