"""End-to-end command-line pipeline and the determinism contract."""

import json
import os
import shutil

import numpy as np
import pytest

from evsplat import cli, images
from evsplat.events import read_events_binary, read_events_csv

CONFIG_TEMPLATE = """\
[paths]
scene = scene.json
output = out

[common]
seed = {seed}

[scene]
n_side = 6
size = 32
depth = 2.0
extent = 1.2
amplitude = 0.12
cycles = 1.0
span_us = 1000000

[simulate]
n_frames = 31
keyframe_every = 5
threshold = {threshold}

[flow]
patch = 16
hidden = 24,24
bins = 5
windows = 10
epochs = 3
rank = 4
pretrain_speeds = 4,0;-4,0
pretrain_steps = 20
corpus_frames = 9
tv_weight = 0.01
pretrain_tv_weight = 0.02

[train]
warm_up = 8
iterations = 20
lr_gaussians = 0.001
lr_deformation = 0.001
lr_pose = 0.0005
gamma2_tau = 10
rebind_period = 10
eval_every = 10
deform_width = 16
deform_depth = 3
pose_hidden = 8
use_posenet = true

[render]
background = 0,0,0
gamma = 1.0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.ini"
    cfg_path.write_text(CONFIG_TEMPLATE.format(seed=0, threshold=0.1))
    assert cli.main(["make-scene", "--config", str(cfg_path)]) == 0
    assert cli.main(["simulate", "--config", str(cfg_path)]) == 0
    assert cli.main(["pretrain-flow", "--config", str(cfg_path)]) == 0
    assert cli.main(["finetune-flow", "--config", str(cfg_path)]) == 0
    assert cli.main(["train", "--config", str(cfg_path)]) == 0
    return root, cfg_path


class TestPipeline:
    def test_outputs_exist(self, workspace):
        root, _ = workspace
        out = root / "out"
        for name in ("events.csv", "events.bin", "events_meta.json",
                     "flow_base.ckpt", "flow.ckpt", "model.ckpt",
                     "metrics.csv", "train_eval.csv",
                     "pretrain_loss.csv", "finetune_loss.csv",
                     "flow_before.png", "flow_after.png"):
            assert (out / name).exists(), name

    def test_event_files_agree(self, workspace):
        root, _ = workspace
        out = root / "out"
        meta = json.loads((out / "events_meta.json").read_text())
        a = read_events_csv(out / "events.csv", meta["width"], meta["height"],
                            meta["t_start"], meta["t_end"])
        b = read_events_binary(out / "events.bin", meta["width"], meta["height"],
                               meta["t_start"], meta["t_end"])
        assert a == b
        assert len(a) == meta["count"]

    def test_keyframes_are_parseable_images(self, workspace):
        root, _ = workspace
        keys = json.loads((root / "out/keyframes/keyframes.json").read_text())
        assert len(keys["entries"]) == 7  # 31 frames, every 5th
        img = images.read_ppm(root / "out/keyframes" / keys["entries"][0]["file"])
        assert img.shape == (32, 32, 3)

    def test_render_and_eval_commands(self, workspace):
        root, cfg = workspace
        assert cli.main(["render", "--config", str(cfg),
                         "--times", "250000,750000"]) == 0
        renders = os.listdir(root / "out/renders")
        assert any(n.endswith(".ppm") for n in renders)
        assert any(n.endswith("_depth.pgm") for n in renders)
        assert cli.main(["eval", "--config", str(cfg)]) == 0
        assert (root / "out/eval.csv").exists()

    def test_metrics_csv_shape(self, workspace):
        root, _ = workspace
        lines = (root / "out/metrics.csv").read_text().strip().split("\n")
        assert lines[0] == ("iteration,phase,l_rgb,l_event,l_motion,gamma2,"
                            "heldout_psnr")
        assert len(lines) == 21  # header + 20 iterations

    def test_finetune_requires_checkpoint(self, tmp_path):
        cfg_path = tmp_path / "run.ini"
        cfg_path.write_text(CONFIG_TEMPLATE.format(seed=0, threshold=0.1))
        assert cli.main(["make-scene", "--config", str(cfg_path)]) == 0
        assert cli.main(["finetune-flow", "--config", str(cfg_path)]) == 1

    def test_missing_config_fails_cleanly(self, capsys):
        assert cli.main(["train", "--config", "/nonexistent.ini"]) == 1
        err = capsys.readouterr().err
        assert err.startswith("ERROR:")


class TestSimulateContracts:
    def test_lower_threshold_gives_more_events(self, tmp_path):
        counts = {}
        for threshold in (0.05, 0.1):
            root = tmp_path / f"c{threshold}"
            root.mkdir()
            cfg_path = root / "run.ini"
            cfg_path.write_text(CONFIG_TEMPLATE.format(seed=0, threshold=threshold))
            assert cli.main(["make-scene", "--config", str(cfg_path)]) == 0
            assert cli.main(["simulate", "--config", str(cfg_path)]) == 0
            meta = json.loads((root / "out/events_meta.json").read_text())
            counts[threshold] = meta["count"]
        assert counts[0.05] >= counts[0.1]

    def test_static_scene_emits_no_events(self, tmp_path):
        cfg_path = tmp_path / "run.ini"
        text = CONFIG_TEMPLATE.format(seed=0, threshold=0.1)
        text = text.replace("amplitude = 0.12", "amplitude = 0.0")
        cfg_path.write_text(text)
        assert cli.main(["make-scene", "--config", str(cfg_path)]) == 0
        assert cli.main(["simulate", "--config", str(cfg_path)]) == 0
        meta = json.loads((tmp_path / "out/events_meta.json").read_text())
        assert meta["count"] == 0


class TestDeterminism:
    def test_rerun_reproduces_metrics_bytes(self, workspace, tmp_path):
        src_root, src_cfg = workspace
        root = tmp_path / "repeat"
        root.mkdir()
        cfg_path = root / "run.ini"
        cfg_path.write_text(CONFIG_TEMPLATE.format(seed=0, threshold=0.1))
        for command in ("make-scene", "simulate", "pretrain-flow",
                        "finetune-flow", "train"):
            assert cli.main([command, "--config", str(cfg_path)]) == 0
        for name in ("metrics.csv", "train_eval.csv", "pretrain_loss.csv",
                     "finetune_loss.csv", "events.csv"):
            assert ((root / "out" / name).read_bytes()
                    == (src_root / "out" / name).read_bytes()), name

    def test_seed_override_changes_training(self, workspace, tmp_path):
        src_root, _ = workspace
        root = tmp_path / "seeded"
        shutil.copytree(src_root, root)
        cfg_path = root / "run.ini"
        assert cli.main(["train", "--config", str(cfg_path), "--seed", "7"]) == 0
        assert ((root / "out/metrics.csv").read_bytes()
                != (src_root / "out/metrics.csv").read_bytes())
