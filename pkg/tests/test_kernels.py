"""Parity between the compiled kernel lane and the numpy fallback."""

import numpy as np
import pytest

from evsplat import kernels
from evsplat.kernels import _ref

core = pytest.importorskip("evsplat.kernels._core",
                           reason="compiled kernels not built")


def random_splat_scene(rng, n=120, width=48, height=40):
    means2d = np.stack([rng.uniform(-5, width + 5, n),
                        rng.uniform(-5, height + 5, n)], axis=1)
    # random SPD inverse covariances
    a = rng.uniform(0.05, 0.8, n)
    c = rng.uniform(0.05, 0.8, n)
    b = rng.uniform(-1, 1, n) * np.sqrt(a * c) * 0.7
    inv_cov = np.stack([a, b, c], axis=1)
    opacity = rng.uniform(0.05, 0.98, n)
    radius = 3.0 / np.sqrt(np.minimum(a, c))
    x0 = np.maximum(np.floor(means2d[:, 0] - radius), 0)
    x1 = np.minimum(np.floor(means2d[:, 0] + radius) + 2, width)
    y0 = np.maximum(np.floor(means2d[:, 1] - radius), 0)
    y1 = np.minimum(np.floor(means2d[:, 1] + radius) + 2, height)
    bbox = np.stack([x0, x1, y0, y1], axis=1).astype(np.int64)
    order = rng.permutation(n)
    return order, means2d, inv_cov, opacity, bbox, width, height


class TestVoteParity:
    def test_forward_and_backward_match(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            n = int(rng.integers(1, 5000))
            xs = rng.uniform(-3, 50, n)
            ys = rng.uniform(-3, 45, n)
            w = rng.uniform(-2, 2, n)
            a = _ref.bilinear_vote(xs, ys, w, 48, 40)
            b = core.bilinear_vote(xs, ys, w, 48, 40)
            np.testing.assert_allclose(a, b, atol=1e-12)
            g = rng.random((40, 48))
            ga = _ref.bilinear_vote_backward(xs, ys, w, g)
            gb = core.bilinear_vote_backward(xs, ys, w, g)
            for x, y in zip(ga, gb):
                np.testing.assert_allclose(x, y, atol=1e-12)

    def test_empty_input(self):
        for impl in (_ref, core):
            img = impl.bilinear_vote(np.zeros(0), np.zeros(0), np.zeros(0), 8, 8)
            assert img.shape == (8, 8) and img.sum() == 0


class TestSplatParity:
    def test_records_match(self):
        rng = np.random.default_rng(1)
        for trial in range(5):
            args = random_splat_scene(rng)
            ra = _ref.splat_records(*args, 1.0 / 255.0, 1e-4, 0.999)
            rb = core.splat_records(*args, 1.0 / 255.0, 1e-4, 0.999)
            np.testing.assert_array_equal(ra[0], rb[0])
            np.testing.assert_array_equal(ra[1], rb[1])
            np.testing.assert_allclose(ra[2], rb[2], rtol=1e-12)
            np.testing.assert_allclose(ra[3], rb[3], rtol=1e-12)

    def test_backward_matches(self):
        rng = np.random.default_rng(2)
        order, means2d, inv_cov, opacity, bbox, width, height = \
            random_splat_scene(rng)
        n = len(opacity)
        pix, gauss, alpha, trans = _ref.splat_records(
            order, means2d, inv_cov, opacity, bbox, width, height,
            1.0 / 255.0, 1e-4, 0.999)
        colors = rng.uniform(0, 1, (n, 3))
        z = rng.uniform(1, 4, n)
        w = alpha * trans
        total_c = np.zeros((height * width, 3))
        total_d = np.zeros(height * width)
        total_w = np.zeros(height * width)
        np.add.at(total_c, pix, w[:, None] * colors[gauss])
        np.add.at(total_d, pix, w * z[gauss])
        np.add.at(total_w, pix, w)
        gc = rng.random((height * width, 3))
        gd = rng.random(height * width)
        ga = rng.random(height * width)
        bg = np.array([0.2, 0.3, 0.4])
        outs = []
        for impl in (_ref, core):
            outs.append(impl.splat_backward(
                pix, gauss, alpha, trans, colors, z, opacity, means2d, inv_cov,
                gc, gd, ga, total_c, total_d, total_w, bg, 0.999, width))
        for a, b in zip(*outs):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_empty_order(self):
        empty = np.zeros(0, dtype=np.int64)
        for impl in (_ref, core):
            pix, gauss, alpha, trans = impl.splat_records(
                empty, np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0),
                np.zeros((0, 4), dtype=np.int64), 8, 8, 0.0, 0.0, 1.0)
            assert len(pix) == 0


class TestDispatch:
    def test_backend_reports_lane(self):
        assert kernels.BACKEND in ("cython", "numpy")

    def test_env_override_forces_numpy(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c",
             "from evsplat import kernels; print(kernels.BACKEND)"],
            env={"EVSPLAT_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
            capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "numpy"
