"""Event filtering, unprojection, binding, and the brute-force oracle."""

import numpy as np
import pytest

from evsplat import association as assoc
from evsplat import geometry as geo
from evsplat import scene as sc
from evsplat.events import EventStream


def make_stream(ts, xs, ys, ps, width=16, height=16, t_start=0, t_end=1000):
    return EventStream(ts, xs, ys, ps, width, height, t_start, t_end)


def brute_force_bind(positions, unprojected, k, cutoff, eps=assoc.DISTANCE_EPS):
    """Exhaustive oracle with the same tie and cutoff rules as bind()."""
    entries = [[] for _ in range(len(positions))]
    if len(unprojected) == 0:
        return assoc.BindingTable(entries, k)
    pts = unprojected.points
    m = len(pts)
    kk = min(k, m)
    for gi, g in enumerate(np.atleast_2d(positions)):
        d = np.sqrt(np.sum((pts - g) ** 2, axis=1))
        order = np.lexsort((np.arange(m), d))[:kk]
        if d[order[0]] > cutoff:
            continue
        raw = 1.0 / (d[order] + eps)
        weights = raw / raw.sum()
        entries[gi] = [(int(unprojected.event_ids[j]), float(w))
                       for j, w in zip(order, weights)]
    return assoc.BindingTable(entries, k)


class TestFilterEventsNear:
    def test_full_stream_window(self):
        s = make_stream([0, 250, 500, 750, 1000], [0, 1, 2, 3, 4],
                        [0, 0, 0, 0, 0], [1, 1, 1, 1, 1])
        out = assoc.filter_events_near(s, 500, 500)
        assert len(out) == 5

    def test_zero_delta_keeps_exact_matches_only(self):
        s = make_stream([100, 200, 200, 300], [0, 1, 2, 3], [0, 0, 0, 0],
                        [1, 1, 1, 1])
        out = assoc.filter_events_near(s, 200, 0)
        assert list(out.x) == [1, 2]

    def test_known_capture_count(self):
        ts = [0, 100, 200, 300, 400, 500, 600, 700, 800, 900]
        s = make_stream(ts, list(range(10)), [0] * 10, [1] * 10)
        out = assoc.filter_events_near(s, 450, 160)
        assert list(out.t) == [300, 400, 500, 600]

    def test_negative_delta_rejected(self):
        s = make_stream([0], [0], [0], [1])
        with pytest.raises(ValueError):
            assoc.filter_events_near(s, 0, -1)


class TestUnproject:
    INTR = geo.CameraIntrinsics(16.0, 16.0, 8.0, 8.0, 16, 16)

    def test_event_on_surface_unprojects_to_depth(self):
        depth = np.zeros((16, 16))
        alpha = np.zeros((16, 16))
        depth[8, 8] = 2.0
        alpha[8, 8] = 0.9
        s = make_stream([10], [8], [8], [1])
        out = assoc.unproject_events(s, depth, alpha, geo.Pose.identity(), self.INTR)
        assert len(out) == 1
        np.testing.assert_allclose(out.points[0], [0.0, 0.0, 2.0], atol=1e-12)

    def test_background_events_excluded(self):
        depth = np.full((16, 16), 2.0)
        alpha = np.full((16, 16), 0.1)   # below threshold everywhere
        s = make_stream([10, 20], [3, 4], [3, 4], [1, -1])
        out = assoc.unproject_events(s, depth, alpha, geo.Pose.identity(), self.INTR)
        assert len(out) == 0

    def test_empty_stream(self):
        s = make_stream([], np.zeros(0, np.int32), np.zeros(0, np.int32),
                        np.zeros(0, np.int8), t_start=0, t_end=10)
        out = assoc.unproject_events(s, np.ones((16, 16)), np.ones((16, 16)),
                                     geo.Pose.identity(), self.INTR)
        assert len(out) == 0

    def test_rendered_depth_roundtrip(self):
        # render one splat, fire an event on it, unproject: the point lands
        # near the splat surface
        positions = np.array([[0.0, 0.0, 2.0]])
        out = sc.render(positions, np.log([[0.5, 0.5, 0.5]]),
                        np.array([[1.0, 0, 0, 0]]), np.array([0.99]),
                        np.array([[1.0, 0, 0]]), geo.Pose.identity(), self.INTR)
        s = make_stream([10], [8], [8], [1])
        lifted = assoc.unproject_events(s, out.depth, out.alpha,
                                        geo.Pose.identity(), self.INTR)
        assert len(lifted) == 1
        assert abs(lifted.points[0][2] - 2.0) < 0.05


class TestBind:
    def make_unprojected(self, points):
        points = np.atleast_2d(points)
        n = len(points)
        return assoc.UnprojectedEvents(np.arange(n), points,
                                       np.zeros(n, np.int32), np.zeros(n, np.int32),
                                       np.zeros(n, np.int64))

    def test_single_pair(self):
        table = assoc.bind(np.array([[0.0, 0, 0]]),
                           self.make_unprojected([[0.0, 0, 1]]), k=3, cutoff=np.inf)
        assert table.entries[0] == [(0, 1.0)]

    def test_inverse_distance_weights(self):
        table = assoc.bind(np.array([[0.0, 0, 0]]),
                           self.make_unprojected([[0.0, 0, 1], [0.0, 0, 3]]),
                           k=2, cutoff=np.inf, eps=0.0)
        (e0, w0), (e1, w1) = table.entries[0]
        assert (e0, e1) == (0, 1)
        assert w0 == pytest.approx(0.75)
        assert w1 == pytest.approx(0.25)

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(0)
        table = assoc.bind(rng.uniform(-1, 1, (40, 3)),
                           self.make_unprojected(rng.uniform(-1, 1, (100, 3))),
                           k=3, cutoff=np.inf)
        for items in table.entries:
            if items:
                assert sum(w for _, w in items) == pytest.approx(1.0, abs=1e-9)

    def test_cutoff_leaves_far_gaussians_empty(self):
        table = assoc.bind(np.array([[0.0, 0, 0], [100.0, 0, 0]]),
                           self.make_unprojected([[0.0, 0, 0.5]]),
                           k=3, cutoff=1.0)
        assert table.entries[0]
        assert table.entries[1] == []

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            n_g = int(rng.integers(5, 200))
            n_e = int(rng.integers(5, 500))
            positions = rng.uniform(-2, 2, (n_g, 3))
            lifted = self.make_unprojected(rng.uniform(-2, 2, (n_e, 3)))
            cutoff = float(rng.uniform(0.5, 3.0))
            fast = assoc.bind(positions, lifted, k=3, cutoff=cutoff)
            slow = brute_force_bind(positions, lifted, k=3, cutoff=cutoff)
            assert fast.entries == slow.entries, trial

    def test_order_invariance_with_id_tiebreak(self):
        rng = np.random.default_rng(2)
        positions = rng.uniform(-1, 1, (20, 3))
        pts = rng.uniform(-1, 1, (50, 3))
        lifted = self.make_unprojected(pts)
        table_a = assoc.bind(positions, lifted, k=3, cutoff=np.inf)
        perm = rng.permutation(50)
        shuffled = assoc.UnprojectedEvents(
            lifted.event_ids[perm], pts[perm],
            lifted.xs[perm], lifted.ys[perm], lifted.ts[perm])
        table_b = assoc.bind(positions, shuffled, k=3, cutoff=np.inf)
        assert table_a.entries == table_b.entries

    def test_no_binding_references_excluded_events(self):
        rng = np.random.default_rng(3)
        depth = np.full((16, 16), 2.0)
        alpha = rng.random((16, 16))
        n = 60
        s = make_stream(np.sort(rng.integers(0, 1000, n)),
                        rng.integers(0, 16, n), rng.integers(0, 16, n),
                        rng.choice([-1, 1], n))
        intr = geo.CameraIntrinsics(16.0, 16.0, 8.0, 8.0, 16, 16)
        lifted = assoc.unproject_events(s, depth, alpha, geo.Pose.identity(), intr)
        excluded = set(np.flatnonzero(alpha[s.y, s.x] < 0.5).tolist())
        table = assoc.bind(rng.uniform(-1, 1, (10, 3)), lifted, k=3, cutoff=np.inf)
        for items in table.entries:
            for eid, _ in items:
                assert eid not in excluded

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            assoc.bind(np.zeros((1, 3)), self.make_unprojected([[0.0, 0, 1]]), k=0)

    def test_csv_dump(self, tmp_path):
        table = assoc.bind(np.array([[0.0, 0, 0]]),
                           self.make_unprojected([[0.0, 0, 1], [0.0, 0, 2]]),
                           k=2, cutoff=np.inf)
        path = tmp_path / "bindings.csv"
        table.write_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "gaussian_id,event_id,weight"
        assert len(lines) == 3


class TestRebind:
    def test_schedule(self):
        assert assoc.should_rebind(0)
        assert assoc.should_rebind(500)
        assert not assoc.should_rebind(501)
        assert not assoc.should_rebind(499)
        assert assoc.should_rebind(1000)

    def test_custom_period(self):
        assert assoc.should_rebind(40, period=20)
        assert not assoc.should_rebind(41, period=20)

    def test_negative_iteration_rejected(self):
        with pytest.raises(ValueError):
            assoc.should_rebind(-1)

    def test_default_period_is_500(self):
        assert assoc.DEFAULT_REBIND_PERIOD == 500
