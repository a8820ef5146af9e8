import math

import numpy as np
import pytest

from rovernav.pathtree import (Arc, EmptyGroupError, TreeSpec, TurnInPlace,
                               arc_pose, build_tree, extend_pruned, sample_path)


def euler_integrate(pose, curvature, arclen, steps=10_000):
    """Fine-step unicycle integration (midpoint rule), the kinematics oracle.

    The midpoint variant keeps the 10^4-step oracle comfortably below the
    1e-6 m tolerance; plain forward stepping would not get there.
    """
    x, y, hdeg = pose
    th = math.radians(hdeg)
    ds = arclen / steps
    for _ in range(steps):
        mid = th + 0.5 * curvature * ds
        x += ds * math.cos(mid)
        y += ds * math.sin(mid)
        th += curvature * ds
    return x, y, math.degrees(th)


class TestArcPose:
    def test_straight_line(self):
        assert arc_pose((0, 0, 0), 0.0, 3.0) == (3.0, 0.0, 0.0)

    def test_quarter_circle(self):
        x, y, h = arc_pose((0, 0, 0), 1.0 / 3.0, 3.0 * math.pi / 2.0)
        assert x == pytest.approx(3.0, abs=1e-12)
        assert y == pytest.approx(3.0, abs=1e-12)
        assert h == pytest.approx(90.0, abs=1e-12)

    def test_matches_euler_integration(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            pose = (rng.normal(), rng.normal(), rng.uniform(-180, 180))
            k = rng.uniform(-0.5, 0.5)
            s = rng.uniform(0.0, 9.0)
            exact = arc_pose(pose, k, s)
            approx = euler_integrate(pose, k, s)
            assert exact[0] == pytest.approx(approx[0], abs=1e-6)
            assert exact[1] == pytest.approx(approx[1], abs=1e-6)


class TestBuildTree:
    def test_default_cardinality(self):
        tree = build_tree(TreeSpec())
        assert len(tree) == 14 * 11 * 11 == 1694

    def test_broader_cardinality(self):
        assert len(build_tree(TreeSpec.broader())) == 18 * 15 * 15 == 4050

    def test_degenerate_tree(self):
        tree = build_tree(TreeSpec(turn_count=1, arc_count=1, depth=1))
        assert len(tree) == 1
        assert isinstance(tree.paths[0].maneuvers[1], Arc)

    def test_horizon_about_six_meters(self):
        tree = build_tree(TreeSpec())
        straight = max(tree.paths, key=lambda p: p.endpoint[0])
        assert straight.endpoint[0] == pytest.approx(6.0, abs=1e-9)

    def test_pose_continuity(self):
        tree = build_tree(TreeSpec(turn_count=4, arc_count=3), (1.0, 2.0, 30.0))
        for path in tree.paths[:12]:
            resampled = sample_path(path.maneuvers, tuple(path.poses[0]), 0.25)
            assert np.allclose(resampled, path.poses, atol=1e-9)
            assert np.allclose(path.poses[0], (1.0, 2.0, 30.0))

    def test_mirror_symmetry(self):
        spec = TreeSpec(turn_count=4, arc_count=3)
        tree = build_tree(spec)
        for path in tree.paths:
            mirrored = tuple(
                TurnInPlace(-m.angle_deg) if isinstance(m, TurnInPlace)
                else Arc(-m.curvature, m.length) for m in path.maneuvers)
            poses = sample_path(mirrored, (0.0, 0.0, 0.0), 0.25)
            assert np.allclose(poses[:, 0], path.poses[:, 0], atol=1e-9)
            assert np.allclose(poses[:, 1], -path.poses[:, 1], atol=1e-9)

    def test_count_matches_closed_form(self):
        for tc, ac, d in ((3, 5, 2), (5, 3, 3), (2, 7, 1)):
            spec = TreeSpec(turn_count=tc, arc_count=ac, depth=d)
            assert len(build_tree(spec)) == tc * ac ** d


class TestSamplePath:
    def test_straight_three_meters(self):
        poses = sample_path((Arc(0.0, 3.0),), (0, 0, 0), 0.25)
        assert len(poses) == 13
        assert np.allclose(poses[0], (0, 0, 0))
        assert np.allclose(poses[-1], (3, 0, 0))

    def test_turn_in_place_thirty(self):
        poses = sample_path((TurnInPlace(30.0),), (0, 0, 0), 0.25)
        assert np.allclose(poses[:, 2], [0.0, 15.0, 30.0])

    def test_arc_samples_on_circle(self):
        k = 0.2
        poses = sample_path((Arc(k, 5.0),), (0, 0, 0), 0.25)
        # circle center for heading 0 is at (0, 1/k)
        radius = np.hypot(poses[:, 0] - 0.0, poses[:, 1] - 1.0 / k)
        assert np.allclose(radius, 1.0 / k, atol=1e-9)

    def test_non_multiple_lengths_include_endpoint(self):
        poses = sample_path((Arc(0.0, 1.1),), (0, 0, 0), 0.25)
        assert len(poses) == 6  # 0, .25, .5, .75, 1.0, 1.1
        assert poses[-1][0] == pytest.approx(1.1)


class TestExtendPruned:
    def make_costs(self, tree, fn):
        return np.array([fn(p) for p in tree.paths])

    def test_default_counts(self):
        spec = TreeSpec()
        tree = build_tree(spec)
        # favor the straightest leaf of each sibling group
        costs = self.make_costs(
            tree, lambda p: abs(p.maneuvers[-1].curvature) + p.initial_turn_deg())
        deeper = extend_pruned(tree, costs, spec)
        groups = {p.group_key[:2] for p in tree.paths}
        assert len(groups) == 154
        assert len(deeper) == 154 * 11 == 1694
        # nine-meter horizon after the third arc level
        straight = max(deeper.paths, key=lambda p: p.endpoint[0])
        assert straight.endpoint[0] == pytest.approx(9.0, abs=1e-9)

    def test_tie_breaks_to_smallest_curvature(self):
        spec = TreeSpec(turn_count=2, arc_count=5)
        tree = build_tree(spec)
        deeper = extend_pruned(tree, np.zeros(len(tree)), spec)
        kept_last_arcs = {p.maneuvers[-2].curvature for p in deeper.paths}
        assert kept_last_arcs == {0.0}

    def test_all_infinite_group_dropped(self):
        spec = TreeSpec()
        tree = build_tree(spec)
        costs = np.ones(len(tree))
        dead = tree.paths[0].group_key[:2]
        for i, p in enumerate(tree.paths):
            if p.group_key[:2] == dead:
                costs[i] = np.inf
        deeper = extend_pruned(tree, costs, spec)
        assert len(deeper) == 153 * 11

    def test_every_group_infinite_raises(self):
        spec = TreeSpec(turn_count=2, arc_count=3)
        tree = build_tree(spec)
        with pytest.raises(EmptyGroupError):
            extend_pruned(tree, np.full(len(tree), np.inf), spec)
