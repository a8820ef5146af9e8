import numpy as np
import pytest

from rovernav.heightmap import (HeightMap, NoKnownCellsError, integrate_points,
                                recenter, window_minmax)


def flat_map(n=50, cell=0.1, height=0.0):
    return HeightMap((0.0, 0.0), cell, n, n,
                     np.full((n, n), height), np.ones((n, n), bool))


class TestIntegratePoints:
    def test_mean_of_two_points_in_one_cell(self):
        hm = HeightMap((0, 0), 0.1, 10, 10)
        out = integrate_points(hm, [(0.01, 0.01, 1.0), (0.02, 0.03, 3.0)])
        assert out.known[0, 0]
        assert out.heights[0, 0] == 2.0

    def test_empty_points_is_identity(self):
        hm = flat_map(10)
        out = integrate_points(hm, np.empty((0, 3)))
        assert np.array_equal(out.heights, hm.heights)
        assert np.array_equal(out.known, hm.known)

    def test_matches_group_by_cell_oracle(self):
        rng = np.random.default_rng(42)
        hm = HeightMap((1.0, -2.0), 0.25, 8, 8)
        # 10 points landing in exactly 3 cells
        cells = [(2, 3), (5, 1), (7, 7)]
        pts = []
        for k in range(10):
            ix, iy = cells[k % 3]
            x = 1.0 + (ix + rng.random()) * 0.25
            y = -2.0 + (iy + rng.random()) * 0.25
            pts.append((x, y, rng.normal()))
        pts = np.array(pts)
        out = integrate_points(hm, pts)
        # brute-force group-by oracle
        groups = {}
        for x, y, z in pts:
            ix = int(np.floor((x - 1.0) / 0.25))
            iy = int(np.floor((y + 2.0) / 0.25))
            groups.setdefault((ix, iy), []).append(z)
        assert set(groups) == set(cells)
        for (ix, iy), zs in groups.items():
            assert out.heights[iy, ix] == pytest.approx(np.mean(zs), abs=1e-12)
        assert out.known.sum() == 3

    def test_permutation_invariant(self):
        rng = np.random.default_rng(7)
        pts = np.column_stack([rng.random(40), rng.random(40), rng.normal(size=40)])
        hm = HeightMap((0, 0), 0.2, 6, 6)
        a = integrate_points(hm, pts)
        b = integrate_points(hm, pts[rng.permutation(40)])
        assert np.allclose(a.heights[a.known], b.heights[b.known], atol=1e-12)
        assert np.array_equal(a.known, b.known)

    def test_points_outside_map_dropped(self):
        hm = HeightMap((0, 0), 0.1, 5, 5)
        out = integrate_points(hm, [(99.0, 99.0, 1.0), (-1.0, 0.0, 2.0)])
        assert not out.known.any()

    def test_reimaging_replaces_not_blends(self):
        hm = HeightMap((0, 0), 0.1, 5, 5)
        a = integrate_points(hm, [(0.05, 0.05, 10.0)])
        b = integrate_points(a, [(0.05, 0.05, 2.0), (0.01, 0.01, 4.0)])
        assert b.heights[0, 0] == 3.0


class TestWindowMinmax:
    def test_flat_map_any_rect(self):
        hm = flat_map(30)
        mn, mx, kf = window_minmax(hm, (0.3, 0.4, 1.8, 2.2))
        assert (mn, mx, kf) == (0.0, 0.0, 1.0)

    def test_single_raised_cell(self):
        hm = flat_map(30)
        hm.heights[10, 12] = 0.4
        mn, mx, kf = window_minmax(hm, (1.0, 0.8, 1.5, 1.3))
        assert mx == 0.4
        assert mn == 0.0

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(3)
        hm = HeightMap((0.5, 0.5), 0.1, 40, 40, rng.normal(size=(40, 40)),
                       rng.random((40, 40)) > 0.3)
        hm.heights[~hm.known] = np.nan
        for _ in range(50):
            x0, y0 = rng.random(2) * 3 + 0.6
            rect = (x0, y0, x0 + rng.random() * 1.5, y0 + rng.random() * 1.5)
            ix0 = int(np.floor((rect[0] - 0.5) / 0.1))
            ix1 = int(np.floor((rect[2] - 0.5) / 0.1))
            iy0 = int(np.floor((rect[1] - 0.5) / 0.1))
            iy1 = int(np.floor((rect[3] - 0.5) / 0.1))
            vals, n_cells = [], 0
            for iy in range(iy0, iy1 + 1):
                for ix in range(ix0, ix1 + 1):
                    n_cells += 1
                    if 0 <= ix < 40 and 0 <= iy < 40 and hm.known[iy, ix]:
                        vals.append(hm.heights[iy, ix])
            if not vals:
                with pytest.raises(NoKnownCellsError):
                    window_minmax(hm, rect)
                continue
            mn, mx, kf = window_minmax(hm, rect)
            assert mn == min(vals)
            assert mx == max(vals)
            assert kf == pytest.approx(len(vals) / n_cells)

    def test_whole_map_equals_global_minmax(self):
        rng = np.random.default_rng(5)
        hm = HeightMap((0, 0), 0.1, 20, 20, rng.normal(size=(20, 20)),
                       np.ones((20, 20), bool))
        mn, mx, kf = window_minmax(hm, (0.0, 0.0, 1.99, 1.99))
        assert mn == hm.heights.min()
        assert mx == hm.heights.max()
        assert kf == 1.0

    def test_all_unknown_raises(self):
        hm = HeightMap((0, 0), 0.1, 10, 10)
        with pytest.raises(NoKnownCellsError):
            window_minmax(hm, (0.2, 0.2, 0.5, 0.5))


class TestRecenter:
    def test_zero_offset_identity(self):
        rng = np.random.default_rng(1)
        hm = HeightMap((-1, -1), 0.1, 20, 20, rng.normal(size=(20, 20)),
                       np.ones((20, 20), bool))
        out = recenter(hm, hm.center)
        assert np.array_equal(out.heights, hm.heights)
        assert np.array_equal(out.origin, hm.origin)

    def test_one_cell_shift(self):
        rng = np.random.default_rng(2)
        hm = HeightMap((0, 0), 0.1, 10, 10, rng.normal(size=(10, 10)),
                       np.ones((10, 10), bool))
        out = recenter(hm, hm.center + np.array([0.1, 0.0]))
        assert np.allclose(out.origin, hm.origin + [0.1, 0.0])
        # retained cells shifted by one index; a column of unknowns enters at +x
        assert np.array_equal(out.heights[:, :-1], hm.heights[:, 1:])
        assert not out.known[:, -1].any()
        assert out.known[:, :-1].all()

    def test_world_heights_preserved(self):
        rng = np.random.default_rng(9)
        hm = HeightMap((2.0, 3.0), 0.1, 30, 30, rng.normal(size=(30, 30)),
                       rng.random((30, 30)) > 0.2)
        hm.heights[~hm.known] = np.nan
        out = recenter(hm, hm.center + np.array([0.73, -0.41]))
        for _ in range(200):
            ix, iy = rng.integers(0, 30, 2)
            if not out.known[iy, ix]:
                continue
            x, y = out.cell_center(ix, iy)
            jx, jy = hm.world_to_cell(x, y)
            assert hm.known[jy, jx]
            assert out.heights[iy, ix] == hm.heights[jy, jx]


class TestInvariants:
    def test_minimum_grid_size(self):
        with pytest.raises(ValueError):
            HeightMap((0, 0), 0.1, 2, 5)

    def test_window_stats_agrees_with_window_minmax(self):
        rng = np.random.default_rng(11)
        hm = HeightMap((0, 0), 0.1, 25, 33, rng.normal(size=(33, 25)),
                       rng.random((33, 25)) > 0.25)
        hm.heights[~hm.known] = np.nan
        stats = hm.window_stats()
        for _ in range(100):
            ix0, iy0 = rng.integers(-3, 22), rng.integers(-3, 30)
            ix1 = ix0 + rng.integers(0, 6)
            iy1 = iy0 + rng.integers(0, 6)
            mn, mx, nk = stats.minmax_known(np.array(ix0), np.array(ix1),
                                            np.array(iy0), np.array(iy1))
            rect = (hm.origin[0] + (ix0 + 0.5) * 0.1,
                    hm.origin[1] + (iy0 + 0.5) * 0.1,
                    hm.origin[0] + (ix1 + 0.5) * 0.1,
                    hm.origin[1] + (iy1 + 0.5) * 0.1)
            try:
                wmn, wmx, kf = window_minmax(hm, rect)
                assert mn == wmn and mx == wmx
                assert nk / ((ix1 - ix0 + 1) * (iy1 - iy0 + 1)) == pytest.approx(kf)
            except NoKnownCellsError:
                assert nk == 0
