import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from rangebev.bev import (
    BevGrid,
    BevImage,
    Encoding,
    dump_raster,
    fov_mask,
    load_raster,
    point_to_pixel,
    rasterize,
    render_png,
)
from rangebev.errors import ConfigError, ParseError
from rangebev.pointcloud_io import Point, PointCloud, default_calibration

SMALL = BevGrid(x_range=(0.0, 2.0), y_range=(-1.0, 1.0), resolution=0.1)


def random_cloud(rng, n, grid=BevGrid()):
    return PointCloud(np.column_stack([
        rng.uniform(grid.x_range[0], grid.x_range[1], n),
        rng.uniform(grid.y_range[0], grid.y_range[1], n),
        rng.uniform(-1.73, 1.27, n),
        rng.uniform(0, 1, n),
    ]))


class TestPixelMapping:
    def test_far_left_corner(self):
        assert point_to_pixel(Point(69.95, 34.95, 0, 0)) == (0, 0)

    def test_near_center(self):
        assert point_to_pixel(Point(0.05, 0.05, 0, 0)) == (699, 349)

    @pytest.mark.parametrize("x, y", [(70.0, 0.0), (-0.01, 0.0), (10.0, 35.0), (10.0, -35.01)])
    def test_off_grid(self, x, y):
        assert point_to_pixel(Point(x, y, 0, 0)) is None

    def test_lower_bounds_inclusive(self):
        assert point_to_pixel(Point(0.0, -35.0, 0, 0)) == (699, 699)
        assert point_to_pixel(Point(60.0, 0.0, 0, 0)) == (99, 349)

    def test_grid_shape(self):
        assert BevGrid().shape == (700, 700)
        with pytest.raises(ConfigError):
            BevGrid(x_range=(0, 1.05), resolution=0.1)

    @given(st.integers(0, 699), st.integers(0, 699))
    def test_cell_center_maps_back(self, r, c):
        x, y = BevGrid().cell_centers()
        assert point_to_pixel(Point(x[r, c], y[r, c], 0, 0)) == (r, c)


class TestRasterize:
    @pytest.mark.parametrize("enc", list(Encoding))
    def test_empty(self, enc):
        img = rasterize(PointCloud(), enc)
        assert img.values.shape == (700, 700, enc.channels)
        assert not img.values.any()

    def test_max_height_single_point(self):
        img = rasterize(PointCloud.from_points([(10.0, 0.0, -1.0, 0.5)]), Encoding.MAX_HEIGHT_3)
        assert img.values[599, 349, 0] == pytest.approx(73.0, rel=1e-6)
        assert img.values[599, 349, 1] == 0 and img.values[599, 349, 2] == 0
        assert np.count_nonzero(img.values) == 1

    def test_height_intensity_density_single_point(self):
        img = rasterize(PointCloud.from_points([(10.0, 0.0, -1.0, 0.5)]), "height_intensity_density")
        px = img.values[599, 349]
        assert px[0] == pytest.approx(100 * 0.73 / 3.0, rel=1e-6)
        assert px[1] == pytest.approx(50.0)
        assert px[2] == pytest.approx(100 * math.log(2) / math.log(64), rel=1e-6)

    def test_binary_slices(self):
        pts = [(10.0, 0.0, -1.5, 0.1), (10.0, 0.0, 1.0, 0.1)]
        img = rasterize(PointCloud.from_points(pts), Encoding.BINARY)
        assert list(img.values[599, 349]) == [100.0, 0.0, 100.0]

    def test_slice_boundaries(self):
        pts = [(10.0, 0.0, -0.73, 0.0), (20.0, 0.0, 0.23, 0.0), (30.0, 0.0, 1.26, 0.0)]
        img = rasterize(PointCloud.from_points(pts), Encoding.MAX_HEIGHT_3)
        assert img.values[599, 349, 1] == 0.0  # exactly on the floor of slice 1
        assert img.values[499, 349, 2] == 0.0
        assert img.values[399, 349, 2] == pytest.approx(100 * 1.03 / 1.04, rel=1e-6)

    def test_multi_height_nine_slices(self):
        z = -1.73 + (np.arange(9) + 0.5) / 3.0
        pts = [(10.0, 0.0, zz, 0.0) for zz in z]
        img = rasterize(PointCloud.from_points(pts), Encoding.MULTI_HEIGHT_9)
        np.testing.assert_allclose(img.values[599, 349], 50.0, rtol=1e-5)

    def test_highest_point_intensity_tie(self):
        pts = [(10.0, 0.0, 0.5, 0.2), (10.0, 0.0, 0.5, 0.9), (10.0, 0.0, 0.1, 1.0)]
        img = rasterize(PointCloud.from_points(pts), Encoding.HEIGHT_INTENSITY_DENSITY)
        assert img.values[599, 349, 1] == pytest.approx(90.0)

    def test_density_saturates(self):
        pts = [(10.0, 0.0, 0.0, 0.0)] * 200
        img = rasterize(PointCloud.from_points(pts), Encoding.HEIGHT_INTENSITY_DENSITY)
        assert img.values[599, 349, 2] == 100.0

    def test_unknown_encoding(self):
        with pytest.raises(ConfigError):
            rasterize(PointCloud(), "lasernet")

    def test_fov_zeroes_outside(self):
        mask = fov_mask(BevGrid(), None)
        pts = [(10.0, 0.0, 0.0, 0.3), (10.0, 20.0, 0.0, 0.3)]
        img = rasterize(PointCloud.from_points(pts), Encoding.BINARY, fov=mask)
        assert img.values[599, 349].any()
        assert not img.values[~mask].any()
        assert np.count_nonzero(img.values.any(axis=2)) == 1

    def test_calibrated_fov_mask(self):
        mask = fov_mask(BevGrid(), default_calibration())
        assert mask[600, 349] and mask[0, 0] and not mask[690, 0] and not mask[400, 0]


class TestProperties:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 400))
    def test_value_ranges_and_occupancy(self, seed, n):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, n, SMALL)
        imgs = {e: rasterize(cloud, e, SMALL) for e in Encoding}
        for img in imgs.values():
            assert img.values.min() >= 0 and img.values.max() <= 100
        binary = imgs[Encoding.BINARY].values
        assert set(np.unique(binary)) <= {0.0, 100.0}
        occupied = np.zeros(SMALL.shape, dtype=bool)
        r, c, ok = SMALL.pixels(cloud.xyz[:, :2])
        occupied[r[ok], c[ok]] = True
        for enc in Encoding:
            assert np.array_equal(imgs[enc].values.any(axis=2), occupied)
        assert np.array_equal(binary > 0, imgs[Encoding.MAX_HEIGHT_3].values > 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 400))
    def test_permutation_invariance(self, seed, n):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, n, SMALL)
        # duplicate some heights so tie-breaking is exercised
        cloud.points[: n // 3, 2] = 0.5
        shuffled = PointCloud(cloud.points[rng.permutation(n)])
        for enc in Encoding:
            a = rasterize(cloud, enc, SMALL).values
            b = rasterize(shuffled, enc, SMALL).values
            assert a.tobytes() == b.tobytes()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 200))
    def test_monotone_under_added_point(self, seed, n):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, n + 1, SMALL)
        fewer = PointCloud(cloud.points[:n])
        for enc in Encoding:
            a = rasterize(fewer, enc, SMALL).values
            b = rasterize(cloud, enc, SMALL).values
            assert np.all(a.any(axis=2) <= b.any(axis=2))
            if enc is Encoding.HEIGHT_INTENSITY_DENSITY:
                assert np.all(b[..., 2] >= a[..., 2])
            else:
                assert np.all(b >= a)


class TestOutputs:
    def test_png_all_black(self, tmp_path):
        path = tmp_path / "a.png"
        render_png(rasterize(PointCloud(), Encoding.MAX_HEIGHT_3), path)
        im = np.asarray(Image.open(path))
        assert im.shape == (700, 700, 3) and im.dtype == np.uint8 and not im.any()

    def test_png_binary_pixel(self, tmp_path):
        path = tmp_path / "b.png"
        render_png(rasterize(PointCloud.from_points([(10.0, 0.0, -1.5, 0.1)]), Encoding.BINARY), path)
        im = np.asarray(Image.open(path))
        assert tuple(im[599, 349]) == (255, 0, 0)
        assert np.count_nonzero(im) == 1

    def test_png_nine_channel_collapse(self, tmp_path):
        values = np.zeros((700, 700, 9), dtype=np.float32)
        values[5, 5, 8] = 40.0
        path = tmp_path / "c.png"
        render_png(BevImage(BevGrid(), Encoding.MULTI_HEIGHT_9, values), path)
        im = np.asarray(Image.open(path))
        assert tuple(im[5, 5]) == (102, 102, 102)

    def test_raw_dump_round_trip(self):
        rng = np.random.default_rng(2)
        img = rasterize(random_cloud(rng, 1000), Encoding.MULTI_HEIGHT_9)
        data = dump_raster(img)
        assert data[:12] == np.array([700, 700, 9], dtype="<u4").tobytes()
        assert np.array_equal(load_raster(data), img.values)
        with pytest.raises(ParseError):
            load_raster(data[:-1])
