import math
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rangebev.errors import ConfigError, ParseError
from rangebev.geometry import RotatedBox, canonicalize
from rangebev.pointcloud_io import (
    CropBounds,
    GroundTruthObject,
    PointCloud,
    crop_filter,
    default_calibration,
    dont_care_regions,
    format_labels,
    fov_filter,
    fov_surface_fraction,
    label_to_object,
    object_to_label,
    parse_labels,
    read_calibration,
    read_labels,
    read_point_cloud,
    write_calibration,
    write_point_cloud,
)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def calib_text():
    return (FIXTURES / "calib.txt").read_text()


@pytest.fixture
def calib(calib_text):
    return read_calibration(calib_text)


def raw_matrices(text):
    # independent parse of the calib file, used as the hand-transform oracle
    out = {}
    for line in text.splitlines():
        key, rest = line.split(":")
        out[key] = np.array(rest.split(), dtype=float)
    return out


class TestPointCloudFormat:
    def test_empty(self):
        assert len(read_point_cloud(b"")) == 0

    def test_single_record(self):
        cloud = read_point_cloud(struct.pack("<4f", 10.0, 0.0, -1.0, 0.5))
        assert list(cloud) == [(10.0, 0.0, -1.0, 0.5)]

    def test_misaligned(self):
        with pytest.raises(ParseError) as err:
            read_point_cloud(bytes(17))
        assert err.value.offset == 16

    def test_non_finite_dropped(self):
        data = struct.pack("<8f", 1, 2, 3, 0.1, float("nan"), 0, 0, 0)
        cloud = read_point_cloud(data)
        assert len(cloud) == 1 and cloud.dropped == 1

    def test_fixture_round_trip(self):
        data = (FIXTURES / "scan.bin").read_bytes()
        assert write_point_cloud(read_point_cloud(data)) == data

    @given(arrays(np.float32, st.tuples(st.integers(0, 50), st.just(4)),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_round_trip_property(self, pts):
        data = pts.astype("<f4").tobytes()
        assert write_point_cloud(read_point_cloud(data)) == data


class TestCrop:
    @pytest.mark.parametrize(
        "point, kept",
        [((10, 0, -1.0), True), ((75, 0, -1.0), False), ((10, 0, 1.27), False),
         ((0, -35, -1.73), True), ((70, 0, 0), False), ((10, 35, 0), False)],
    )
    def test_examples(self, point, kept):
        cloud = PointCloud.from_points([(*point, 0.3)])
        assert (len(crop_filter(cloud)) == 1) is kept

    def test_invalid_bounds(self):
        with pytest.raises(ConfigError):
            CropBounds(x_range=(5, 5))

    def test_idempotent_and_intersection(self):
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.uniform(-10, 80, 5000), rng.uniform(-40, 40, 5000),
                               rng.uniform(-3, 3, 5000), rng.uniform(0, 1, 5000)])
        cloud = PointCloud(pts)
        a = CropBounds()
        b = CropBounds((5, 50), (-50, 10), (-1, 5))
        once = crop_filter(cloud, a)
        np.testing.assert_array_equal(crop_filter(once, a).points, once.points)
        ab = crop_filter(crop_filter(cloud, a), b).points
        ba = crop_filter(crop_filter(cloud, b), a).points
        both = crop_filter(cloud, a.intersect(b)).points
        np.testing.assert_array_equal(ab, ba)
        np.testing.assert_array_equal(ab, both)


class TestCalibration:
    def test_round_trip_bytes(self, calib_text):
        assert write_calibration(read_calibration(calib_text)) == calib_text

    def test_missing_matrix(self, calib_text):
        text = "\n".join(l for l in calib_text.splitlines() if not l.startswith("R0_rect"))
        with pytest.raises(ParseError):
            read_calibration(text)

    def test_not_orthonormal(self, calib_text):
        text = calib_text.replace("R0_rect: 9.999923845804e-01", "R0_rect: 1.2")
        with pytest.raises(ConfigError):
            read_calibration(text)

    def test_inverse_transform(self, calib):
        pts = np.random.default_rng(1).uniform(-50, 50, (100, 3))
        np.testing.assert_allclose(calib.rect_to_sensor(calib.sensor_to_rect(pts)), pts, atol=1e-9)


class TestLabels:
    def test_empty(self, calib):
        assert read_labels("", calib) == []

    def test_class_filter_and_dont_care(self, calib):
        text = (FIXTURES / "label.txt").read_text()
        assert len(read_labels(text, calib)) == 3
        assert dont_care_regions(text) == [(503.89, 169.71, 590.61, 190.13)]

    def test_text_round_trip_bytes(self):
        text = (FIXTURES / "label.txt").read_text()
        assert format_labels(parse_labels(text)) == text

    def test_malformed_line_number(self, calib):
        with pytest.raises(ParseError) as err:
            read_labels("Car 0 0 1\n", calib)
        assert err.value.line == 1
        with pytest.raises(ParseError) as err:
            read_labels("\nCar a b c d e f g h i j k l m n\n", calib)
        assert err.value.line == 2

    def test_missing_calibration(self):
        with pytest.raises(ConfigError):
            read_labels("", None)

    def test_sensor_location_recovered(self, calib_text, calib):
        m = raw_matrices(calib_text)
        tr = m["Tr_velo_to_cam"].reshape(3, 4)
        r0 = m["R0_rect"].reshape(3, 3)
        rect = r0 @ (tr @ np.array([10.0, 2.0, -0.8, 1.0]))
        line = "Car 0.00 0 0.00 600.00 150.00 700.00 200.00 1.50 1.80 4.20 {:.12f} {:.12f} {:.12f} -1.20".format(*rect)
        (obj,) = read_labels(line, calib)
        assert obj.box.cx == pytest.approx(10.0, abs=1e-6)
        assert obj.box.cy == pytest.approx(2.0, abs=1e-6)
        assert obj.z_center == pytest.approx(-0.8 + 0.75, abs=1e-6)
        assert obj.bbox2d_height == pytest.approx(50.0)
        assert (obj.box.w, obj.box.h) == (4.2, 1.8)
        assert obj.box.theta == pytest.approx(math.degrees(1.2) - 90.0)

    def test_conversion_inverse(self, calib):
        for lab in parse_labels((FIXTURES / "label.txt").read_text()):
            if lab.type != "Car":
                continue
            back = object_to_label(label_to_object(lab, calib), calib, bbox=lab.bbox)
            np.testing.assert_allclose(back.location, lab.location, atol=1e-6)
            assert math.isclose(math.cos(back.rotation_y * 2), math.cos(lab.rotation_y * 2), abs_tol=1e-9)


class TestFov:
    def test_fully_inside(self):
        box = RotatedBox(20, 0, 4.5, 2.0, 0)
        assert fov_surface_fraction(box, default_calibration()) == 1.0
        assert fov_surface_fraction(box, None) == 1.0

    def test_behind(self):
        box = RotatedBox(-10, 0, 4.5, 2.0, 0)
        assert fov_surface_fraction(box, default_calibration()) == 0.0
        assert fov_surface_fraction(box, None) == 0.0

    @pytest.mark.parametrize("dims", [(4.0, 2.0), (3.0, 3.0), (4.5, 1.6)])
    def test_bisected_by_wedge(self, dims):
        # box centered on the +45 degree wedge edge and aligned with it: half the area on each side
        box = RotatedBox(20, 20, *dims, 45.0)
        cell = 0.1 * 0.1 / (dims[0] * dims[1])
        assert fov_surface_fraction(box, None, 0.1) == pytest.approx(0.5, abs=cell)

    def test_filter_threshold(self):
        inside = GroundTruthObject(RotatedBox(20, 0, 4, 2, 0))
        edge = GroundTruthObject(RotatedBox(20, 20, 4, 2, 45))
        outside = GroundTruthObject(RotatedBox(20, 30, 4, 2, 0))
        assert fov_filter([inside, edge, outside], None) == [inside, edge]

    def test_canonical_label_box(self, calib):
        lab = parse_labels((FIXTURES / "label.txt").read_text())[0]
        box = label_to_object(lab, calib).box
        assert canonicalize(box) == box
