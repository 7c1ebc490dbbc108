import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fretsync.geometry import (
    CylinderSegment,
    GeometryError,
    GuitarSpec,
    build_geometry,
    point_to_segment_distance,
    segment_to_segment_distance,
)


def brute_point_segment(p, seg, samples=10_000):
    """Dense-sampling oracle for point-to-segment distance."""
    ts = np.linspace(0.0, 1.0, samples)
    pts = seg.endpoint_a[None, :] + ts[:, None] * (seg.endpoint_b - seg.endpoint_a)[None, :]
    d = np.linalg.norm(pts - p, axis=1)
    i = int(np.argmin(d))
    # one refinement pass around the coarse argmin
    lo, hi = max(0.0, ts[i] - 2.0 / samples), min(1.0, ts[i] + 2.0 / samples)
    ts2 = np.linspace(lo, hi, 1000)
    pts2 = seg.endpoint_a[None, :] + ts2[:, None] * (seg.endpoint_b - seg.endpoint_a)[None, :]
    return float(np.min(np.linalg.norm(pts2 - p, axis=1)))


def brute_segment_segment(a, b, grid=100, levels=3):
    """Grid-sampling oracle with local refinement."""
    s_lo, s_hi, t_lo, t_hi = 0.0, 1.0, 0.0, 1.0
    best = np.inf
    for _ in range(levels):
        ss = np.linspace(s_lo, s_hi, grid)
        tt = np.linspace(t_lo, t_hi, grid)
        pa = a.endpoint_a[None, :] + ss[:, None] * (a.endpoint_b - a.endpoint_a)[None, :]
        pb = b.endpoint_a[None, :] + tt[:, None] * (b.endpoint_b - b.endpoint_a)[None, :]
        d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        best = min(best, float(d[i, j]))
        ds = (s_hi - s_lo) / (grid - 1)
        dt = (t_hi - t_lo) / (grid - 1)
        s_lo, s_hi = max(0.0, ss[i] - ds), min(1.0, ss[i] + ds)
        t_lo, t_hi = max(0.0, tt[j] - dt), min(1.0, tt[j] + dt)
    return best


class TestBuildGeometry:
    def test_first_fret_width(self):
        geo = build_geometry(GuitarSpec())
        assert geo.fret_wire_distance[1] == pytest.approx(0.6223 * (1 - 2 ** (-1 / 12)))
        assert geo.fret_width(1) == pytest.approx(0.0349, abs=5e-4)

    def test_last_fret_width(self):
        geo = build_geometry(GuitarSpec())
        assert geo.fret_width(24) == pytest.approx(0.0092, abs=5e-4)

    def test_fretboard_length(self):
        geo = build_geometry(GuitarSpec())
        assert geo.fret_wire_distance[24] == pytest.approx(0.4667, abs=5e-4)

    def test_widths_strictly_decreasing(self):
        geo = build_geometry(GuitarSpec(scale_length=0.8, num_frets=22))
        widths = [geo.fret_width(k) for k in range(1, 23)]
        assert all(a > b for a, b in zip(widths, widths[1:]))

    def test_press_points_between_wires(self):
        geo = build_geometry(GuitarSpec())
        for i in range(1, 7):
            for k in range(1, 25):
                x = geo.press_point(i, k)[0]
                assert geo.fret_wire_distance[k - 1] < x < geo.fret_wire_distance[k]

    def test_invalid_spec(self):
        with pytest.raises(GeometryError, match="scale_length"):
            GuitarSpec(scale_length=-1.0)
        with pytest.raises(GeometryError, match="num_frets"):
            GuitarSpec(num_frets=0)
        with pytest.raises(GeometryError, match="spacing"):
            GuitarSpec(string_spacing_nut=0.0)

    def test_spec_json_round_trip(self):
        spec = GuitarSpec(scale_length=0.65, mirrored=True)
        assert GuitarSpec.from_json(spec.to_json()) == spec

    def test_mirrored_flips_y(self):
        left = build_geometry(GuitarSpec())
        right = build_geometry(GuitarSpec(mirrored=True))
        assert np.allclose(left.string_nut[:, 1], -right.string_nut[:, 1])

    def test_string_one_is_top(self):
        geo = build_geometry(GuitarSpec())
        assert geo.string_nut[0, 1] > geo.string_nut[5, 1]


class TestPointSegment:
    def test_point_on_axis(self):
        seg = CylinderSegment([0, 0, 0], [1, 0, 0], 0.01)
        d, closest = point_to_segment_distance([0.3, 0, 0], seg)
        assert d == 0.0
        assert np.allclose(closest, [0.3, 0, 0])

    def test_beyond_endpoint(self):
        seg = CylinderSegment([0, 0, 0], [1, 0, 0], 0.01)
        d, closest = point_to_segment_distance([-0.5, 0, 0], seg)
        assert d == pytest.approx(0.5)
        assert np.allclose(closest, [0, 0, 0])

    def test_random_vs_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b = rng.normal(size=3), rng.normal(size=3)
            if np.allclose(a, b):
                continue
            seg = CylinderSegment(a, b, 0.01)
            p = rng.normal(size=3)
            d, closest = point_to_segment_distance(p, seg)
            assert d == pytest.approx(brute_point_segment(p, seg), abs=1e-6)
            # closest point lies on the segment
            t = np.dot(closest - a, b - a) / np.dot(b - a, b - a)
            assert -1e-9 <= t <= 1 + 1e-9


class TestSegmentSegment:
    def test_intersecting(self):
        a = CylinderSegment([-1, 0, 0], [1, 0, 0], 0.01)
        b = CylinderSegment([0, -1, 0], [0, 1, 0], 0.01)
        assert segment_to_segment_distance(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_parallel_offset(self):
        a = CylinderSegment([0, 0, 0], [1, 0, 0], 0.01)
        b = CylinderSegment([0, 0.01, 0], [1, 0.01, 0], 0.01)
        assert segment_to_segment_distance(a, b) == pytest.approx(0.01)

    def test_random_vs_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = CylinderSegment(rng.normal(size=3), rng.normal(size=3), 0.01)
            b = CylinderSegment(rng.normal(size=3), rng.normal(size=3), 0.01)
            d = segment_to_segment_distance(a, b)
            assert d == pytest.approx(brute_segment_segment(a, b), abs=1e-5)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_symmetry_and_nonnegativity(self, seed):
        rng = np.random.default_rng(seed)
        a = CylinderSegment(rng.normal(size=3), rng.normal(size=3), 0.01)
        b = CylinderSegment(rng.normal(size=3), rng.normal(size=3), 0.01)
        d1 = segment_to_segment_distance(a, b)
        d2 = segment_to_segment_distance(b, a)
        assert d1 >= 0.0
        assert d1 == pytest.approx(d2, abs=1e-12)
