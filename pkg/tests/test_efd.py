import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomclass.efd import (
    SEARCH_ORDERS, EfdError, efd, feature_layout, feature_length, feature_matrix, features, normalize_efd,
    reconstruct, reconstruct_array, sign_variants,
)
from geomclass.geometry import Geometry, Ring

from oracles import (
    distance_to_polyline, efd_loop, ellipse_fit_residual, hausdorff, random_star_polygon, sample_boundary,
)

SQUARE = np.array([(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)], dtype=float)


def transform(coords, angle_deg=37.0, scale=3.0, shift=(12.5, -7.0), roll=2):
    a = np.radians(angle_deg)
    R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    pts = coords[:-1] @ R.T * scale + np.array(shift)
    pts = np.roll(pts, -roll, axis=0)
    return np.vstack([pts, pts[:1]])


def best_variant_error(h_ref, h_other):
    return min(np.max(np.abs(v - h_ref)) for v in sign_variants(h_other))


def rms_to_boundary(coef, coords, samples=400):
    pts = reconstruct_array(coef, samples)
    return float(np.sqrt(np.mean(distance_to_polyline(pts, coords) ** 2)))


class TestEfd:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            c = random_star_polygon(rng)
            got = efd(c, 6)
            ref, locus = efd_loop(c, 6)
            assert np.allclose(got.harmonics, ref, atol=1e-12, rtol=1e-10)
            assert got.locus == pytest.approx(locus, abs=1e-12)

    def test_square_first_harmonic_non_degenerate(self):
        a, b, c, d = efd(SQUARE, 1).harmonics[0]
        assert a * a + b * b > 0 and c * c + d * d > 0

    def test_rectangle_locus_is_centre(self):
        rect = np.array([(0, 0), (2, 0), (2, 1), (0, 1), (0, 0)], dtype=float)
        assert efd(rect, 3).locus == pytest.approx((1.0, 0.5), abs=1e-12)

    def test_translation(self):
        c = random_star_polygon(np.random.default_rng(1))
        a, b = efd(c, 8), efd(c + np.array([5.0, -3.0]), 8)
        assert np.allclose(a.harmonics, b.harmonics, atol=1e-10, rtol=0)
        assert b.locus[0] - a.locus[0] == pytest.approx(5.0, abs=1e-10)
        assert b.locus[1] - a.locus[1] == pytest.approx(-3.0, abs=1e-10)

    def test_repeated_vertices_dropped(self):
        dup = np.array([(0, 0), (1, 0), (1, 0), (1, 1), (0, 1), (0, 0)], dtype=float)
        assert np.allclose(efd(dup, 4).harmonics, efd(SQUARE, 4).harmonics)

    def test_degenerate_ring(self):
        with pytest.raises(EfdError):
            efd(np.array([(0, 0), (1, 1), (1, 1), (0, 0)], dtype=float), 2)

    def test_order_validation(self):
        with pytest.raises(ValueError):
            efd(SQUARE, 0)


class TestNormalize:
    def test_first_harmonic_form(self):
        n = normalize_efd(efd(random_star_polygon(np.random.default_rng(2)), 5))
        a, b, c, d = n.harmonics[0]
        assert (a, b, c) == (1.0, 0.0, 0.0)
        assert abs(d) <= 1.0
        assert n.locus == (0.0, 0.0)

    def test_similarity_invariance(self):
        c = random_star_polygon(np.random.default_rng(3))
        h1 = normalize_efd(efd(c, 8)).harmonics
        h2 = normalize_efd(efd(transform(c), 8)).harmonics
        assert best_variant_error(h1, h2) < 1e-6

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 360), st.floats(0.1, 10), st.integers(0, 4))
    def test_invariance_property(self, seed, angle, scale, roll):
        c = random_star_polygon(np.random.default_rng(seed))
        h1 = normalize_efd(efd(c, 6)).harmonics
        h2 = normalize_efd(efd(transform(c, angle, scale, (3.0, 4.0), roll), 6)).harmonics
        assert best_variant_error(h1, h2) < 1e-6 * max(1.0, np.abs(h1).max())

    def test_circle_axis_ratio(self):
        a = 2 * np.pi * np.arange(64) / 64
        circle = np.vstack([np.c_[np.cos(a), np.sin(a)], [[1.0, 0.0]]])
        d1 = normalize_efd(efd(circle, 3)).harmonics[0, 3]
        assert abs(abs(d1) - 1.0) < 1e-2

    def test_sign_variants(self):
        h = np.arange(12, dtype=float).reshape(3, 4)
        same, flipped = sign_variants(h)
        assert np.array_equal(same, h)
        assert np.array_equal(flipped[1], -h[1])
        assert np.array_equal(flipped[[0, 2]], h[[0, 2]])


class TestReconstruct:
    def test_order_one_is_ellipse(self):
        pts = reconstruct_array(efd(random_star_polygon(np.random.default_rng(4)), 1), 50)
        assert ellipse_fit_residual(pts) < 1e-9

    def test_points_type(self):
        pts = reconstruct(efd(SQUARE, 2), 10)
        assert len(pts) == 10 and hasattr(pts[0], "x")

    def test_square_order10_beats_order2(self):
        assert rms_to_boundary(efd(SQUARE, 10), SQUARE) < rms_to_boundary(efd(SQUARE, 2), SQUARE)

    @staticmethod
    def hausdorff_by_order(c, orders=(1, 2, 3, 4), samples=600):
        dense = sample_boundary(c, samples)
        dense = np.vstack([dense, dense[:1]])
        out = []
        for o in orders:
            r = reconstruct_array(efd(c, o), samples)
            out.append(hausdorff(np.vstack([r, r[:1]]), dense))
        return out

    def test_hausdorff_shrinks_on_simple_shapes(self):
        rect = np.array([(0, 0), (3, 0), (3, 1), (0, 1), (0, 0)], dtype=float)
        hd = self.hausdorff_by_order(rect)
        assert all(b <= a for a, b in zip(hd, hd[1:])), hd

    def test_hausdorff_not_monotone_in_general(self):
        # truncated Fourier series converge in L2, not in sup norm: adding a
        # harmonic can move part of the curve away from the polygon
        rng = np.random.default_rng(5)
        found = False
        for _ in range(10):
            hd = self.hausdorff_by_order(random_star_polygon(rng))
            found |= any(b > a + 1e-3 for a, b in zip(hd, hd[1:]))
        assert found

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_l2_error_monotone_property(self, seed):
        c = random_star_polygon(np.random.default_rng(seed))
        src = sample_boundary(c, 256)
        errs = [np.sqrt(np.mean(np.sum((reconstruct_array(efd(c, o), 256) - src) ** 2, axis=1)))
                for o in (1, 2, 3, 4, 6, 8)]
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))

    def test_order30_rms(self):
        c = random_star_polygon(np.random.default_rng(6), 20, 20)
        perimeter = np.hypot(*np.diff(c, axis=0).T).sum()
        assert rms_to_boundary(efd(c, 30), c) < 0.01 * perimeter

    def test_l2_error_non_increasing(self):
        c = random_star_polygon(np.random.default_rng(7), 12, 12)
        src = sample_boundary(c, 512)
        errs = [np.sqrt(np.mean(np.sum((reconstruct_array(efd(c, o), 512) - src) ** 2, axis=1)))
                for o in range(1, 16)]
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))

    def test_samples_validation(self):
        with pytest.raises(ValueError):
            reconstruct_array(efd(SQUARE, 1), 2)


class TestFeatures:
    def test_order_zero(self):
        fv = features(Geometry.from_coords([SQUARE]), 0)
        assert tuple(fv.values) == (1.0, 5.0, 4.0)
        assert fv.layout == ("area", "vertex_count", "boundary_length")

    def test_order_four_length(self):
        fv = features(Geometry.from_coords([SQUARE]), 4)
        assert len(fv.values) == 37 == feature_length(4) == len(feature_layout(4))

    @pytest.mark.parametrize("order", SEARCH_ORDERS)
    def test_layout_lengths(self, order):
        assert len(feature_layout(order)) == feature_length(order)

    def test_translation_split(self):
        c = random_star_polygon(np.random.default_rng(8))
        a = features(Geometry.from_coords([c]), 3)
        b = features(Geometry.from_coords([c + 10.0]), 3)
        nefd = [i for i, name in enumerate(a.layout) if name.startswith("nefd_")]
        assert np.allclose(a.values[nefd], b.values[nefd], atol=1e-6)
        assert a.values[0] != b.values[0] and a.values[1] != b.values[1]

    def test_multipolygon_uses_largest_ring(self):
        small = SQUARE * 0.5
        big = SQUARE * 3 + 10
        g = Geometry((Ring(small), Ring(big)))
        f = features(g, 2)
        assert f.values[0] == pytest.approx(efd(big, 2).locus[0])

    def test_matrix(self):
        geoms = [Geometry.from_coords([random_star_polygon(np.random.default_rng(i))]) for i in range(4)]
        X = feature_matrix(geoms, 2)
        assert X.shape == (4, feature_length(2))
        assert feature_matrix([], 2).shape == (0, feature_length(2))
