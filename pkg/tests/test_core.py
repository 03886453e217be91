import numpy as np
import pytest

import sodeflow as sf
from sodeflow.core import EXCLUDES_ZERO, SampleSpec
from sodeflow.errors import DomainError, NotVerticalError


class TestCanonicalMaps:
    def test_involution_swaps_slots(self):
        z = sf.DoubleTangent([1], [2], [3], [4])
        j = sf.canonical_involution(z)
        assert (j.x, j.y, j.X, j.Y) == ((1,), (3,), (2,), (4,))

    def test_fixed_points(self):
        z = sf.DoubleTangent([0, 0], [1, 2], [1, 2], [5, 6])
        assert z.in_fix_involution()
        j = sf.canonical_involution(z)
        assert np.allclose(j.y, z.y) and np.allclose(j.Y, z.Y)

    def test_involution_squares_to_identity_and_swaps_projections(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            parts = rng.normal(size=(4, 2))
            z = sf.DoubleTangent(*parts)
            jz = sf.canonical_involution(z)
            jjz = sf.canonical_involution(jz)
            assert np.array_equal(jjz.y, z.y) and np.array_equal(jjz.Y, z.Y)
            # the two projections exchange: pi_T(Jz) carries the X slot of z
            assert np.array_equal(jz.project_T().y, z.X)
            assert np.array_equal(jz.project_star().y, z.y)

    def test_connector_on_vertical(self):
        z = sf.DoubleTangent([0, 0], [5, 5], [0, 0], [1, 2])
        out = sf.vertical_connector_K(z)
        assert np.array_equal(out.x, [0, 0]) and np.array_equal(out.y, [1, 2])

    def test_connector_rejects_nonvertical(self):
        z = sf.DoubleTangent([0, 0], [5, 5], [1e-3, 0], [1, 2])
        with pytest.raises(NotVerticalError):
            sf.vertical_connector_K(z)

    def test_lift_then_connect(self):
        v = sf.TangentPoint([0, 0], [1, 1])
        lifted = sf.vertical_lift(v, [2, 3])
        assert lifted.is_vertical()
        back = sf.vertical_connector_K(lifted)
        assert np.array_equal(back.y, [2, 3])

    def test_zero_lift(self):
        v = sf.TangentPoint([1], [2])
        assert np.array_equal(sf.vertical_lift(v, [0]).Y, [0])


class TestSodeField:
    def test_section_lies_in_fix_involution(self, poincare):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.uniform([-2, 0.5], [2, 3])
            y = rng.uniform(-2, 2, 2)
            assert poincare.section(x, y).in_fix_involution()

    def test_zero_section_domain_flag(self):
        s = sf.SodeField.from_expressions(["1/y1"], domain=EXCLUDES_ZERO)
        with pytest.raises(DomainError):
            s.check_point([0.0], [0.0])
        s.check_point([0.0], [1.0])

    def test_quasispray_vanishes_on_zero_section(self, poincare):
        rng = np.random.default_rng(11)
        for _ in range(20):
            x = rng.uniform([-2, 0.5], [2, 3])
            assert np.allclose(poincare.value(x, [0, 0]), 0.0, atol=1e-14)


class TestHomogeneityClassifier:
    def test_linear_field_is_complete_degree_one(self, expgrowth):
        rep = sf.classify_homogeneity(expgrowth)
        assert rep.verdict == "homogeneous"
        assert rep.degree == pytest.approx(1.0, abs=1e-10)
        assert rep.kind == "complete"

    def test_blowup_field_is_inhomogeneous(self, blowup1d):
        rep = sf.classify_homogeneity(blowup1d)
        assert rep.verdict == "inhomogeneous"

    def test_poincare_is_complete_quadratic(self, poincare):
        rep = sf.classify_homogeneity(poincare)
        assert rep.verdict == "homogeneous"
        assert rep.degree == pytest.approx(2.0, abs=1e-10)
        assert rep.kind == "complete"

    @pytest.mark.parametrize(
        "m, exprs, domain",
        [
            (-1.0, ["1/y1", "1/y2"], EXCLUDES_ZERO),
            (0.5, ["(y1^2 + y2^2)^(0.25)", "(y1^2 + 2*y2^2)^(0.25)"], EXCLUDES_ZERO),
            (1.0, ["y1 + 2*y2", "x1*y2"], "whole"),
            (2.0, ["y1*y2", "y2^2 - y1^2"], "whole"),
            (3.0, ["y1^3", "y1*y2^2 + y2^3"], "whole"),
        ],
    )
    def test_degree_recovery(self, m, exprs, domain):
        s = sf.SodeField.from_expressions(exprs, domain=domain)
        rep = sf.classify_homogeneity(s)
        assert rep.verdict == "homogeneous"
        assert rep.degree == pytest.approx(m, abs=1e-8)

    def test_zero_field_verdict(self, flat2):
        rep = sf.classify_homogeneity(flat2)
        assert rep.verdict == "zero-field"

    def test_complete_whole_bundle_vanishes_on_zero_section(self):
        # any field reported complete with degree >= 1 must vanish at y = 0
        rng = np.random.default_rng(3)
        for exprs in (["y1 + 2*y2", "x1*y2"], ["y1*y2", "y2^2 - y1^2"], ["y1^3", "y2^3"]):
            s = sf.SodeField.from_expressions(exprs)
            rep = sf.classify_homogeneity(s)
            assert rep.kind == "complete" and rep.degree >= 1
            for _ in range(16):
                x = rng.uniform(-2, 2, 2)
                assert np.allclose(s.value(x, [0, 0]), 0.0, atol=1e-13)

    def test_positive_only_kind(self):
        # |y| is positively homogeneous of degree 1 but not odd-symmetric
        s = sf.SodeField.from_expressions(["sqrt(y1^2 + y2^2)", "0"],
                                          domain=EXCLUDES_ZERO)
        rep = sf.classify_homogeneity(s)
        assert rep.verdict == "homogeneous"
        assert rep.kind == "positive"
        assert rep.degree == pytest.approx(1.0, abs=1e-9)


class TestConnectionShape:
    def test_constant_coefficients_strongly_nonlinear(self):
        c = sf.ConnectionField.from_expressions([["1", "0"], ["0", "2"]])
        rep = sf.classify_connection_shape(c)
        assert rep.zero_preserving is False
        assert rep.strongly_nonlinear is True
        assert rep.linear is False

    def test_christoffel_form_is_linear_vh1_zero_preserving(self):
        c = sf.ConnectionField.from_expressions(
            [["0.5*y2", "0.5*y1"], ["-0.1*y1", "0.3*y2"]]
        )
        rep = sf.classify_connection_shape(c)
        assert rep.linear is True
        assert rep.vh_degree == pytest.approx(1.0, abs=1e-10)
        assert rep.zero_preserving is True
        assert rep.strongly_nonlinear is False

    def test_finsler_connection_shape(self):
        f = sf.FinslerStructure("(y1^2 + y2^2)/x2^2", 2,
                                chart=sf.Box([-5, 0.1], [5, 10]))
        rep = sf.classify_connection_shape(f.connection())
        assert rep.vh_degree == pytest.approx(1.0, abs=1e-8)
        assert rep.vh_kind == "positive"  # reduced-bundle domain: a > 0 only
        assert rep.zero_preserving is None  # zero-section tests not applicable
        assert rep.zero_limit < 1e-6
        assert rep.linear is True

    def test_involution_invariance_detects_symmetry(self):
        # G(x,u)w == G(x,w)u iff the Christoffel form is index-symmetric:
        # G^1_1 = y2 alone (A^1_12 = 1, A^1_21 = 0) breaks it
        skew = sf.ConnectionField.from_expressions([["y2", "0"], ["0", "0"]])
        assert sf.classify_connection_shape(skew).involution_invariant is False
        good = sf.ConnectionField.from_expressions([["y2", "y1"], ["0.5*y1", "0"]])
        assert sf.classify_connection_shape(good).involution_invariant is True


class TestSampling:
    def test_fixed_seed_is_deterministic(self):
        spec = SampleSpec(seed=99)
        a = spec.draw(2, "whole", None)
        b = spec.draw(2, "whole", None)
        assert np.array_equal(a, b)

    def test_respects_chart(self):
        spec = SampleSpec()
        chart = sf.Box([0.5, 1.0], [1.0, 2.0])
        pts = spec.draw(2, "whole", chart)
        assert np.all(pts[:, 0] >= 0.5) and np.all(pts[:, 0] <= 1.0)
        assert np.all(pts[:, 1] >= 1.0) and np.all(pts[:, 1] <= 2.0)

    def test_avoids_zero_fiber(self):
        pts = SampleSpec().draw(3, EXCLUDES_ZERO, None)
        assert np.all(np.max(np.abs(pts[:, 3:]), axis=1) > 0.0)
