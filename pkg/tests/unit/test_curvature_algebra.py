import math
import unittest

import numpy as np
import pytest

from pinchflow import curvature_algebra as ca
from pinchflow.exceptions import AdmissibilityError, DegenerateTorusError, RangeError
from pinchflow.types import PinchingParams, ShapeSpectrum


class AdmissibilityTest(unittest.TestCase):
    def test_threshold(self):
        assert ca.admissibility_threshold(2) == pytest.approx(2 / 3)
        assert ca.admissibility_threshold(3) == pytest.approx(4 / 3)
        assert ca.admissibility_threshold(4) == 2
        assert ca.admissibility_threshold(10) == 5

    def test_rejects_low_alpha_surface(self):
        assert not ca.is_admissible(2, 1, 0.3)
        with pytest.raises(AdmissibilityError, match="0.6666"):
            ca.require_admissible(PinchingParams(n=2, m=1, alpha=0.3))

    def test_accepts(self):
        assert ca.is_admissible(2, 1, 0.5)
        assert ca.is_admissible(4, 2, 0.6)
        ca.require_admissible(PinchingParams(n=3, m=1, alpha=0.5))

    def test_nonvacuous_cases(self):
        assert ca.nonvacuous_cases(2) == [(1, pytest.approx(1 / 3))]
        cases = dict(ca.nonvacuous_cases(5))
        assert cases[1] == 0.0
        assert cases[2] == 0.0
        assert cases[3] == pytest.approx(0.5)


class CaseTableTest(unittest.TestCase):
    def test_surface(self):
        assert ca.case_rhs(2, 1, 2.0, 1.0) == pytest.approx(3 + 4 / 3)

    def test_three_fold_middle_index(self):
        assert ca.case_rhs(3, 2, 1.0, 1.0) == pytest.approx(0.6 + 8 / 3)

    def test_low_index(self):
        assert ca.case_rhs(5, 2, 3.0, 1.0) == pytest.approx(9 / 3 + 4)

    def test_ceiling_index(self):
        assert ca.case_rhs(5, 3, 1.0, 2.0) == pytest.approx(0.4 + 10)

    def test_vectorized(self):
        values = ca.case_rhs(4, 1, np.array([0.0, 3.0]), 1.0)
        np.testing.assert_allclose(values, [2.0, 5.0])

    def test_minimal_clifford_on_boundary(self):
        spectrum = ShapeSpectrum(lam=[1.0, 1.0, -1.0, -1.0])
        report = ca.pinching_report(spectrum, PinchingParams(n=4, m=2, alpha=0.5), 0.0)
        assert report.strict_margin == pytest.approx(0.0, abs=1e-12)


class PinchingFunctionsTest(unittest.TestCase):
    def test_umbilic_outside_U(self):
        params = PinchingParams(n=3, m=1, alpha=0.5)
        spectrum = ShapeSpectrum(lam=[1.0, 1.0, 1.0])
        report = ca.pinching_report(spectrum, params, 0.01)
        # umbilic points have f_eta < 0 and miss U
        assert report.g_m_alpha == pytest.approx(3 - 9 / 2.5 - 1)
        assert report.g_m_alpha < 0
        assert report.f_eta == pytest.approx(3 - (1 / 3 + 0.01) * 9)
        assert not report.in_U
        assert report.strict_margin < 0

    def test_f_m_eta_shifts_index(self):
        assert ca.f_m_eta(5.0, 2.0, 4, 1, 0.1) == pytest.approx(
            ca.f_eta(5.0, 2.0, 4, 2, 0.1)
        )

    def test_k_squared_variant(self):
        params = PinchingParams(n=3, m=1, alpha=0.5, K=2.0)
        spectrum = ShapeSpectrum(lam=[0.5, 1.0, 2.0])
        report = ca.pinching_report(spectrum, params, 0.0, include_k_squared=True)
        assert report.g_m_alpha - report.g_m_alpha_k_squared == pytest.approx(2 * 0.5 * (4 - 2))
        assert ca.pinching_report(spectrum, params, 0.0).g_m_alpha_k_squared is None

    def test_wrong_size(self):
        with pytest.raises(RangeError):
            ca.pinching_report(ShapeSpectrum(lam=[1.0, 2.0]), PinchingParams(n=3, m=1, alpha=0.5), 0.0)

    def test_negative_eta(self):
        with pytest.raises(RangeError):
            ca.pinching_report(
                ShapeSpectrum(lam=[1.0, 2.0, 3.0]), PinchingParams(n=3, m=1, alpha=0.5), -0.1
            )

    def test_invariants(self):
        values = ca.invariants(ShapeSpectrum(lam=[2.0, -1.0, 0.5]))
        assert values.H == pytest.approx(1.5)
        assert values.A_norm_sq == pytest.approx(5.25)
        assert values.lambda_min == -1.0


class CoefficientsTest(unittest.TestCase):
    def test_index_one(self):
        coeffs = ca.coefficients(PinchingParams(n=3, m=1, alpha=0.5), 0.0)
        assert coeffs.a_m == pytest.approx(0.4)
        assert coeffs.b_m == pytest.approx(1.0)
        assert coeffs.C0 == pytest.approx(1.0)

    def test_eta0_and_delta(self):
        coeffs = ca.coefficients(PinchingParams(n=4, m=2, alpha=0.6), 0.01)
        assert coeffs.eta0 == pytest.approx(0.0384615, abs=1e-6)
        assert coeffs.delta == pytest.approx(0.1538, abs=1e-4)
        assert coeffs.a == pytest.approx(1 / 2.6 - 1 / 3 + coeffs.eta0 - 0.01)
        assert coeffs.beta == pytest.approx(0.5 * (0.5 - 1 / 3))

    def test_a_m_identity(self):
        for n, m, alpha in [(3, 1, 0.5), (4, 2, 0.6), (6, 3, 0.9), (7, 2, 0.2)]:
            coeffs = ca.coefficients(PinchingParams(n=n, m=m, alpha=alpha), 0.0)
            assert coeffs.a_m == pytest.approx(2 / (2 * n - coeffs.b_m))

    def test_eta_out_of_range(self):
        params = PinchingParams(n=4, m=2, alpha=0.6)
        largest = ca.eta0(4, 2, 0.6)
        with pytest.raises(RangeError):
            ca.coefficients(params, largest)
        with pytest.raises(RangeError):
            ca.coefficients(params, -1e-3)

    def test_inadmissible(self):
        with pytest.raises(AdmissibilityError):
            ca.coefficients(PinchingParams(n=2, m=1, alpha=0.3), 0.0)

    def test_a_priori(self):
        data = ca.a_priori_coefficients(PinchingParams(n=3, m=1, alpha=0.5))
        assert data.eta == pytest.approx(0.4 - 1 / 3)
        assert data.delta == 0
        assert data.C_eta == pytest.approx(1.0)

    def test_weighted_function(self):
        params = PinchingParams(n=3, m=1, alpha=0.5)
        coeffs = ca.coefficients(params, 0.01)
        spectrum = ShapeSpectrum(lam=[0.1, 0.2, 3.0])
        W = ca.W_value(spectrum, coeffs, 1.0)
        assert W == pytest.approx(coeffs.a * spectrum.H**2 + coeffs.b)
        f = ca.f_eta(spectrum.A_norm_sq, spectrum.H, 3, 1, 0.01)
        assert ca.f_sigma_eta(spectrum, coeffs, 1.0, 1.0) == pytest.approx(f)
        assert ca.f_sigma_eta(spectrum, coeffs, 1.0, 0.0) == pytest.approx(f / W)
        with pytest.raises(RangeError):
            ca.f_sigma_eta(spectrum, coeffs, 1.0, 1.5)

    def test_weight_on_umbilic(self):
        coeffs = ca.coefficients(PinchingParams(n=4, m=2, alpha=0.6), 0.01)
        a = 1 / 2.6 - 1 / 3 + 0.0384615 - 0.01
        W = ca.W_value(ShapeSpectrum(lam=[1.0] * 4), coeffs, 1.0)
        assert W == pytest.approx(16 * a + 2.8, abs=1e-5)


class SimonsTest(unittest.TestCase):
    def test_surface_value(self):
        assert ca.simons_C_norm_sq(ShapeSpectrum(lam=[2.0, 0.0, 0.0]), 1.0) == pytest.approx(16.0)

    def test_vanishes_on_umbilic(self):
        assert ca.simons_C_norm_sq(ShapeSpectrum(lam=[1.5] * 4), 1.0) == 0.0

    def test_vanishes_on_clifford(self):
        spectrum = ca.clifford_spectrum(5, 2, 0.7, 1.0)
        assert ca.simons_C_norm_sq(spectrum, 1.0) == pytest.approx(0.0, abs=1e-20)

    def test_rigidity(self):
        assert ca.simons_rigidity(ShapeSpectrum(lam=[0.0, 0.0, 0.0]), 1.0)
        # minimal, nonzero and below nK
        assert not ca.simons_rigidity(ShapeSpectrum(lam=[0.5, -0.5, 0.0]), 1.0)
        # minimal Clifford torus sits exactly at nK
        assert ca.simons_rigidity(ShapeSpectrum(lam=[1.0, 1.0, -1.0, -1.0]), 1.0)


class CliffordTest(unittest.TestCase):
    def test_equal_radii(self):
        spectrum = ca.clifford_spectrum(4, 1, math.sqrt(0.5), 1.0)
        closed = ca.clifford_closed_form(4, 1, math.sqrt(0.5), 1.0)
        assert closed.H == pytest.approx(2.0)
        assert closed.A_norm_sq == pytest.approx(4.0)
        assert closed.excess == pytest.approx(2 / 3)
        assert spectrum.H == pytest.approx(2.0)
        assert spectrum.A_norm_sq == pytest.approx(4.0)
        strict = spectrum.A_norm_sq - spectrum.H**2 / 3 - 2
        assert strict == pytest.approx(closed.excess)

    def test_excess(self):
        closed = ca.clifford_closed_form(5, 2, math.sqrt(0.8), 1.0)
        assert closed.excess == pytest.approx(1 / 6)

    def test_matches_spectrum(self):
        for n, m, r, K in [(3, 1, 0.3, 1.0), (6, 2, 0.9, 2.5), (5, 3, 0.5, 0.7)]:
            spectrum = ca.clifford_spectrum(n, m, r, K)
            closed = ca.clifford_closed_form(n, m, r, K)
            assert spectrum.H == pytest.approx(closed.H)
            assert spectrum.A_norm_sq == pytest.approx(closed.A_norm_sq)

    def test_minimal_radius(self):
        n, m = 5, 2
        closed = ca.clifford_closed_form(n, m, math.sqrt(m / n), 1.0)
        assert closed.H == pytest.approx(0.0, abs=1e-12)
        assert closed.A_norm_sq == pytest.approx(n)

    def test_degenerate(self):
        for r in (0.0, 1.0, 1.2):
            with pytest.raises(DegenerateTorusError):
                ca.clifford_spectrum(4, 1, r, 1.0)
            with pytest.raises(DegenerateTorusError):
                ca.clifford_closed_form(4, 1, r, 1.0)

    def test_identities_on_random_tori(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(2, 10))
            m = int(rng.integers(1, n))
            r = float(rng.uniform(0.05, 0.95))
            K = float(rng.uniform(0.1, 10.0))
            spectrum = ca.clifford_spectrum(n, m, r, K)
            closed = ca.clifford_closed_form(n, m, r, K)
            scale = closed.A_norm_sq + K
            assert spectrum.H == pytest.approx(closed.H, rel=1e-9, abs=1e-9 * math.sqrt(scale))
            assert spectrum.A_norm_sq == pytest.approx(closed.A_norm_sq, rel=1e-9)
            excess = spectrum.A_norm_sq - spectrum.H**2 / (n - m) - 2 * m * K
            assert excess == pytest.approx(closed.excess, rel=1e-8, abs=1e-8 * scale)

    def test_matched_tori_never_pinched(self):
        # n - 2m + alpha > 0 puts every S^m x S^(n-m) outside {g < 0}
        phi = np.linspace(0.0, math.pi / 2, 1002)[1:-1]
        for n, m, alpha in [(3, 1, 0.5), (4, 1, 0.5), (4, 2, 0.5), (5, 2, 0.5), (6, 3, 0.6)]:
            params = PinchingParams(n=n, m=m, alpha=alpha)
            ca.require_admissible(params)
            closed = [ca.clifford_closed_form(n, m, math.cos(angle), 1.0) for angle in phi]
            A_sq = np.array([item.A_norm_sq for item in closed])
            H = np.array([item.H for item in closed])
            g = ca.g_m_alpha(A_sq, H, n, m, alpha, 1.0)
            assert float(np.min(g)) > 0


class ScalingTest(unittest.TestCase):
    """(K, A) -> (c^2 K, c A) for c in {0.5, 2, 10}."""

    FACTORS = (0.5, 2.0, 10.0)

    def setUp(self):
        rng = np.random.default_rng(5)
        self.spectra = [ShapeSpectrum(lam=rng.normal(size=4) * 2) for _ in range(20)]
        self.params = PinchingParams(n=4, m=2, alpha=0.5)

    def close(self, scaled, base, power):
        return scaled == pytest.approx(power * base, rel=1e-9, abs=1e-9 * power)

    def test_invariants(self):
        for c in self.FACTORS:
            for spectrum in self.spectra:
                base, scaled = ca.invariants(spectrum), ca.invariants(spectrum.scaled(c))
                assert self.close(scaled.H, base.H, c)
                assert self.close(scaled.A_norm_sq, base.A_norm_sq, c**2)
                assert self.close(scaled.lambda_min, base.lambda_min, c)

    def test_pinching_report(self):
        for c in self.FACTORS:
            params = PinchingParams(n=4, m=2, alpha=0.5, K=c**2)
            for spectrum in self.spectra:
                base = ca.pinching_report(spectrum, self.params, 0.01)
                scaled = ca.pinching_report(spectrum.scaled(c), params, 0.01)
                for field in ("strict_margin", "g_m_alpha", "f_eta", "f_m_eta"):
                    assert self.close(getattr(scaled, field), getattr(base, field), c**2), field
                assert scaled.in_U == base.in_U

    def test_case_rhs(self):
        for c in self.FACTORS:
            for n, m in [(2, 1), (3, 1), (3, 2), (4, 2), (5, 3)]:
                assert self.close(ca.case_rhs(n, m, 1.7 * c, c**2), ca.case_rhs(n, m, 1.7, 1.0), c**2)

    def test_weights_and_simons_term(self):
        coeffs = ca.coefficients(self.params, 0.01)
        for c in self.FACTORS:
            for spectrum in self.spectra:
                scaled = spectrum.scaled(c)
                W = ca.W_value(spectrum, coeffs, 1.0)
                assert self.close(ca.W_value(scaled, coeffs, c**2), W, c**2)
                C_sq = ca.simons_C_norm_sq(spectrum, 1.0)
                assert self.close(ca.simons_C_norm_sq(scaled, c**2), C_sq, c**6)
                for sigma in (0.0, 0.5, 1.0):
                    base = ca.f_sigma_eta(spectrum, coeffs, 1.0, sigma)
                    assert self.close(ca.f_sigma_eta(scaled, coeffs, c**2, sigma), base, c ** (2 * sigma))

    def test_clifford(self):
        for c in self.FACTORS:
            base, scaled = ca.clifford_closed_form(5, 2, 0.6, 1.0), ca.clifford_closed_form(5, 2, 0.6, c**2)
            assert self.close(scaled.A_norm_sq, base.A_norm_sq, c**2)
            assert self.close(scaled.H, base.H, c)
            assert self.close(scaled.excess, base.excess, c**2)
            np.testing.assert_allclose(
                ca.clifford_spectrum(5, 2, 0.6, c**2).lam, c * ca.clifford_spectrum(5, 2, 0.6, 1.0).lam
            )
            assert ca.simons_rigidity(ShapeSpectrum(lam=[c, c, -c, -c]), c**2)
