import math
import unittest

import numpy as np
import pytest

from pinchflow import poincare_verifier as pv
from pinchflow.curvature_algebra import nonvacuous_cases
from pinchflow.exceptions import AdmissibilityError, NotApplicable, RangeError
from pinchflow.types import PinchingParams

from common import N4_PARAMS, SLOW

N5_PARAMS = PinchingParams(n=5, m=2, alpha=0.5)

FIXTURES = (
    (N4_PARAMS, 0.01),
    (N5_PARAMS, 0.01),
    (PinchingParams(n=6, m=3, alpha=0.6), 0.005),
)


class HelpersTest(unittest.TestCase):
    def test_eta_ceiling(self):
        assert pv.eta_ceiling(N4_PARAMS) == pytest.approx(1 / 2.5 - 1 / 3)

    def test_umbilic_origin(self):
        zero = np.zeros(4)
        assert pv.is_feasible(zero, N4_PARAMS, 0.01)
        assert pv.weight(zero, N4_PARAMS, 0.01) == pytest.approx(3.0)
        assert pv.ratio(zero, N4_PARAMS, 0.01) == pytest.approx(1 / 27)

    def test_clifford_point_infeasible(self):
        lam = np.array([10.0, 10.0, -0.1, -0.1])
        # A^2 - H^2/2.5 - 3 > 0 violates the uniform pinching constraint
        assert not pv.is_feasible(lam, N4_PARAMS, 0.01)

    def test_starting_points(self):
        starts = pv.starting_points(N4_PARAMS, 9, seed=1)
        assert len(starts) == 9
        assert all(start.shape == (4,) for start in starts)
        again = pv.starting_points(N4_PARAMS, 9, seed=1)
        for first, second in zip(starts, again):
            np.testing.assert_array_equal(first, second)


class MinRatioTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.certificate = pv.min_ratio(N4_PARAMS, 0.01, budget=12, seed=3)

    def test_feasible(self):
        cert = self.certificate
        assert cert.feasible
        assert cert.gamma_hat > 0
        assert cert.feasible_starts >= 1
        assert 0 <= cert.start_index < 12
        assert cert.label == pv.LABEL

    def test_minimizer_is_witness(self):
        cert = self.certificate
        lam = np.array(cert.minimizer)
        assert pv.is_feasible(lam, N4_PARAMS, 0.01)
        assert pv.ratio(lam, N4_PARAMS, 0.01) == pytest.approx(cert.gamma_hat, rel=1e-12)
        assert list(cert.minimizer) == sorted(cert.minimizer)

    def test_reproducible(self):
        again = pv.min_ratio(N4_PARAMS, 0.01, budget=12, seed=3)
        assert again.gamma_hat == self.certificate.gamma_hat
        assert again.minimizer == self.certificate.minimizer

    def test_worker_count_does_not_matter(self):
        threaded = pv.min_ratio(N4_PARAMS, 0.01, budget=12, seed=3, workers=2)
        assert threaded.gamma_hat == self.certificate.gamma_hat
        assert threaded.start_index == self.certificate.start_index

    def test_as_dict(self):
        data = self.certificate.as_dict()
        assert data["n"] == 4
        assert data["seed"] == 3
        assert len(data["unconstrained_ray"]) == len(pv.RAY_SAMPLES)

    def test_surface_dimension_two(self):
        with pytest.raises(NotApplicable):
            pv.min_ratio(PinchingParams(n=2, m=1, alpha=0.5), 0.01)

    def test_eta_range(self):
        with pytest.raises(RangeError):
            pv.min_ratio(N4_PARAMS, 0.0)
        with pytest.raises(RangeError):
            pv.min_ratio(N4_PARAMS, 0.1)

    def test_budget(self):
        with pytest.raises(RangeError):
            pv.min_ratio(N4_PARAMS, 0.01, budget=0)

    def test_not_admissible(self):
        with pytest.raises(AdmissibilityError):
            pv.min_ratio(PinchingParams(n=3, m=2, alpha=0.1), 0.01)


class FixtureTest(unittest.TestCase):
    def test_fixtures_have_feasible_witness(self):
        for params, eta in FIXTURES:
            cert = pv.min_ratio(params, eta, budget=12, seed=3)
            assert cert.feasible, (params, eta)
            assert cert.gamma_hat > 0
            lam = np.array(cert.minimizer)
            assert pv.is_feasible(lam, params, eta)
            # umbilic points give the upper bracket 1 / W^3
            assert cert.gamma_hat <= pv.ratio(np.zeros(params.n), params, eta) * (1 + 1e-9)

    def test_gamma_grows_with_eta(self):
        etas = (0.005, 0.01, 0.02)
        certs = [pv.min_ratio(N4_PARAMS, eta, budget=12, seed=3) for eta in etas]
        for smaller, larger in zip(certs, certs[1:]):
            # a witness for the larger eta is admissible for the smaller one with a heavier weight
            lam = np.array(larger.minimizer)
            assert pv.is_feasible(lam, N4_PARAMS, smaller.eta)
            assert pv.ratio(lam, N4_PARAMS, smaller.eta) <= larger.gamma_hat * (1 + 1e-12)
            assert smaller.gamma_hat <= larger.gamma_hat * 1.05

    @pytest.mark.skipif(not SLOW, reason="set PINCHFLOW_SLOW=1 to run")
    def test_budget_doubling(self):
        for params, eta in FIXTURES:
            base = pv.min_ratio(params, eta, budget=30, seed=0)
            doubled = pv.min_ratio(params, eta, budget=60, seed=0)
            # the doubled search reuses the first starts
            assert doubled.gamma_hat <= base.gamma_hat
            assert (base.gamma_hat - doubled.gamma_hat) / doubled.gamma_hat < 0.05


class CliffordRayTest(unittest.TestCase):
    def test_simons_term_vanishes(self):
        samples = pv.clifford_ray_witness(N4_PARAMS, 0.01)
        assert [sample.t for sample in samples] == list(pv.RAY_SAMPLES)
        for sample in samples:
            assert sample.C_norm_sq <= 1e-12
            assert sample.ratio == pytest.approx(1 / sample.W**3)
            assert np.linalg.norm(sample.normalized) == pytest.approx(1.0)

    def test_ratio_tends_to_zero(self):
        ratios = [sample.ratio for sample in pv.clifford_ray_witness(N4_PARAMS)]
        assert all(earlier > later for earlier, later in zip(ratios, ratios[1:]))
        assert ratios[-1] < 1e-14

    def test_ray_leaves_the_pinching_set(self):
        for sample in pv.clifford_ray_witness(N4_PARAMS, 0.01):
            assert sample.g_rescaled > 0
            assert math.isfinite(sample.g_rescaled)


class MultiplicityGapTest(unittest.TestCase):
    def test_passes(self):
        verdict = pv.multiplicity_gap_check(N4_PARAMS, 0.01)
        assert verdict.passed
        assert [row.ell for row in verdict.rows] == [0, 1, 2, 3]
        assert not any(row.both_hold for row in verdict.rows)

    def test_margins(self):
        verdict = pv.multiplicity_gap_check(N4_PARAMS, 0.01)
        by_ell = {row.ell: row for row in verdict.rows}
        assert by_ell[3].f_margin == pytest.approx(1 - (1 / 3 + 0.01))
        assert by_ell[1].g_margin == pytest.approx(3 / 2.5 - 1)
        assert by_ell[1].f_margin < 0

    def test_n5_single_zero(self):
        verdict = pv.multiplicity_gap_check(N5_PARAMS, 0.01)
        row = next(row for row in verdict.rows if row.ell == 1)
        assert row.f_margin == pytest.approx(-0.04)
        assert row.g_margin > 0
        assert verdict.passed

    def test_eta_positive(self):
        with pytest.raises(RangeError):
            pv.multiplicity_gap_check(N4_PARAMS, 0.0)

    def test_as_dict(self):
        data = pv.multiplicity_gap_check(N4_PARAMS, 0.01).as_dict()
        assert data["passed"] is True
        assert {"ell", "f_margin", "g_margin", "both_hold"} == set(data["rows"][0])

    def test_all_admissible_up_to_eight(self):
        for n in range(2, 9):
            for m, alpha_min in nonvacuous_cases(n):
                alpha = 0.5 * (alpha_min + 1)
                params = PinchingParams(n=n, m=m, alpha=alpha)
                eta = 0.5 * pv.eta_ceiling(params)
                verdict = pv.multiplicity_gap_check(params, eta)
                assert verdict.passed, (n, m, alpha)
                assert len(verdict.rows) == n
