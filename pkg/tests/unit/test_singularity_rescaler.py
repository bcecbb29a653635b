import math
import unittest

import numpy as np
import pytest

from pinchflow import singularity_rescaler as sr
from pinchflow.exceptions import NotApplicable
from pinchflow.homogeneous_flows import hyperparallel_flow
from pinchflow.types import (
    FlowTrace,
    PointGeometry,
    ShapeSpectrum,
    Snapshot,
    TerminalEvent,
    TraceKind,
    TypeFlag,
)

from common import DEFAULT_PARAMS, blowup_series, synthetic_trace


class ClassifyTest(unittest.TestCase):
    def test_type_I_rate(self):
        times, values = blowup_series(0.5, 1.0)
        record = sr.classify_type(synthetic_trace(times, values))
        assert record.type_flag == TypeFlag.I
        assert record.T == pytest.approx(0.5, rel=1e-9)
        assert record.T_dropped == pytest.approx(0.5, rel=1e-6)
        assert record.functional_sup == pytest.approx(1.0, rel=1e-6)

    def test_type_II_rate(self):
        times, values = blowup_series(0.5, 1.5)
        record = sr.classify_type(synthetic_trace(times, values))
        assert record.type_flag == TypeFlag.II
        assert record.T == pytest.approx(0.5, rel=1e-4)

    def test_no_singularity(self):
        times, values = blowup_series(0.5, 1.0)
        trace = synthetic_trace(times, values, terminal=TerminalEvent.HORIZON)
        record = sr.classify_type(trace)
        assert record.type_flag == TypeFlag.UNDECIDED
        assert record.T is None

    def test_short_growth(self):
        times, values = blowup_series(0.5, 1.0, count=10, depth=0.5)
        record = sr.classify_type(synthetic_trace(times, values))
        assert record.type_flag == TypeFlag.UNDECIDED
        assert "decade" in record.detail

    def test_shrinking_sphere(self):
        trace, extinction = hyperparallel_flow(1.0, DEFAULT_PARAMS, horizon=5.0)
        record = sr.classify_type(trace)
        assert record.type_flag == TypeFlag.I
        assert record.T == pytest.approx(extinction.T, rel=1e-4)


class ModelDistanceTest(unittest.TestCase):
    def test_cylinder_model(self):
        model = sr.cylinder_model(4, 1)
        np.testing.assert_allclose(model, [0.0] + [1 / math.sqrt(3)] * 3)
        assert np.linalg.norm(model) == pytest.approx(1.0)

    def test_sphere(self):
        k, distance = sr.model_distance(ShapeSpectrum(lam=[2.0, 2.0, 2.0]))
        assert k == 0
        assert distance == pytest.approx(0.0, abs=1e-12)

    def test_permutation_and_orientation(self):
        for lam in ([0.0, 3.0, 3.0], [3.0, 0.0, 3.0], [-3.0, -3.0, 0.0]):
            k, distance = sr.model_distance(ShapeSpectrum(lam=lam))
            assert k == 1
            assert distance == pytest.approx(0.0, abs=1e-12)

    def test_generic_spectrum(self):
        k, distance = sr.model_distance(ShapeSpectrum(lam=[0.1, 1.0, 1.1, 0.9]))
        assert k == 1
        assert 0 < distance < 0.2

    def test_totally_geodesic(self):
        with pytest.raises(NotApplicable):
            sr.model_distance(ShapeSpectrum(lam=[0.0, 0.0]))


class RescaleTest(unittest.TestCase):
    def test_sphere_blowup_is_round(self):
        trace, _ = hyperparallel_flow(1.0, DEFAULT_PARAMS, horizon=5.0)
        record = sr.rescale_type_I(trace)
        assert record.rescaled
        assert record.k_best == 0
        assert max(record.model_distance) < 1e-6
        assert record.competing == []
        row = record.csv_rows()[-1]
        assert len(row) == 5 + 3
        assert row[1] > 0

    def test_competing_maxima(self):
        times, values = blowup_series(0.5, 1.0)
        trace = synthetic_trace(times, values, nodes=3)
        record = sr.rescale_type_I(trace)
        assert record.competing
        assert all(top == 0 and other == 2 for _, top, other in record.competing)
        per_time = {entry.t for entry in record.rescaled}
        assert len(record.rescaled) == 2 * len(per_time)

    def test_refuses_type_II(self):
        times, values = blowup_series(0.5, 1.5)
        with pytest.raises(NotApplicable):
            sr.rescale_type_I(synthetic_trace(times, values))

    def test_as_dict(self):
        times, values = blowup_series(0.5, 1.0)
        data = sr.rescale_type_I(synthetic_trace(times, values)).as_dict()
        assert data["type_flag"] == TypeFlag.I
        assert data["k_best"] == 0
        assert len(data["model_distance"]) > 0


class PointPickingTest(unittest.TestCase):
    def test_type_II_picks(self):
        times, values = blowup_series(0.5, 1.5)
        trace = synthetic_trace(times, values)
        picked = sr.pick_type_II_points(trace, count=8)
        assert len(picked) == 8
        picked_times = [point.t for point in picked]
        assert picked_times == sorted(picked_times)
        for point in picked:
            assert point.r > 0
            assert point.value > 0

    def test_refused_on_type_I(self):
        times, values = blowup_series(0.5, 1.0)
        with pytest.raises(NotApplicable):
            sr.pick_type_II_points(synthetic_trace(times, values))

    def test_needs_singular_time(self):
        times, values = blowup_series(0.5, 1.0)
        trace = synthetic_trace(times, values, terminal=TerminalEvent.HORIZON)
        with pytest.raises(NotApplicable):
            sr.pick_type_II_points(trace)


def neck_trace(radii, kappa=0.0):
    """n=3 trace of round necks S^2(r) x R, one node per snapshot."""
    trace = FlowTrace(kind=TraceKind.EQUIVARIANT, params=DEFAULT_PARAMS)
    for t, r in enumerate(radii):
        geometry = PointGeometry(
            kappa=[kappa], lam_a=[1 / r], lam_b=[1 / r], multiplicities=(1, 1, 1)
        )
        trace.append(Snapshot(t=float(t), geometry=geometry))
    return trace


class NeckRatioTest(unittest.TestCase):
    def test_round_neck(self):
        record = sr.neck_ratio(neck_trace([0.1, 0.01, 0.001]), k=1, threshold=1e4)
        # H^2 = 4/r^2 reaches 1e4 from r = 0.02 on
        assert [sample[0] for sample in record.samples] == [1.0, 2.0]
        assert record.sup == pytest.approx(0.0, abs=1e-12)
        assert set(record.as_dict()) == {"k", "threshold", "sup", "samples"}

    def test_bent_neck(self):
        record = sr.neck_ratio(neck_trace([0.01], kappa=1.0), k=1, threshold=1e4)
        expected = (1 + 2e4 - 201**2 / 2) / 201**2
        assert record.sup == pytest.approx(expected, rel=1e-9)

    def test_shrinking_sphere(self):
        trace, _ = hyperparallel_flow(1.0, DEFAULT_PARAMS, horizon=1.0)
        assert sr.neck_ratio(trace, k=0, threshold=1e4).sup == pytest.approx(0.0, abs=1e-9)
        assert sr.neck_ratio(trace, k=1, threshold=1e4).sup == pytest.approx(-1 / 6, rel=1e-9)

    def test_threshold_not_reached(self):
        with pytest.raises(NotApplicable, match="never reaches"):
            sr.neck_ratio(neck_trace([0.1, 0.05]), threshold=1e4)

    def test_cylinder_index_range(self):
        with pytest.raises(NotApplicable):
            sr.neck_ratio(neck_trace([0.001]), k=3)
