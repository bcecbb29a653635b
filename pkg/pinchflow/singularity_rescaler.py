"""Type classification and parabolic rescaling of finite-time singularities."""
from __future__ import annotations

import logging
import math
from typing import Optional

import attr
import numpy as np

from pinchflow.exceptions import NotApplicable
from pinchflow.types import FlowTrace, ShapeSpectrum, Snapshot, TerminalEvent, TypeFlag

logger = logging.getLogger(__name__)

DECADE = 10.0
STABILIZATION = 0.05
DROP_FRACTION = 0.1
COMPETING_MAXIMUM = 0.99


@attr.s(kw_only=True, frozen=True)
class RescaledSpectrum:
    t: float = attr.ib()
    index: int = attr.ib()
    scale: float = attr.ib()
    normalized: np.ndarray = attr.ib(eq=False)
    rescaled: np.ndarray = attr.ib(eq=False)
    k_best: int = attr.ib()
    distance: float = attr.ib()
    cylindrical_defect: float = attr.ib()


@attr.s(kw_only=True, frozen=True)
class PickedPoint:
    t: float = attr.ib()
    index: int = attr.ib()
    r: float = attr.ib()
    value: float = attr.ib()


@attr.s(kw_only=True)
class BlowupRecord:
    type_flag: str = attr.ib()
    T: Optional[float] = attr.ib(default=None)
    T_dropped: Optional[float] = attr.ib(default=None)
    functional_sup: Optional[float] = attr.ib(default=None)
    functional: list[tuple[float, float]] = attr.ib(factory=list)
    detail: str = attr.ib(default="")
    rescaled: list[RescaledSpectrum] = attr.ib(factory=list)
    competing: list[tuple[float, int, int]] = attr.ib(factory=list)

    @property
    def model_distance(self) -> list[float]:
        return [entry.distance for entry in self.rescaled]

    @property
    def k_best(self) -> Optional[int]:
        if not self.rescaled:
            return None
        return self.rescaled[-1].k_best

    def csv_rows(self) -> list[list[float]]:
        """One row per rescaled snapshot: t, T - t, scale, k, distance, spectrum."""
        return [
            [entry.t, self.T - entry.t, entry.scale, entry.k_best, entry.distance]
            + entry.normalized.tolist()
            for entry in self.rescaled
        ]

    def as_dict(self) -> dict:
        return {
            "type_flag": self.type_flag,
            "T": self.T,
            "T_dropped": self.T_dropped,
            "functional_sup": self.functional_sup,
            "functional": [list(pair) for pair in self.functional],
            "detail": self.detail,
            "k_best": self.k_best,
            "model_distance": self.model_distance,
            "competing": [list(item) for item in self.competing],
        }


def _extrapolate_T(times: np.ndarray, max_A_sq: np.ndarray) -> Optional[float]:
    window = max_A_sq >= max_A_sq[-1] / DECADE
    if np.count_nonzero(window) < 3:
        return None
    slope, intercept = np.polyfit(times[window], 1.0 / max_A_sq[window], 1)
    if slope >= 0:
        return None
    return float(-intercept / slope)


def _is_singular(trace: FlowTrace) -> bool:
    return trace.terminal is not None and trace.terminal.kind in (
        TerminalEvent.EXTINCTION,
        TerminalEvent.SINGULARITY,
    )


def classify_type(trace: FlowTrace) -> BlowupRecord:
    if not _is_singular(trace):
        return BlowupRecord(type_flag=TypeFlag.UNDECIDED, detail="trace ends without a singularity")
    times, max_A_sq = trace.times, trace.max_A_sq
    if len(times) < 3 or max_A_sq[-1] < DECADE * np.min(max_A_sq):
        return BlowupRecord(
            type_flag=TypeFlag.UNDECIDED, detail="less than one decade of curvature growth"
        )
    T = _extrapolate_T(times, max_A_sq)
    if T is None:
        return BlowupRecord(type_flag=TypeFlag.UNDECIDED, detail="no extrapolation window")

    keep = max(3, int(len(times) * (1 - DROP_FRACTION)))
    T_dropped = _extrapolate_T(times[:keep], max_A_sq[:keep])

    before = times < T
    functional = (T - times[before]) * max_A_sq[before]
    running = np.maximum.accumulate(functional)
    decade_start = int(np.argmax(max_A_sq[before] >= max_A_sq[before][-1] / DECADE))
    start_sup = running[max(decade_start - 1, 0)]
    growth = (running[-1] - start_sup) / start_sup
    flag = TypeFlag.I if growth < STABILIZATION else TypeFlag.II
    logger.info(
        "Singularity at T~%s classified as type %s (sup growth %s over the last decade)",
        T,
        flag,
        growth,
    )
    return BlowupRecord(
        type_flag=flag,
        T=T,
        T_dropped=T_dropped,
        functional_sup=float(running[-1]),
        functional=list(zip(times[before].tolist(), functional.tolist())),
    )


def cylinder_model(n: int, k: int) -> np.ndarray:
    """Normalized spectrum of the shrinking R^k x S^(n-k) model, sorted ascending."""
    return np.concatenate([np.zeros(k), np.full(n - k, 1.0 / math.sqrt(n - k))])


def model_distance(spectrum: ShapeSpectrum) -> tuple[int, float]:
    """Best cylinder index k and its distance, up to permutation and orientation."""
    norm = math.sqrt(spectrum.A_norm_sq)
    if norm == 0:
        raise NotApplicable("Cannot normalize a totally geodesic spectrum")
    normalized = spectrum.lam / norm
    candidates = [np.sort(normalized), np.sort(-normalized)]
    best_k, best = 0, math.inf
    for k in range(spectrum.n):
        model = cylinder_model(spectrum.n, k)
        distance = min(float(np.linalg.norm(c - model)) for c in candidates)
        if distance < best:
            best_k, best = k, distance
    return best_k, best


def _maxima(snap: Snapshot) -> list[int]:
    values = snap.geometry.A_norm_sq
    top = int(np.argmax(values))
    indices = [top]
    for index in np.flatnonzero(values >= COMPETING_MAXIMUM * values[top]):
        if all(abs(int(index) - other) > 1 for other in indices):
            indices.append(int(index))
    return indices


def _rescale(snap: Snapshot, index: int, T: float) -> RescaledSpectrum:
    spectrum = snap.geometry.spectrum(index)
    k_best, distance = model_distance(spectrum)
    norm = math.sqrt(spectrum.A_norm_sq)
    H = spectrum.H
    scale = math.sqrt(T - snap.t)
    defect = (spectrum.A_norm_sq - H**2 / (spectrum.n - k_best)) / H**2 if H else math.inf
    return RescaledSpectrum(
        t=snap.t,
        index=index,
        scale=scale,
        normalized=spectrum.lam / norm,
        rescaled=spectrum.lam * scale,
        k_best=k_best,
        distance=distance,
        cylindrical_defect=defect,
    )


def rescale_type_I(trace: FlowTrace, record: Optional[BlowupRecord] = None) -> BlowupRecord:
    record = record or classify_type(trace)
    if record.type_flag != TypeFlag.I:
        raise NotApplicable(f"Rescaling needs a type I singularity, got {record.type_flag}")
    threshold = trace.max_A_sq[-1] / DECADE
    for snap in trace.snapshots:
        if snap.t >= record.T or snap.max_A_sq < threshold:
            continue
        maxima = _maxima(snap)
        if len(maxima) > 1:
            record.competing.extend((snap.t, maxima[0], other) for other in maxima[1:])
        for index in maxima:
            record.rescaled.append(_rescale(snap, index, record.T))
    if record.rescaled:
        logger.info(
            "Blow-up closest to the k=%d model (distance %s)",
            record.k_best,
            record.rescaled[-1].distance,
        )
    return record


def pick_type_II_points(
    trace: FlowTrace, record: Optional[BlowupRecord] = None, count: int = 24
) -> list[PickedPoint]:
    """Point picking maximizing |A|^2 (T_j - t) over t <= T_j, T_j -> T."""
    record = record or classify_type(trace)
    if record.type_flag == TypeFlag.I:
        raise NotApplicable("Type II point picking refused on a type I singularity")
    if record.T is None:
        raise NotApplicable(f"No singular time to pick towards: {record.detail}")
    times, max_A_sq = trace.times, trace.max_A_sq
    span = record.T - times[0]
    picked = []
    for j in range(2, count + 2):
        cutoff = record.T - span / j
        window = times <= cutoff
        if not np.any(window):
            continue
        values = max_A_sq[window] * (cutoff - times[window])
        best = int(np.argmax(values))
        snap = trace.snapshots[int(np.flatnonzero(window)[best])]
        picked.append(
            PickedPoint(
                t=snap.t,
                index=snap.argmax_A_sq,
                r=1.0 / math.sqrt(snap.max_A_sq),
                value=float(values[best]),
            )
        )
    return picked


@attr.s(kw_only=True, frozen=True)
class NeckRatio:
    k: int = attr.ib()
    threshold: float = attr.ib()
    samples: tuple[tuple[float, int, float], ...] = attr.ib()

    @property
    def sup(self) -> float:
        return max(value for _, _, value in self.samples)

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "threshold": self.threshold,
            "sup": self.sup,
            "samples": [list(sample) for sample in self.samples],
        }


def neck_ratio(trace: FlowTrace, k: int = 1, threshold: float = 1e4) -> NeckRatio:
    """(|A|^2 - H^2/(n-k))/H^2 at the curvature maximum once max H^2/K >= threshold."""
    n, K = trace.params.n, trace.params.K
    if not 0 <= k < n:
        raise NotApplicable(f"Cylinder index k must lie in [0, {n}), got {k}")
    samples = []
    for snap in trace.snapshots:
        H_sq = np.square(snap.geometry.H)
        if float(np.max(H_sq)) / K < threshold:
            continue
        index = snap.argmax_A_sq
        A_sq, h_sq = float(snap.geometry.A_norm_sq[index]), float(H_sq[index])
        value = (A_sq - h_sq / (n - k)) / h_sq if h_sq > 0 else math.inf
        samples.append((snap.t, index, value))
    if not samples:
        raise NotApplicable(f"max H^2/K never reaches {threshold!r}")
    return NeckRatio(k=k, threshold=threshold, samples=tuple(samples))
