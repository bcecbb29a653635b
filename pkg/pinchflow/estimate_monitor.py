"""Quantitative estimates evaluated along a flow trace.

Every check reports its extremal value together with the (time, node) where it
is attained. Checks that need derivative norms or area weights are marked
not applicable on traces that do not carry them; they are never passed
silently.
"""
from __future__ import annotations

import logging
import math
from typing import Callable, Iterable, Optional, Sequence

import attr
import numpy as np

from pinchflow import equivariant_flow
from pinchflow.curvature_algebra import (
    a_priori_coefficients,
    case_rhs,
    coefficients,
    f_eta,
    f_sigma_eta_array,
    g_m_alpha,
    require_admissible,
    W_array,
)
from pinchflow.exceptions import InvariantViolation, NotApplicable, RangeError
from pinchflow.types import FlowTrace, PinchingParams, Snapshot, TerminalEvent

logger = logging.getLogger(__name__)

TOLERANCE = 1e-3
MONOTONE_TOL = 1e-9
DECAY_SLACK = 0.02
ROUNDOFF = 1e-12
CALIBRATION_FRACTION = 0.25


@attr.s(kw_only=True, frozen=True)
class Witness:
    t: float = attr.ib()
    index: int = attr.ib()


@attr.s(kw_only=True)
class CheckRecord:
    name: str = attr.ib()
    value: Optional[float] = attr.ib(default=None)
    witness: Optional[Witness] = attr.ib(default=None)
    applicable: bool = attr.ib(default=True)
    passed: Optional[bool] = attr.ib(default=None)
    detail: str = attr.ib(default="")
    extra: dict = attr.ib(factory=dict)

    @classmethod
    def not_applicable(cls, name: str, reason: str) -> CheckRecord:
        return cls(name=name, applicable=False, detail=reason)


@attr.s(kw_only=True, frozen=True)
class ClassCBounds:
    Lambda0: float = attr.ib()
    lambda0: float = attr.ib()
    T_lower: float = attr.ib()
    theta_squared: bool = attr.ib(default=False)

    @classmethod
    def from_params(cls, params: PinchingParams, theta_squared: bool = False) -> ClassCBounds:
        require_admissible(params)
        n, m, alpha, K = params.n, params.m, params.alpha, params.K
        theta = params.Theta**2 if theta_squared else params.Theta
        Lambda0 = 2 * (theta / (n - m + alpha) + 2 * (m - alpha))
        if math.isinf(Lambda0):
            return cls(Lambda0=Lambda0, lambda0=0.0, T_lower=0.0, theta_squared=theta_squared)
        return cls(
            Lambda0=Lambda0,
            lambda0=math.log1p(n / (n + Lambda0)) / (2 * n),
            T_lower=math.log1p(2 * n / Lambda0) / (2 * n * K),
            theta_squared=theta_squared,
        )

    def identity_defect(self, n: int) -> float:
        """|e^(2n lambda0) - (1 + n/(n + Lambda0))|, zero up to round-off."""
        if math.isinf(self.Lambda0):
            return abs(math.exp(2 * n * self.lambda0) - 1.0)
        return abs(math.exp(2 * n * self.lambda0) - (1 + n / (n + self.Lambda0)))

    def as_dict(self) -> dict:
        return attr.asdict(self)


@attr.s(kw_only=True)
class EstimateReport:
    params: PinchingParams = attr.ib()
    preservation: CheckRecord = attr.ib()
    decay: CheckRecord = attr.ib()
    cylindrical: list[CheckRecord] = attr.ib()
    gradient: list[CheckRecord] = attr.ib()
    gradient_a_priori: CheckRecord = attr.ib()
    gradient_crude: CheckRecord = attr.ib()
    hessian: CheckRecord = attr.ib()
    kato: CheckRecord = attr.ib()
    T_bound: CheckRecord = attr.ib()
    lp: CheckRecord = attr.ib()
    residual: CheckRecord = attr.ib()
    bounds: ClassCBounds = attr.ib()
    lambda0_variant: ClassCBounds = attr.ib()

    def checks(self) -> list[CheckRecord]:
        return [
            self.preservation,
            self.decay,
            *self.cylindrical,
            *self.gradient,
            self.gradient_a_priori,
            self.gradient_crude,
            self.hessian,
            self.kato,
            self.T_bound,
            self.lp,
            self.residual,
        ]

    def failures(self) -> list[CheckRecord]:
        return [check for check in self.checks() if check.passed is False]

    def as_dict(self) -> dict:
        return attr.asdict(self)


@attr.s(kw_only=True, frozen=True)
class FrontierPoint:
    eta: float = attr.ib()
    h_raw: float = attr.ib()
    h: float = attr.ib()


@attr.s(kw_only=True, frozen=True)
class ResidualField:
    t: float = attr.ib()
    eta: float = attr.ib()
    field: np.ndarray = attr.ib(eq=False)
    scale: float = attr.ib()

    @property
    def max_norm(self) -> float:
        return float(np.max(np.abs(self.field)))


@attr.s(kw_only=True, frozen=True)
class LpDecayRecord:
    p: float = attr.ib()
    sigma: float = attr.ib()
    eta: float = attr.ib()
    times: tuple[float, ...] = attr.ib()
    norms: tuple[float, ...] = attr.ib()
    fitted_rate: Optional[float] = attr.ib()
    bound_rate: float = attr.ib()
    C: float = attr.ib()
    satisfied: bool = attr.ib()
    vacuous: bool = attr.ib()

    def as_dict(self) -> dict:
        return attr.asdict(self)


@attr.s(kw_only=True, frozen=True)
class AncientRigidity:
    backward_limit: float = attr.ib()
    umbilicity_defect: float = attr.ib()
    verdict: Optional[bool] = attr.ib()

    def as_dict(self) -> dict:
        return attr.asdict(self)


def _fields(snap: Snapshot) -> tuple[np.ndarray, np.ndarray]:
    return snap.geometry.A_norm_sq, snap.geometry.H


def _sup(
    snapshots: Iterable[Snapshot], field: Callable[[Snapshot], np.ndarray]
) -> tuple[float, Optional[Witness]]:
    best, witness = -math.inf, None
    for snap in snapshots:
        values = np.asarray(field(snap), dtype=float)
        index = int(np.argmax(values))
        if values[index] > best:
            best, witness = float(values[index]), Witness(t=snap.t, index=index)
    return best, witness


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = numerator / denominator
    ratio = np.where(denominator > 0, ratio, np.where(numerator > 0, math.inf, 0.0))
    return ratio


def _initially_pinched(trace: FlowTrace, initial_max_g: float) -> bool:
    if trace.initial_in_class is not None:
        return trace.initial_in_class
    return initial_max_g <= 0


def _preservation(trace: FlowTrace, params: PinchingParams, tol: float) -> CheckRecord:
    n, m, alpha, K = params.n, params.m, params.alpha, params.K

    def g(snap):
        return g_m_alpha(*_fields(snap), n, m, alpha, K)

    first = trace.snapshots[0]
    initial, witness = _sup([first], g)
    if not _initially_pinched(trace, initial):
        record = CheckRecord.not_applicable(
            "preservation", f"initial data not pinched (max g={initial!r})"
        )
        record.value, record.witness = initial, witness
        return record
    # the tolerance only absorbs drift after t0
    worst, passed = initial, True
    for snap in trace.snapshots[1:]:
        values = g(snap)
        index = int(np.argmax(values))
        value = float(values[index])
        if value > tol * (snap.max_A_sq + K):
            passed = False
        if value > worst:
            worst, witness = value, Witness(t=snap.t, index=index)
    return CheckRecord(name="preservation", value=worst, witness=witness, passed=passed)


def _decay(trace: FlowTrace, params: PinchingParams, slack: float = DECAY_SLACK) -> CheckRecord:
    coeffs = coefficients(params, 0.0)
    K, delta = params.K, coeffs.delta
    times, ratios, witnesses = [], [], []
    for snap in trace.snapshots:
        A_sq, H = _fields(snap)
        numerator = f_eta(A_sq, H, params.n, params.m, 0.0)
        numerator = np.where(numerator > ROUNDOFF * A_sq, numerator, 0.0)
        values = numerator / W_array(H, coeffs, K)
        index = int(np.argmax(values))
        times.append(snap.t)
        ratios.append(float(values[index]))
        witnesses.append(Witness(t=snap.t, index=index))
    times_arr, ratios_arr = np.array(times), np.array(ratios)
    bound = ratios_arr[0] * np.exp(-4 * delta * K * (times_arr - times_arr[0]))
    excess = ratios_arr - bound * (1 + slack)
    worst = int(np.argmax(excess))
    positive = ratios_arr > 0
    fitted = None
    if np.count_nonzero(positive) >= 2:
        slope = np.polyfit(times_arr[positive], np.log(ratios_arr[positive]), 1)[0]
        fitted = float(slope / (delta * K))
    return CheckRecord(
        name="decay",
        value=float(np.max(ratios_arr)),
        witness=witnesses[worst],
        passed=bool(np.all(excess <= 0)),
        detail="" if np.any(positive) else "numerator nonpositive throughout",
        extra={
            "sup_ratio": ratios_arr.tolist(),
            "bound": bound.tolist(),
            "fitted_exponent_over_deltaK": fitted,
        },
    )


def smallest_C_eta(trace: FlowTrace, params: PinchingParams, eta: float) -> tuple[float, Witness]:
    """Smallest C with f_eta <= C K exp(-2 delta K t) on the whole trace."""
    coeffs = coefficients(params, eta)
    K, delta = params.K, coeffs.delta
    t0 = trace.snapshots[0].t

    def scaled(snap):
        A_sq, H = _fields(snap)
        return f_eta(A_sq, H, params.n, params.m, eta) * math.exp(2 * delta * K * (snap.t - t0)) / K

    value, witness = _sup(trace.snapshots, scaled)
    return max(value, 0.0), witness


def _cylindrical(trace: FlowTrace, params: PinchingParams, eta_list: Sequence[float]) -> list[CheckRecord]:
    records = []
    for eta in sorted(eta_list):
        C, witness = smallest_C_eta(trace, params, eta)
        records.append(
            CheckRecord(
                name=f"cylindrical[eta={eta!r}]",
                value=C,
                witness=witness,
                passed=math.isfinite(C),
                extra={"eta": eta},
            )
        )
    for lower, upper in zip(records, records[1:]):
        if upper.value > lower.value * (1 + MONOTONE_TOL) + MONOTONE_TOL:
            raise InvariantViolation(
                f"C_eta increased from {lower.value!r} to {upper.value!r} with eta"
            )
    return records


def _late(trace: FlowTrace, bounds: ClassCBounds) -> list[Snapshot]:
    start = trace.snapshots[0].t + bounds.lambda0 / trace.params.K
    return [snap for snap in trace.snapshots if snap.t >= start]


def _G0(A_sq: np.ndarray, H: np.ndarray, params: PinchingParams, C0: float) -> np.ndarray:
    return 2 * C0 * params.K + 3.0 / (params.n + 2) * np.square(H) - A_sq


def _gradient(
    trace: FlowTrace,
    params: PinchingParams,
    bounds: ClassCBounds,
    cylindrical: list[CheckRecord],
) -> list[CheckRecord]:
    late = _late(trace, bounds)
    K, n, m = params.K, params.n, params.m
    t0 = trace.snapshots[0].t
    records = []
    for record in cylindrical:
        eta = record.extra["eta"]
        coeffs = coefficients(params, eta)
        C_eta = max(record.value, 1e-12)

        def ratio(snap, eta=eta, C_eta=C_eta, coeffs=coeffs):
            A_sq, H = _fields(snap)
            decay = math.exp(-2 * coeffs.delta * K * (snap.t - t0))
            G_eta = 2 * C_eta * K * decay + (eta + 1.0 / (n - m + 1)) * np.square(H) - A_sq
            return _ratio(snap.geometry.grad_A_sq, G_eta * _G0(A_sq, H, params, coeffs.C0))

        value, witness = _sup(late, ratio)
        records.append(
            CheckRecord(
                name=f"gradient[eta={eta!r}]",
                value=value,
                witness=witness,
                passed=math.isfinite(value),
                extra={"eta": eta, "t_start": t0 + bounds.lambda0 / K},
            )
        )
    return records


def _gradient_a_priori(trace: FlowTrace, params: PinchingParams, bounds: ClassCBounds) -> CheckRecord:
    data = a_priori_coefficients(params)
    n, m, K = params.n, params.m, params.K

    def ratio(snap):
        A_sq, H = _fields(snap)
        G_a = 2 * data.C_eta * K + (data.eta + 1.0 / (n - m + 1)) * np.square(H) - A_sq
        return _ratio(snap.geometry.grad_A_sq, G_a * _G0(A_sq, H, params, data.C_eta))

    value, witness = _sup(_late(trace, bounds), ratio)
    return CheckRecord(
        name="gradient_a_priori", value=value, witness=witness, passed=math.isfinite(value)
    )


def _crude(trace: FlowTrace, bounds: ClassCBounds) -> tuple[CheckRecord, CheckRecord]:
    K = trace.params.K
    late = _late(trace, bounds)

    def gradient(snap):
        return snap.geometry.grad_A_sq / (snap.geometry.H**4 + K**2)

    def hessian(snap):
        return snap.geometry.hess_A_sq / (snap.geometry.H**6 + K**3)

    records = []
    for name, field in (("gradient_crude", gradient), ("hessian", hessian)):
        value, witness = _sup(late, field)
        records.append(
            CheckRecord(name=name, value=value, witness=witness, passed=math.isfinite(value))
        )
    return records[0], records[1]


def _kato(trace: FlowTrace, tol: float) -> CheckRecord:
    n = trace.params.n

    def deficit(snap):
        grad_H = snap.geometry.grad_H_sq
        floor = 1e-12 * (float(np.max(grad_H)) + 1e-300)
        ratio = np.where(grad_H > floor, snap.geometry.grad_A_sq / np.maximum(grad_H, floor), np.inf)
        return -(ratio - 3.0 / (n + 2))

    value, witness = _sup(trace.snapshots, deficit)
    margin = -value
    return CheckRecord(
        name="kato",
        value=margin,
        witness=witness,
        passed=margin >= -tol or math.isinf(margin),
    )


def _T_bound(trace: FlowTrace, bounds: ClassCBounds, tol: float) -> CheckRecord:
    terminal = trace.terminal
    if terminal is None or terminal.kind not in (
        TerminalEvent.EXTINCTION,
        TerminalEvent.SINGULARITY,
    ):
        return CheckRecord(
            name="T_bound", passed=True, detail="no singularity within the trace"
        )
    T_obs = terminal.t - trace.snapshots[0].t
    n, K = trace.params.n, trace.params.K
    return CheckRecord(
        name="T_bound",
        value=T_obs,
        passed=T_obs >= bounds.T_lower * (1 - tol),
        extra={
            "T_lower": bounds.T_lower,
            "exp_2nKT": math.exp(2 * n * K * T_obs),
            "one_plus_2n_over_Lambda0": 1 + 2 * n / bounds.Lambda0,
        },
    )


def _residual(trace: FlowTrace, eta: float) -> CheckRecord:
    if not trace.is_equivariant:
        return CheckRecord.not_applicable("residual", "not an equivariant trace")
    records = []
    for index in range(1, len(trace) - 1):
        try:
            residual = residual_f_eta(trace, index, eta)
        except NotApplicable:
            continue
        records.append((residual.max_norm / residual.scale, residual.t))
    if not records:
        return CheckRecord.not_applicable("residual", "no consecutive probe snapshots")
    worst, t = max(records)
    return CheckRecord(
        name="residual",
        value=worst,
        witness=Witness(t=t, index=-1),
        extra={"per_snapshot": [[t, value] for value, t in records]},
    )


def check_estimates(
    trace: FlowTrace,
    params: PinchingParams,
    eta_list: Sequence[float],
    theta_squared: bool = False,
    lp_p: float = 10.0,
    lp_sigma: float = 0.05,
    tol: float = TOLERANCE,
) -> EstimateReport:
    require_admissible(params)
    if not trace.snapshots:
        raise NotApplicable("Trace has no snapshots")
    coeffs = coefficients(params, 0.0)
    for eta in eta_list:
        if not 0 < eta < coeffs.eta0:
            raise RangeError(f"eta must lie in (0, {coeffs.eta0!r}), got {eta!r}")
    bounds = ClassCBounds.from_params(params, theta_squared)
    variant = ClassCBounds.from_params(params, not theta_squared)

    cylindrical = _cylindrical(trace, params, eta_list)
    if trace.has_derivatives:
        gradient = _gradient(trace, params, bounds, cylindrical)
        gradient_a_priori = _gradient_a_priori(trace, params, bounds)
        crude, hessian = _crude(trace, bounds)
        kato = _kato(trace, tol)
    else:
        reason = "trace carries no derivative norms"
        gradient = [CheckRecord.not_applicable("gradient", reason)]
        gradient_a_priori = CheckRecord.not_applicable("gradient_a_priori", reason)
        crude = CheckRecord.not_applicable("gradient_crude", reason)
        hessian = CheckRecord.not_applicable("hessian", reason)
        kato = CheckRecord.not_applicable("kato", reason)

    eta_lp = min(eta_list) if eta_list else 0.0
    try:
        lp_record = lp_decay(trace, lp_p, lp_sigma, eta_lp)
        lp = CheckRecord(
            name="lp",
            value=lp_record.fitted_rate,
            passed=lp_record.satisfied,
            detail="vacuous" if lp_record.vacuous else "",
            extra=lp_record.as_dict(),
        )
    except NotApplicable as exc:
        lp = CheckRecord.not_applicable("lp", str(exc))

    report = EstimateReport(
        params=params,
        preservation=_preservation(trace, params, tol),
        decay=_decay(trace, params),
        cylindrical=cylindrical,
        gradient=gradient,
        gradient_a_priori=gradient_a_priori,
        gradient_crude=crude,
        hessian=hessian,
        kato=kato,
        T_bound=_T_bound(trace, bounds, tol),
        lp=lp,
        residual=_residual(trace, eta_lp),
        bounds=bounds,
        lambda0_variant=variant,
    )
    if bounds.Lambda0 != variant.Lambda0:
        logger.info(
            "Lambda0 differs between Theta and Theta^2 readings: %s vs %s",
            bounds.Lambda0,
            variant.Lambda0,
        )
    for failure in report.failures():
        logger.info("Estimate check %s failed: value %s", failure.name, failure.value)
    return report


def convexity_frontier(trace: FlowTrace, eta_grid: Sequence[float]) -> list[FrontierPoint]:
    """Per eta, the smallest h with |H| >= h sqrt(K) implying lambda_1 >= -eta |H|."""
    root = math.sqrt(trace.params.K)
    etas = sorted(eta_grid)
    raw = []
    for eta in etas:
        h = 0.0
        for snap in trace.snapshots:
            abs_H = np.abs(snap.geometry.H)
            violating = snap.geometry.lambda_min < -eta * abs_H
            if np.any(violating):
                h = max(h, float(np.max(abs_H[violating])) / root)
        raw.append(h)
    # isotonic cleanup: nonincreasing in eta
    cleaned = np.maximum.accumulate(np.array(raw)[::-1])[::-1]
    return [
        FrontierPoint(eta=eta, h_raw=h_raw, h=float(h))
        for eta, h_raw, h in zip(etas, raw, cleaned)
    ]


def _time_derivative(values: Sequence[np.ndarray], times: Sequence[float]) -> np.ndarray:
    hm, hp = times[1] - times[0], times[2] - times[1]
    return (hm**2 * values[2] - hp**2 * values[0] + (hp**2 - hm**2) * values[1]) / (
        hm * hp * (hm + hp)
    )


def residual_f_eta(trace: FlowTrace, t_index: int, eta: float) -> ResidualField:
    """Discrete (d/dt - Laplacian) f_eta minus its evolution right-hand side."""
    if not trace.is_equivariant:
        raise NotApplicable("The f_eta residual needs an equivariant trace")
    if not 0 < t_index < len(trace) - 1:
        raise NotApplicable(f"Snapshot {t_index} has no neighbours on both sides")
    triple = trace.snapshots[t_index - 1 : t_index + 2]
    if len({snap.regrid_count for snap in triple}) != 1 or len(
        {len(snap.geometry) for snap in triple}
    ) != 1:
        raise NotApplicable("Snapshots are separated by a regrid")
    if len(triple[1].geometry) < 8:
        raise NotApplicable("Profile too coarse for the residual")
    params = trace.params
    n, m, K = params.n, params.m, params.K
    c = 1.0 / (n - m + 1) + eta
    values = [f_eta(*_fields(snap), n, m, eta) for snap in triple]
    dt = _time_derivative(values, [snap.t for snap in triple])
    state = equivariant_flow.state_from_snapshot(trace, triple[1])
    geometry = triple[1].geometry
    A_sq, H = _fields(triple[1])
    rhs = (
        2 * (A_sq + n * K) * values[1]
        - 4 * n * K * (A_sq - np.square(H) / n)
        - 2 * (geometry.grad_A_sq - c * geometry.grad_H_sq)
    )
    field = dt - equivariant_flow.laplacian(state, values[1]) - rhs
    return ResidualField(
        t=triple[1].t,
        eta=eta,
        field=field,
        scale=float(np.max((A_sq + K) ** 2)),
    )


def lp_decay(trace: FlowTrace, p: float, sigma: float, eta: float) -> LpDecayRecord:
    if not p > 1:
        raise RangeError(f"p must exceed 1, got {p!r}")
    if not 0 <= sigma < 1:
        raise RangeError(f"sigma must lie in [0, 1), got {sigma!r}")
    params = trace.params
    coeffs = coefficients(params, eta)
    K, delta = params.K, coeffs.delta
    t0 = trace.snapshots[0].t
    times, norms = [], []
    for snap in trace.snapshots:
        A_sq, H = _fields(snap)
        f_plus = np.maximum(
            math.exp(2 * delta * K * (snap.t - t0)) * f_sigma_eta_array(A_sq, H, coeffs, K, sigma),
            0.0,
        )
        times.append(snap.t)
        if not np.any(f_plus > 0):
            norms.append(0.0)
            continue
        if snap.geometry.area_weight is None:
            raise NotApplicable("Trace carries no area weights")
        state = equivariant_flow.state_from_snapshot(trace, snap)
        norms.append(equivariant_flow.integrate(state, f_plus**p))

    times_arr, norms_arr = np.array(times), np.array(norms)
    bound_rate = -delta * p * K
    if not np.any(norms_arr > 0):
        return LpDecayRecord(
            p=p, sigma=sigma, eta=eta, times=tuple(times), norms=tuple(norms),
            fitted_rate=None, bound_rate=bound_rate, C=0.0, satisfied=True, vacuous=True,
        )
    positive = norms_arr > 0
    fitted = None
    if np.count_nonzero(positive) >= 2:
        fitted = float(np.polyfit(times_arr[positive], np.log(norms_arr[positive]), 1)[0])
    envelope = norms_arr * np.exp(-bound_rate * (times_arr - t0))
    calibration = max(1, int(math.ceil(CALIBRATION_FRACTION * len(norms_arr))))
    C = float(np.max(envelope[:calibration]))
    satisfied = bool(np.all(envelope <= C * (1 + TOLERANCE)))
    return LpDecayRecord(
        p=p, sigma=sigma, eta=eta, times=tuple(times), norms=tuple(norms),
        fitted_rate=fitted, bound_rate=bound_rate, C=C, satisfied=satisfied, vacuous=False,
    )


def ancient_rigidity(
    trace: FlowTrace, params: PinchingParams, window: float = 0.1, tol: float = 1e-8
) -> AncientRigidity:
    """Backward pinching limit of an ancient trace and the umbilicity it forces."""
    n, K = params.n, params.K
    t_first, t_last = trace.snapshots[0].t, trace.snapshots[-1].t
    cutoff = t_first + window * (t_last - t_first)
    early = [snap for snap in trace.snapshots if snap.t <= cutoff]
    m_top = math.ceil(n / 2)

    def excess(snap):
        A_sq, H = _fields(snap)
        return A_sq - case_rhs(n, m_top, H, K)

    def defect(snap):
        A_sq, H = _fields(snap)
        return (A_sq - np.square(H) / n) / (A_sq + K)

    limit, _ = _sup(early, excess)
    umbilic, _ = _sup(trace.snapshots, defect)
    verdict = umbilic <= tol if limit < 0 else None
    return AncientRigidity(backward_limit=limit, umbilicity_defect=umbilic, verdict=verdict)
