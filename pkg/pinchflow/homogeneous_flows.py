"""Exact ODE reductions of the flow for geodesic spheres and Clifford tori.

Geodesic spheres of radius rho about a pole are umbilic with principal
curvature sqrt(K) cot(sqrt(K) rho) (inner normal), so the flow reduces to

    d rho / dt = -n sqrt(K) cot(sqrt(K) rho),

with the closed form cos(sqrt(K) rho(t)) = cos(sqrt(K) rho0) exp(n K t).
Clifford tori S^m(r) x S^(n-m)(s), r = cos(phi), s = sin(phi), move by
d phi / dt = -sqrt(K) H(phi).
"""
from __future__ import annotations

import logging
import math
from typing import Callable, Optional

import attr
import numpy as np
from scipy.integrate import solve_ivp

from pinchflow.exceptions import RangeError
from pinchflow.types import (
    FlowTrace,
    PinchingParams,
    PointGeometry,
    Snapshot,
    SymmetryType,
    TerminalEvent,
    TraceKind,
)

logger = logging.getLogger(__name__)

RTOL = 1e-10
ATOL = 1e-13
# closed-form takeover once sqrt(K) rho (or its antipodal distance) drops below this
ASYMPTOTIC_SWITCH = 1e-4
TAIL_SNAPSHOTS = 12
COLLAPSE_ANGLE = 1e-4
STATIONARY_TOL = 1e-14


@attr.s(kw_only=True, frozen=True)
class ExtinctionRecord:
    extinct: bool = attr.ib()
    T: Optional[float] = attr.ib(default=None)
    T_closed_form: float = attr.ib()
    antipodal: bool = attr.ib(default=False)

    def as_dict(self) -> dict:
        return attr.asdict(self)


def hyperparallel_extinction_time(rho0: float, n: int, K: float) -> float:
    cos0 = abs(math.cos(math.sqrt(K) * rho0))
    if cos0 == 0.0:
        return math.inf
    return -math.log(cos0) / (n * K)


def hyperparallel_radius(rho0: float, n: int, K: float, t: float) -> float:
    root = math.sqrt(K)
    return math.acos(math.cos(root * rho0) * math.exp(n * K * t)) / root


def umbilic_geometry(curvature: float, n: int) -> PointGeometry:
    value = np.array([curvature])
    return PointGeometry(
        kappa=value, lam_a=value, lam_b=value, multiplicities=(1, n - 1, 0)
    )


def _hyperparallel_snapshot(rho: float, t: float, n: int, K: float) -> Snapshot:
    root = math.sqrt(K)
    curvature = root / math.tan(root * rho)
    return Snapshot(t=t, geometry=umbilic_geometry(curvature, n), scalar_state=rho)


def _terminal(func: Callable) -> Callable:
    func.terminal = True  # type: ignore[attr-defined]
    return func


def _sample_times(t_start: float, t_end: float, cadence: float) -> np.ndarray:
    count = max(int(math.floor((t_end - t_start) / cadence + 1e-9)), 1)
    times = t_start + cadence * np.arange(count + 1)
    times = times[times <= t_end]
    if times[-1] < t_end:
        times = np.append(times, t_end)
    return times


def hyperparallel_flow(
    rho0: float,
    params: PinchingParams,
    horizon: float,
    cadence: Optional[float] = None,
    t0: float = 0.0,
) -> tuple[FlowTrace, ExtinctionRecord]:
    n, K = params.n, params.K
    root = math.sqrt(K)
    if not 0 < rho0 < math.pi / root:
        raise RangeError(f"rho0 must lie in (0, pi/sqrt(K)), got {rho0!r}")
    cadence = cadence or horizon / 200
    trace = FlowTrace(kind=TraceKind.HYPERPARALLEL, params=params)
    T_closed = t0 + hyperparallel_extinction_time(rho0, n, K)

    if abs(math.cos(root * rho0)) <= STATIONARY_TOL:
        for t in _sample_times(t0, t0 + horizon, cadence):
            trace.append(_hyperparallel_snapshot(math.pi / (2 * root), float(t), n, K))
        trace.finish(TerminalEvent.HORIZON, t0 + horizon, "stationary hyperequator")
        return trace, ExtinctionRecord(extinct=False, T_closed_form=math.inf)

    def rhs(t, y):
        return [-n * root / math.tan(root * y[0])]

    @_terminal
    def near_pole(t, y):
        return root * y[0] - ASYMPTOTIC_SWITCH

    @_terminal
    def near_antipode(t, y):
        return math.pi - root * y[0] - ASYMPTOTIC_SWITCH

    solution = solve_ivp(
        rhs,
        (t0, t0 + horizon),
        [rho0],
        method="DOP853",
        rtol=RTOL,
        atol=ATOL,
        dense_output=True,
        events=[near_pole, near_antipode],
    )
    t_last = float(solution.t[-1])
    for t in _sample_times(t0, t_last, cadence):
        rho = float(solution.sol(t)[0])
        trace.append(_hyperparallel_snapshot(rho, float(t), n, K))

    if solution.status != 1:
        trace.finish(TerminalEvent.HORIZON, t_last)
        logger.info("Hyperparallel flow reached horizon at t=%s", t_last)
        return trace, ExtinctionRecord(extinct=False, T_closed_form=T_closed)

    rho_e = float(solution.y[0, -1])
    antipodal = bool(len(solution.t_events[1]))
    remaining = -math.log(abs(math.cos(root * rho_e))) / (n * K)
    T = t_last + remaining
    for j in range(1, TAIL_SNAPSHOTS + 1):
        tau = remaining * 2.0**-j
        # |cos(sqrt(K) rho)| = exp(-n K tau), written through expm1 for tiny tau
        near = 2 * math.asin(math.sqrt(-math.expm1(-n * K * tau) / 2)) / root
        rho = math.pi / root - near if antipodal else near
        trace.append(_hyperparallel_snapshot(rho, T - tau, n, K))
    detail = "antipodal collapse" if antipodal else "collapse at the pole"
    trace.finish(TerminalEvent.EXTINCTION, T, detail)
    logger.info("Hyperparallel extinction at T=%s (%s)", T, detail)
    return trace, ExtinctionRecord(
        extinct=True, T=T, T_closed_form=T_closed, antipodal=antipodal
    )


def ancient_hyperparallel(
    params: PinchingParams,
    t_min: float,
    rho_start: Optional[float] = None,
    cadence: Optional[float] = None,
    equator_tol: float = 1e-12,
) -> FlowTrace:
    """Integrate backwards from rho_start (default slightly inside the equator)."""
    if not t_min < 0:
        raise RangeError(f"t_min must be negative, got {t_min!r}")
    n, K = params.n, params.K
    root = math.sqrt(K)
    equator = math.pi / (2 * root)
    rho_start = rho_start if rho_start is not None else 0.45 * math.pi / root
    if not 0 < rho_start < equator:
        raise RangeError(f"rho_start must lie inside the equator, got {rho_start!r}")
    cadence = cadence or -t_min / 200

    def rhs(t, y):
        return [-n * root / math.tan(root * y[0])]

    @_terminal
    def at_equator(t, y):
        return equator - y[0] - equator_tol / root

    solution = solve_ivp(
        rhs,
        (0.0, t_min),
        [rho_start],
        method="DOP853",
        rtol=RTOL,
        atol=ATOL,
        dense_output=True,
        events=[at_equator],
    )
    t_first = float(solution.t[-1])
    trace = FlowTrace(kind=TraceKind.HYPERPARALLEL, params=params)
    times = _sample_times(t_first, 0.0, cadence)
    for t in times:
        rho = float(solution.sol(t)[0])
        trace.append(_hyperparallel_snapshot(rho, float(t), n, K))
    if solution.status == 1:
        trace.finish(TerminalEvent.EQUATOR, t_first, "reached the hyperequator")
        logger.info("Ancient trace reached the hyperequator at t=%s", t_first)
    else:
        trace.finish(TerminalEvent.HORIZON, t_first, "backward horizon")
    return trace


def immortal_equator_check(trace: FlowTrace, tol: float = 1e-12) -> bool:
    if trace.terminal is None or trace.terminal.kind != TerminalEvent.HORIZON:
        return False
    K = trace.params.K
    return all(
        float(np.max(np.abs(snap.geometry.H))) <= tol * math.sqrt(K)
        for snap in trace.snapshots
    )


def clifford_H(phi: float, n: int, m: int, K: float) -> float:
    c, s = math.cos(phi), math.sin(phi)
    return math.sqrt(K) * ((n - m) * c * c - m * s * s) / (c * s)


def clifford_rhs(n: int, m: int, K: float) -> Callable:
    root = math.sqrt(K)

    def rhs(t, y):
        return [-root * clifford_H(y[0], n, m, K)]

    return rhs


def minimal_clifford_angle(n: int, m: int) -> float:
    return math.acos(math.sqrt(m / n))


def clifford_linearization(params: PinchingParams, step: float = 1e-6) -> float:
    """Derivative of the Clifford ODE right-hand side at the minimal torus."""
    phi_star = minimal_clifford_angle(params.n, params.m)
    rhs = clifford_rhs(params.n, params.m, params.K)
    return (rhs(0, [phi_star + step])[0] - rhs(0, [phi_star - step])[0]) / (2 * step)


def _clifford_snapshot(phi: float, t: float, n: int, m: int, K: float) -> Snapshot:
    r, s = math.cos(phi), math.sin(phi)
    root = math.sqrt(K)
    outer = root * r / s
    geometry = PointGeometry(
        kappa=np.array([outer]),
        lam_a=np.array([-root * s / r]),
        lam_b=np.array([outer]),
        multiplicities=(1, m, n - m - 1),
    )
    return Snapshot(t=t, geometry=geometry, scalar_state=phi)


def clifford_flow(
    params: PinchingParams,
    phi0: float,
    horizon: float,
    cadence: Optional[float] = None,
    t0: float = 0.0,
) -> FlowTrace:
    n, m, K = params.n, params.m, params.K
    if not 0 < phi0 < math.pi / 2:
        raise RangeError(f"phi0 must lie in (0, pi/2), got {phi0!r}")
    cadence = cadence or horizon / 200
    trace = FlowTrace(
        kind=TraceKind.CLIFFORD, params=params, sym=SymmetryType(p=m + 1, q=n - m)
    )
    if abs(clifford_H(phi0, n, m, K)) <= STATIONARY_TOL * math.sqrt(K):
        for t in _sample_times(t0, t0 + horizon, cadence):
            trace.append(_clifford_snapshot(phi0, float(t), n, m, K))
        trace.finish(TerminalEvent.HORIZON, t0 + horizon, "minimal Clifford torus")
        return trace

    @_terminal
    def s_collapse(t, y):
        return y[0] - COLLAPSE_ANGLE

    @_terminal
    def r_collapse(t, y):
        return math.pi / 2 - y[0] - COLLAPSE_ANGLE

    solution = solve_ivp(
        clifford_rhs(n, m, K),
        (t0, t0 + horizon),
        [phi0],
        method="DOP853",
        rtol=RTOL,
        atol=ATOL,
        dense_output=True,
        events=[s_collapse, r_collapse],
    )
    t_last = float(solution.t[-1])
    for t in _sample_times(t0, t_last, cadence):
        trace.append(_clifford_snapshot(float(solution.sol(t)[0]), float(t), n, m, K))
    if solution.status == 1:
        factor = f"S^{n - m}(s)" if len(solution.t_events[0]) else f"S^{m}(r)"
        trace.finish(TerminalEvent.DEGENERATE, t_last, f"{factor} factor collapsed")
        logger.info("Clifford torus degenerates at t=%s: %s collapsed", t_last, factor)
    else:
        trace.finish(TerminalEvent.HORIZON, t_last)
    return trace
