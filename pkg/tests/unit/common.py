import math
import os

import numpy as np

from pinchflow.types import (
    FlowTrace,
    PinchingParams,
    PointGeometry,
    Snapshot,
    TerminalEvent,
    TraceKind,
)

SLOW = os.environ.get("PINCHFLOW_SLOW") == "1"

DEFAULT_PARAMS = PinchingParams(n=3, m=1, alpha=0.5)
N4_PARAMS = PinchingParams(n=4, m=2, alpha=0.5)


def sphere_curvature(rho: float, K: float = 1.0) -> float:
    root = math.sqrt(K)
    return root / math.tan(root * rho)


def clifford_curvatures(phi: float, K: float = 1.0) -> tuple[float, float]:
    """(curvature of the S^m factor directions, of the S^(n-m) directions)."""
    r, s = math.cos(phi), math.sin(phi)
    root = math.sqrt(K)
    return -root * s / r, root * r / s


def umbilic_snapshot(t: float, curvature: float, n: int, nodes: int = 1) -> Snapshot:
    value = np.full(nodes, curvature)
    return Snapshot(
        t=t,
        geometry=PointGeometry(
            kappa=value, lam_a=value, lam_b=value, multiplicities=(1, n - 1, 0)
        ),
    )


def synthetic_trace(
    times, max_A_sq, n=3, params=None, terminal=TerminalEvent.SINGULARITY, nodes=1
):
    """Umbilic trace whose max|A|^2 follows the given series."""
    params = params or DEFAULT_PARAMS
    trace = FlowTrace(kind=TraceKind.HYPERPARALLEL, params=params)
    for t, value in zip(times, max_A_sq):
        trace.append(umbilic_snapshot(float(t), math.sqrt(value / n), n, nodes))
    if terminal is not None:
        trace.finish(terminal, float(times[-1]))
    return trace


def blowup_series(T: float, exponent: float, count: int = 60, depth: float = 1e-5):
    """Times approaching T geometrically and max|A|^2 = (T - t)^(-exponent)."""
    remaining = T * np.geomspace(1.0, depth, count)
    times = T - remaining
    return times, remaining ** (-exponent)
