"""Empirical lower bound for (|C|^2 + 1) / W^3 on the pinching constraint set.

K is fixed to 1 throughout; every quantity scales homogeneously, so the
bound at other curvatures follows by rescaling. The search is a multistart
SLSQP minimization whose starting points cover the degenerate directions
along which the ratio can approach zero: random spectra, near-Clifford
two-group spectra, and spectra with several near-zero entries.
"""
from __future__ import annotations

import logging
import math
from typing import Optional

import attr
import numpy as np
from scipy.optimize import minimize

from pinchflow.batch import run_batch
from pinchflow.curvature_algebra import (
    eta0,
    f_eta,
    g_m_alpha,
    require_admissible,
    simons_C_norm_sq,
)
from pinchflow.exceptions import NotApplicable, RangeError
from pinchflow.types import PinchingParams, ShapeSpectrum

logger = logging.getLogger(__name__)

LABEL = "empirical lower-bound estimate"
FEASIBILITY_TOL = 1e-9
RAY_SAMPLES = (10.0, 1e2, 1e3)
START_KINDS = ("random", "clifford", "zeros")


@attr.s(kw_only=True, frozen=True)
class RaySample:
    t: float = attr.ib()
    W: float = attr.ib()
    C_norm_sq: float = attr.ib()
    ratio: float = attr.ib()
    normalized: tuple[float, ...] = attr.ib()
    g_rescaled: float = attr.ib()


@attr.s(kw_only=True)
class GammaCertificate:
    n: int = attr.ib()
    m: int = attr.ib()
    alpha: float = attr.ib()
    eta: float = attr.ib()
    gamma_hat: Optional[float] = attr.ib()
    minimizer: Optional[tuple[float, ...]] = attr.ib()
    start_index: Optional[int] = attr.ib()
    budget: int = attr.ib()
    seed: int = attr.ib()
    feasible_starts: int = attr.ib()
    unconstrained_ray: list[RaySample] = attr.ib(factory=list)
    label: str = attr.ib(default=LABEL)

    @property
    def feasible(self) -> bool:
        return self.gamma_hat is not None

    def as_dict(self) -> dict:
        return attr.asdict(self)


@attr.s(kw_only=True, frozen=True)
class GapRow:
    ell: int = attr.ib()
    f_margin: float = attr.ib()
    g_margin: float = attr.ib()

    @property
    def both_hold(self) -> bool:
        return self.f_margin >= 0 and self.g_margin >= 0


@attr.s(kw_only=True, frozen=True)
class GapVerdict:
    passed: bool = attr.ib()
    rows: tuple[GapRow, ...] = attr.ib()

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "rows": [dict(attr.asdict(row), both_hold=row.both_hold) for row in self.rows],
        }


def eta_ceiling(params: PinchingParams) -> float:
    n, m, alpha = params.n, params.m, params.alpha
    return 1.0 / (n - m + alpha) - 1.0 / (n - m + 1)


def _check(params: PinchingParams, eta: float) -> None:
    require_admissible(params)
    if params.n == 2:
        raise NotApplicable("The Poincare-type bound is only verified for n >= 3")
    ceiling = eta_ceiling(params)
    if not 0 < eta < ceiling:
        raise RangeError(f"eta must lie in (0, {ceiling!r}), got {eta!r}")


def weight(lam: np.ndarray, params: PinchingParams, eta: float) -> float:
    """W = a H^2 + b with the cylindrical-estimate weights at K = 1."""
    n, m, alpha = params.n, params.m, params.alpha
    a = 1.0 / (n - m + alpha) - 1.0 / (n - m + 1) + eta0(n, m, alpha) - eta
    b = 2.0 * (m - alpha)
    return a * float(np.sum(lam)) ** 2 + b


def ratio(lam: np.ndarray, params: PinchingParams, eta: float) -> float:
    C_sq = simons_C_norm_sq(ShapeSpectrum(lam=lam), 1.0)
    return (C_sq + 1.0) / weight(lam, params, eta) ** 3


def _constraints(lam: np.ndarray, params: PinchingParams, eta: float) -> np.ndarray:
    n, m, alpha = params.n, params.m, params.alpha
    A_sq, H = float(np.sum(lam**2)), float(np.sum(lam))
    scale = A_sq + 1.0
    return np.array(
        [
            f_eta(A_sq, H, n, m, eta) / scale,
            -g_m_alpha(A_sq, H, n, m, alpha, 1.0) / scale,
        ]
    )


def is_feasible(lam: np.ndarray, params: PinchingParams, eta: float) -> bool:
    return bool(np.all(_constraints(np.asarray(lam, dtype=float), params, eta) >= -FEASIBILITY_TOL))


def starting_points(params: PinchingParams, budget: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    n, m = params.n, params.m
    starts = []
    for index in range(budget):
        kind = START_KINDS[index % len(START_KINDS)]
        if kind == "random":
            start = rng.normal(size=n) * 10 ** rng.uniform(-1, 2)
        elif kind == "clifford":
            t = 10 ** rng.uniform(-0.5, 1.5)
            start = np.concatenate([np.full(m, t), np.full(n - m, -1.0 / t)])
            start = start * (1 + 0.05 * rng.normal(size=n))
        else:
            ell = int(rng.integers(0, n))
            kappa = 10 ** rng.uniform(0, 2)
            start = np.concatenate(
                [1e-3 * rng.normal(size=ell), kappa * (1 + 0.05 * rng.normal(size=n - ell))]
            )
        starts.append(start)
    return starts


def _descend(start: np.ndarray, params: PinchingParams, eta: float) -> Optional[tuple[float, np.ndarray]]:
    def objective(lam):
        C_sq = simons_C_norm_sq(ShapeSpectrum(lam=lam), 1.0)
        return math.log1p(C_sq) - 3 * math.log(weight(lam, params, eta))

    result = minimize(
        objective,
        start,
        method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda lam: _constraints(lam, params, eta)}],
        options={"maxiter": 500, "ftol": 1e-12},
    )
    candidates = [np.asarray(result.x, dtype=float), start]
    best = None
    for lam in candidates:
        if not np.all(np.isfinite(lam)) or not is_feasible(lam, params, eta):
            continue
        value = ratio(lam, params, eta)
        if best is None or value < best[0]:
            best = (value, np.sort(lam))
    return best


def min_ratio(
    params: PinchingParams,
    eta: float,
    budget: int = 60,
    seed: int = 0,
    workers: int = 1,
) -> GammaCertificate:
    _check(params, eta)
    if budget < 1:
        raise RangeError(f"Search budget must be positive, got {budget}")
    starts = starting_points(params, budget, seed)
    jobs = [lambda start=start: _descend(start, params, eta) for start in starts]
    results = run_batch(jobs, workers=workers, names=[f"start-{i}" for i in range(budget)])

    best_value, best_lam, best_index, feasible = None, None, None, 0
    for result in results:
        if result.failed or result.value is None:
            continue
        feasible += 1
        value, lam = result.value
        # ties go to the lower start index so the merge ignores worker count
        if best_value is None or value < best_value:
            best_value, best_lam, best_index = value, lam, result.index
    if best_value is None:
        logger.warning(
            "No feasible point found for (n, m, alpha, eta) = (%s, %s, %s, %s)",
            params.n,
            params.m,
            params.alpha,
            eta,
        )
    else:
        logger.info("gamma_hat = %s from start %s (%d feasible)", best_value, best_index, feasible)
    return GammaCertificate(
        n=params.n,
        m=params.m,
        alpha=params.alpha,
        eta=eta,
        gamma_hat=best_value,
        minimizer=None if best_lam is None else tuple(best_lam.tolist()),
        start_index=best_index,
        budget=budget,
        seed=seed,
        feasible_starts=feasible,
        unconstrained_ray=clifford_ray_witness(params, eta),
    )


def clifford_ray_witness(params: PinchingParams, eta: Optional[float] = None) -> list[RaySample]:
    """Ratio along (t,...,t, -1/t,...,-1/t), where |C| vanishes identically."""
    require_admissible(params)
    n, m, alpha = params.n, params.m, params.alpha
    eta = eta if eta is not None else 0.5 * eta_ceiling(params)
    samples = []
    for t in RAY_SAMPLES:
        lam = np.concatenate([np.full(m, t), np.full(n - m, -1.0 / t)])
        W = weight(lam, params, eta)
        C_sq = simons_C_norm_sq(ShapeSpectrum(lam=lam), 1.0)
        r = W**-0.5
        rescaled = r * lam
        g_rescaled = float(
            g_m_alpha(float(np.sum(rescaled**2)), float(np.sum(rescaled)), n, m, alpha, r * r)
        )
        samples.append(
            RaySample(
                t=t,
                W=W,
                C_norm_sq=C_sq,
                ratio=(C_sq + 1) / W**3,
                normalized=tuple((np.sort(lam)[::-1] / np.linalg.norm(lam)).tolist()),
                g_rescaled=g_rescaled,
            )
        )
    return samples


def multiplicity_gap_check(params: PinchingParams, eta: float) -> GapVerdict:
    """Limit spectra with ell zeros and n - ell equal entries cannot lie in the constraint set."""
    require_admissible(params)
    if not eta > 0:
        raise RangeError(f"eta must be positive, got {eta!r}")
    n, m, alpha = params.n, params.m, params.alpha
    rows = []
    for ell in range(n):
        k = n - ell
        # normalized so that |lambda| = 1; K drops out in the limit
        rows.append(
            GapRow(
                ell=ell,
                f_margin=1.0 - (1.0 / (n - m + 1) + eta) * k,
                g_margin=k / (n - m + alpha) - 1.0,
            )
        )
    passed = not any(row.both_hold for row in rows)
    if not passed:
        logger.error("Multiplicity gap violated for (n, m, alpha) = (%s, %s, %s)", n, m, alpha)
    return GapVerdict(passed=passed, rows=tuple(rows))
