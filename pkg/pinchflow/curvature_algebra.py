"""Pointwise algebra of principal curvatures.

Everything here is a closed-form function of a curvature spectrum and the
pinching data; no discretization is involved. The array helpers
(``g_m_alpha``, ``f_eta`` and friends) accept numpy arrays of ``|A|²`` and
``H`` so the flow monitors can evaluate them on whole snapshots at once.
"""
from __future__ import annotations

import math
from typing import Optional, Union

import attr
import numpy as np

from pinchflow.exceptions import AdmissibilityError, DegenerateTorusError, RangeError
from pinchflow.types import Coefficients, PinchingParams, ShapeSpectrum

ArrayLike = Union[float, np.ndarray]


@attr.s(kw_only=True, frozen=True)
class SpectrumInvariants:
    H: float = attr.ib()
    A_norm_sq: float = attr.ib()
    lambda_min: float = attr.ib()


@attr.s(kw_only=True, frozen=True)
class PinchingReport:
    strict_margin: float = attr.ib()
    g_m_alpha: float = attr.ib()
    f_eta: float = attr.ib()
    f_m_eta: float = attr.ib()
    in_U: bool = attr.ib()
    g_m_alpha_k_squared: Optional[float] = attr.ib(default=None)

    def as_dict(self) -> dict:
        return attr.asdict(self)


@attr.s(kw_only=True, frozen=True)
class CliffordInvariants:
    A_norm_sq: float = attr.ib()
    H: float = attr.ib()
    excess: float = attr.ib()


@attr.s(kw_only=True, frozen=True)
class AprioriGradientData:
    eta: float = attr.ib()
    delta: float = attr.ib()
    C_eta: float = attr.ib()


def admissibility_threshold(n: int) -> float:
    return min(n / 2, 2 * (n - 1) / 3)


def is_admissible(n: int, m: int, alpha: float) -> bool:
    return m < alpha + admissibility_threshold(n)


def require_admissible(params: PinchingParams) -> None:
    n, m, alpha = params.n, params.m, params.alpha
    threshold = admissibility_threshold(n)
    if not is_admissible(n, m, alpha):
        raise AdmissibilityError(
            f"(n, m, alpha) = ({n}, {m}, {alpha!r}) is not admissible: "
            f"need m < alpha + min(n/2, 2(n-1)/3), but {m} >= {alpha!r} + {threshold!r}"
        )


def nonvacuous_cases(n: int) -> list[tuple[int, float]]:
    """Pairs (m, alpha_min): the uniform condition with index m is admissible
    exactly for alpha in (alpha_min, 1)."""
    threshold = admissibility_threshold(n)
    cases = []
    for m in range(1, math.ceil(n / 2) + 1):
        alpha_min = max(0.0, m - threshold)
        if alpha_min < 1:
            cases.append((m, alpha_min))
    return cases


def case_rhs(n: int, m: int, H: ArrayLike, K: float) -> ArrayLike:
    """Right-hand side of the strict quadratic pinching condition for (n, m)."""
    H_sq = np.square(H)
    if n == 2 and m == 1:
        return 0.75 * H_sq + 4.0 / 3.0 * K
    if n == 3 and m == 2:
        return 0.6 * H_sq + 8.0 / 3.0 * K
    if n >= 3 and m <= n // 2:
        return H_sq / (n - m) + 2 * m * K
    if n >= 4 and m == math.ceil(n / 2):
        return 2.0 / n * H_sq + n * K
    raise AdmissibilityError(f"(n, m) = ({n}, {m}) is outside the pinching case table")


def g_m_alpha(A_sq: ArrayLike, H: ArrayLike, n: int, m: int, alpha: float, K: float) -> ArrayLike:
    return A_sq - np.square(H) / (n - m + alpha) - 2 * (m - alpha) * K


def f_eta(A_sq: ArrayLike, H: ArrayLike, n: int, m: int, eta: float) -> ArrayLike:
    return A_sq - (1.0 / (n - m + 1) + eta) * np.square(H)


def f_m_eta(A_sq: ArrayLike, H: ArrayLike, n: int, m: int, eta: float) -> ArrayLike:
    # f_eta is this function at index m - 1
    return A_sq - np.square(H) / (n - m) - eta * np.square(H)


def invariants(spectrum: ShapeSpectrum) -> SpectrumInvariants:
    return SpectrumInvariants(
        H=spectrum.H, A_norm_sq=spectrum.A_norm_sq, lambda_min=spectrum.lambda_min
    )


def pinching_report(
    spectrum: ShapeSpectrum,
    params: PinchingParams,
    eta: float,
    include_k_squared: bool = False,
) -> PinchingReport:
    require_admissible(params)
    if eta < 0:
        raise RangeError(f"eta must be nonnegative, got {eta!r}")
    n, m, alpha, K = params.n, params.m, params.alpha, params.K
    if spectrum.n != n:
        raise RangeError(f"Spectrum has {spectrum.n} entries, expected n={n}")
    A_sq, H = spectrum.A_norm_sq, spectrum.H
    g_value = float(g_m_alpha(A_sq, H, n, m, alpha, K))
    f_lower = float(f_eta(A_sq, H, n, m, eta))
    k_squared = None
    if include_k_squared:
        k_squared = float(A_sq - H**2 / (n - m + alpha) - 2 * (m - alpha) * K**2)
    return PinchingReport(
        strict_margin=float(A_sq - case_rhs(n, m, H, K)),
        g_m_alpha=g_value,
        f_eta=f_lower,
        f_m_eta=float(f_m_eta(A_sq, H, n, m, eta)),
        in_U=bool(f_lower >= 0 >= g_value),
        g_m_alpha_k_squared=k_squared,
    )


def eta0(n: int, m: int, alpha: float) -> float:
    """Largest eta0 allowed by both linear constraints of the cylindrical estimate."""
    from_index = (n / 2 + alpha - m) / n
    from_kato = (1 - (n + 2) / (3 * (n - m + alpha))) / (n + (n + 2) / 3)
    return min(from_index, from_kato)


def coefficients(params: PinchingParams, eta: float) -> Coefficients:
    require_admissible(params)
    n, m, alpha = params.n, params.m, params.alpha
    largest = eta0(n, m, alpha)
    if largest <= 0:
        raise AdmissibilityError(
            f"No positive eta0 for (n, m, alpha) = ({n}, {m}, {alpha!r})"
        )
    if not 0 <= eta < largest:
        raise RangeError(f"eta must lie in [0, {largest!r}), got {eta!r}")
    a_m = 1.0 / (n - m + alpha)
    b_m = 2.0 * (m - alpha)
    return Coefficients(
        n=n,
        m=m,
        alpha=alpha,
        a_m=a_m,
        b_m=b_m,
        a=a_m - 1.0 / (n - m + 1) + largest - eta,
        b=b_m,
        eta=eta,
        eta0=largest,
        delta=n * largest,
        beta=0.5 * (3.0 / (n + 2) - 1.0 / (n - m + 1)),
        C0=2.0 * (m - alpha),
    )


def a_priori_coefficients(params: PinchingParams) -> AprioriGradientData:
    """Gradient-estimate data that needs no cylindrical estimate."""
    require_admissible(params)
    n, m, alpha = params.n, params.m, params.alpha
    return AprioriGradientData(
        eta=1.0 / (n - m + alpha) - 1.0 / (n - m + 1),
        delta=0.0,
        C_eta=2.0 * (m - alpha),
    )


def W_array(H: ArrayLike, coeffs: Coefficients, K: float) -> ArrayLike:
    return coeffs.a * np.square(H) + coeffs.b * K


def W_value(spectrum: ShapeSpectrum, coeffs: Coefficients, K: float) -> float:
    return float(W_array(spectrum.H, coeffs, K))


def f_sigma_eta_array(
    A_sq: ArrayLike, H: ArrayLike, coeffs: Coefficients, K: float, sigma: float
) -> ArrayLike:
    return f_eta(A_sq, H, coeffs.n, coeffs.m, coeffs.eta) * np.power(
        W_array(H, coeffs, K), sigma - 1
    )


def f_sigma_eta(
    spectrum: ShapeSpectrum, coeffs: Coefficients, K: float, sigma: float
) -> float:
    if not 0 <= sigma <= 1:
        raise RangeError(f"sigma must lie in [0, 1], got {sigma!r}")
    return float(f_sigma_eta_array(spectrum.A_norm_sq, spectrum.H, coeffs, K, sigma))


def simons_C_norm_sq(spectrum: ShapeSpectrum, K: float) -> float:
    lam = spectrum.lam
    diff = lam[None, :] - lam[:, None]
    prod = np.outer(lam, lam) + K
    return float(np.sum(diff**2 * prod**2))


def simons_rigidity(spectrum: ShapeSpectrum, K: float, tol: float = 1e-12) -> bool:
    """Minimal spectra with |A|² < nK must be totally geodesic."""
    scale = spectrum.A_norm_sq + K
    minimal = abs(spectrum.H) <= tol * math.sqrt(scale)
    if not (minimal and spectrum.A_norm_sq < spectrum.n * K):
        return True
    return spectrum.A_norm_sq <= tol * scale


def clifford_spectrum(n: int, m: int, r: float, K: float) -> ShapeSpectrum:
    """Spectrum of S^m(r) x S^(n-m)(s), oriented so that H > 0 when r² > m/n."""
    if not 0 < r < 1:
        raise DegenerateTorusError(f"Clifford radius must lie in (0, 1), got {r!r}")
    s = math.sqrt(1 - r * r)
    root_K = math.sqrt(K)
    return ShapeSpectrum.from_groups([-root_K * s / r, root_K * r / s], [m, n - m])


def clifford_closed_form(n: int, m: int, r: float, K: float) -> CliffordInvariants:
    if not 0 < r < 1:
        raise DegenerateTorusError(f"Clifford radius must lie in (0, 1), got {r!r}")
    r_sq = r * r
    s_sq = 1 - r_sq
    return CliffordInvariants(
        A_norm_sq=(m * s_sq**2 + (n - m) * r_sq**2) / (r_sq * s_sq) * K,
        H=((n - m) * r_sq - m * s_sq) / (r * math.sqrt(s_sq)) * math.sqrt(K),
        excess=m * (n - 2 * m) / (n - m) * s_sq / r_sq * K,
    )
