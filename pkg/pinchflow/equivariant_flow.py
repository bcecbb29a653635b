"""Cohomogeneity-one flow of SO(p) x SO(q)-invariant hypersurfaces.

Split R^(n+2) = R^p x R^q x R and write points of the ambient sphere of
radius R = K^(-1/2) as (a u, b v, z) with u, v unit vectors. A profile curve
(a, b, z) in the orbit space {a^2 + b^2 + z^2 = R^2, a, b >= 0} generates an
invariant hypersurface; a block of size one has no rotation, so its
coordinate is signed and carries no axis.

The profile is stored as nodes in R^3. With T the unit tangent and
N = orientation * (P/R x T) the unit normal inside the orbit sphere, the
principal curvatures are

    kappa = <P'', N>,  lam_a = -N_a / a,  lam_b = -N_b / b,

and the flow moves each node with velocity H N. At an axis endpoint the
rotational curvature of the collapsing block equals kappa.
"""
from __future__ import annotations

import logging
import math
from typing import Optional, Union

import attr
import numpy as np
from attr.validators import in_, instance_of
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline
from scipy.special import gamma

from pinchflow.curvature_algebra import g_m_alpha, require_admissible
from pinchflow.exceptions import (
    ConstructionError,
    InvariantViolation,
    NotApplicable,
    ResolutionError,
    SingularityEvent,
)
from pinchflow.types import (
    FlowTrace,
    PinchingParams,
    PointGeometry,
    Snapshot,
    SymmetryType,
    TerminalEvent,
    Topology,
    TraceKind,
)

logger = logging.getLogger(__name__)

A_AXIS = "a"
B_AXIS = "b"
SPHERE_TOL = 1e-10
SPACING_DRIFT = 0.05
AXIS_RESIDUAL_TOL = 0.1
EXTINCTION_RATIO = 0.25


class DescriptorKind:
    GEODESIC_SPHERE = "geodesic_sphere"
    CLIFFORD_BAND = "clifford_band"
    DUMBBELL = "dumbbell"


class Monitor:
    ARCLENGTH = "arclength"
    CURVATURE = "curvature"


@attr.s(kw_only=True, frozen=True)
class GeodesicSphere:
    kind = DescriptorKind.GEODESIC_SPHERE
    rho0: float = attr.ib(validator=instance_of((float, int)))


@attr.s(kw_only=True, frozen=True)
class CliffordBand:
    kind = DescriptorKind.CLIFFORD_BAND
    phi0: float = attr.ib(validator=instance_of((float, int)))
    amplitude: float = attr.ib(default=0.0, validator=instance_of((float, int)))
    mode: int = attr.ib(default=2, validator=instance_of(int))


@attr.s(kw_only=True, frozen=True)
class Dumbbell:
    kind = DescriptorKind.DUMBBELL
    neck_ratio: float = attr.ib(validator=instance_of((float, int)))
    bulge_ratio: float = attr.ib(validator=instance_of((float, int)))
    neck_width: float = attr.ib(default=0.5, validator=instance_of((float, int)))


Descriptor = Union[GeodesicSphere, CliffordBand, Dumbbell]


@attr.s(kw_only=True, frozen=True)
class DtPolicy:
    c_cfl: float = attr.ib(default=0.25)
    c_cur: float = attr.ib(default=0.02)
    dt_max: float = attr.ib(default=1e-3)
    dt_min: float = attr.ib(default=1e-14)


@attr.s(kw_only=True, frozen=True)
class ClassCVerdict:
    V_measured: float = attr.ib()
    Theta_measured: float = attr.ib()
    max_g: float = attr.ib()
    in_class: bool = attr.ib()

    def as_dict(self) -> dict:
        return attr.asdict(self)


@attr.s(kw_only=True, eq=False)
class FlowState:
    sym: SymmetryType = attr.ib(validator=instance_of(SymmetryType))
    params: PinchingParams = attr.ib(validator=instance_of(PinchingParams))
    points: np.ndarray = attr.ib()
    t: float = attr.ib(default=0.0)
    topology: str = attr.ib(
        default=Topology.AXIS_TO_AXIS,
        validator=in_([Topology.AXIS_TO_AXIS, Topology.CLOSED_LOOP]),
    )
    ends: Optional[tuple[str, str]] = attr.ib(default=None)
    orientation: int = attr.ib(default=1, validator=in_([1, -1]))
    monitor: str = attr.ib(
        default=Monitor.ARCLENGTH, validator=in_([Monitor.ARCLENGTH, Monitor.CURVATURE])
    )
    monitor_scale: float = attr.ib(default=10.0)
    regrid_count: int = attr.ib(default=0)
    class_c: Optional[ClassCVerdict] = attr.ib(default=None)

    @property
    def R(self) -> float:
        return 1.0 / math.sqrt(self.params.K)

    @property
    def is_loop(self) -> bool:
        return self.topology == Topology.CLOSED_LOOP

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def segment_lengths(self) -> np.ndarray:
        pts = self.points
        if self.is_loop:
            pts = np.vstack([pts, pts[:1]])
        return _geodesic_distance(pts[:-1], pts[1:], self.R)

    @property
    def h(self) -> float:
        return float(np.mean(self.segment_lengths()))

    @property
    def sigma(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths())])[: len(self)]

    def with_points(self, points: np.ndarray, **changes) -> FlowState:
        return attr.evolve(self, points=points, **changes)


def orbit_volume(k: int) -> float:
    """Volume of the unit k-sphere."""
    return 2 * math.pi ** ((k + 1) / 2) / gamma((k + 1) / 2)


def _geodesic_distance(p: np.ndarray, q: np.ndarray, R: float) -> np.ndarray:
    chord = np.linalg.norm(q - p, axis=-1)
    return 2 * R * np.arcsin(np.clip(chord / (2 * R), 0.0, 1.0))


def _axis_index(axis: str) -> int:
    return 0 if axis == A_AXIS else 1


def _reflect(point: np.ndarray, axis: str) -> np.ndarray:
    mirrored = point.copy()
    mirrored[_axis_index(axis)] *= -1
    return mirrored


def _extend(state: FlowState, points: Optional[np.ndarray] = None) -> np.ndarray:
    pts = state.points if points is None else points
    if state.is_loop:
        return np.vstack([pts[-1:], pts, pts[:1]])
    first = _reflect(pts[1], state.ends[0])
    last = _reflect(pts[-2], state.ends[1])
    return np.vstack([first, pts, last])


def _extend_scalar(state: FlowState, values: np.ndarray) -> np.ndarray:
    if state.is_loop:
        return np.concatenate([values[-1:], values, values[:1]])
    return np.concatenate([values[1:2], values, values[-2:-1]])


def _d1(ext: np.ndarray, hm: np.ndarray, hp: np.ndarray) -> np.ndarray:
    fm, f0, fp = ext[:-2], ext[1:-1], ext[2:]
    denom = hm * hp * (hm + hp)
    if ext.ndim == 2:
        hm, hp, denom = hm[:, None], hp[:, None], denom[:, None]
    return (hm**2 * fp - hp**2 * fm + (hp**2 - hm**2) * f0) / denom


def _d2(ext: np.ndarray, hm: np.ndarray, hp: np.ndarray) -> np.ndarray:
    fm, f0, fp = ext[:-2], ext[1:-1], ext[2:]
    denom = hm * hp * (hm + hp)
    if ext.ndim == 2:
        hm, hp, denom = hm[:, None], hp[:, None], denom[:, None]
    return 2 * (hm * fp - (hm + hp) * f0 + hp * fm) / denom


@attr.s(kw_only=True, eq=False)
class _Frame:
    T: np.ndarray = attr.ib()
    N: np.ndarray = attr.ib()
    kappa: np.ndarray = attr.ib()
    lam_a: np.ndarray = attr.ib()
    lam_b: np.ndarray = attr.ib()
    hm: np.ndarray = attr.ib()
    hp: np.ndarray = attr.ib()
    a_end: np.ndarray = attr.ib()
    b_end: np.ndarray = attr.ib()

    def H(self, sym: SymmetryType) -> np.ndarray:
        return self.kappa + (sym.p - 1) * self.lam_a + (sym.q - 1) * self.lam_b

    def A_sq(self, sym: SymmetryType) -> np.ndarray:
        return (
            self.kappa**2 + (sym.p - 1) * self.lam_a**2 + (sym.q - 1) * self.lam_b**2
        )


def _end_masks(state: FlowState) -> tuple[np.ndarray, np.ndarray]:
    size = len(state)
    a_end = np.zeros(size, dtype=bool)
    b_end = np.zeros(size, dtype=bool)
    if not state.is_loop:
        for index, axis in ((0, state.ends[0]), (size - 1, state.ends[1])):
            (a_end if axis == A_AXIS else b_end)[index] = True
    return a_end, b_end


def _rotational(
    normal: np.ndarray, coord: np.ndarray, kappa: np.ndarray, on_axis: np.ndarray, block: int
) -> np.ndarray:
    if block == 1:
        return np.zeros_like(kappa)
    safe = np.where(on_axis, 1.0, coord)
    return np.where(on_axis, kappa, -normal / safe)


def _frame(state: FlowState, points: Optional[np.ndarray] = None) -> _Frame:
    pts = state.points if points is None else points
    ext = _extend(state, pts)
    spacing = _geodesic_distance(ext[:-1], ext[1:], state.R)
    if np.any(spacing <= 0):
        raise InvariantViolation("Coincident profile nodes", state)
    hm, hp = spacing[:-1], spacing[1:]
    first = _d1(ext, hm, hp)
    second = _d2(ext, hm, hp)
    radial = pts / state.R
    tangent = first - np.sum(first * radial, axis=1)[:, None] * radial
    tangent /= np.linalg.norm(tangent, axis=1)[:, None]
    normal = state.orientation * np.cross(radial, tangent)
    kappa = np.sum(second * normal, axis=1)
    a_end, b_end = _end_masks(state)
    lam_a = _rotational(normal[:, 0], pts[:, 0], kappa, a_end, state.sym.p)
    lam_b = _rotational(normal[:, 1], pts[:, 1], kappa, b_end, state.sym.q)
    return _Frame(
        T=tangent,
        N=normal,
        kappa=kappa,
        lam_a=lam_a,
        lam_b=lam_b,
        hm=hm,
        hp=hp,
        a_end=a_end,
        b_end=b_end,
    )


def _warp_terms(
    state: FlowState,
    frame: _Frame,
    index: int,
    on_axis: np.ndarray,
    block: int,
    values: tuple[np.ndarray, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Products of the warping rate a'/a (or b'/b) with derivative fields.

    ``values`` are (field, its second derivative) pairs collapsed to
    (field, limit); at an axis endpoint the product tends to the limit.
    """
    field, limit = values
    if block == 1:
        return np.zeros_like(field), np.zeros_like(field)
    coord = state.points[:, index]
    safe = np.where(on_axis, 1.0, coord)
    rate = np.where(on_axis, 0.0, frame.T[:, index] / safe)
    return rate, np.where(on_axis, limit, rate * field)


def geometry(state: FlowState, frame: Optional[_Frame] = None) -> PointGeometry:
    frame = frame or _frame(state)
    sym = state.sym
    ma, mb = sym.p - 1, sym.q - 1
    hm, hp = frame.hm, frame.hp

    def d1(values):
        return _d1(_extend_scalar(state, values), hm, hp)

    def d2(values):
        return _d2(_extend_scalar(state, values), hm, hp)

    F, G, P = d1(frame.kappa), d1(frame.lam_a), d1(frame.lam_b)
    dF, dG, dP = d2(frame.kappa), d2(frame.lam_a), d2(frame.lam_b)

    mu, mu_G = _warp_terms(state, frame, 0, frame.a_end, sym.p, (G, dG))
    _, mu_P = _warp_terms(state, frame, 0, frame.a_end, sym.p, (P, dP))
    _, mu_FG = _warp_terms(state, frame, 0, frame.a_end, sym.p, (F - 2 * G, dF - 2 * dG))
    nu, nu_P = _warp_terms(state, frame, 1, frame.b_end, sym.q, (P, dP))
    _, nu_G = _warp_terms(state, frame, 1, frame.b_end, sym.q, (G, dG))
    _, nu_FP = _warp_terms(state, frame, 1, frame.b_end, sym.q, (F - 2 * P, dF - 2 * dP))

    grad_A_sq = F**2 + 3 * ma * G**2 + 3 * mb * P**2
    grad_H_sq = (F + ma * G + mb * P) ** 2
    hess_A_sq = dF**2 + 3 * ma * dG**2 + 3 * mb * dP**2
    if ma:
        hess_A_sq = hess_A_sq + ma * (
            3 * mu_FG**2 + (9 + 3 * (ma - 1)) * mu_G**2 + 3 * mb * mu_P**2
        )
    if mb:
        hess_A_sq = hess_A_sq + mb * (
            3 * nu_FP**2 + (9 + 3 * (mb - 1)) * nu_P**2 + 3 * ma * nu_G**2
        )
    return PointGeometry(
        kappa=frame.kappa,
        lam_a=frame.lam_a,
        lam_b=frame.lam_b,
        multiplicities=sym.multiplicities,
        grad_A_sq=grad_A_sq,
        hess_A_sq=hess_A_sq,
        grad_H_sq=grad_H_sq,
        area_weight=area_weight(state),
    )


def area_weight(state: FlowState) -> np.ndarray:
    p, q = state.sym.p, state.sym.q
    a, b = np.abs(state.points[:, 0]), np.abs(state.points[:, 1])
    weight = np.ones(len(state))
    if p > 1:
        weight = weight * orbit_volume(p - 1) * a ** (p - 1)
    if q > 1:
        weight = weight * orbit_volume(q - 1) * b ** (q - 1)
    return weight


def integrate(state: FlowState, values: np.ndarray) -> float:
    """Integral over the generated hypersurface of an invariant function."""
    density = values * area_weight(state)
    if state.is_loop:
        sigma = np.concatenate([state.sigma, [state.sigma[-1] + state.segment_lengths()[-1]]])
        return float(trapezoid(np.append(density, density[0]), sigma))
    return float(trapezoid(density, state.sigma))


def area(state: FlowState) -> float:
    return integrate(state, np.ones(len(state)))


def laplacian(state: FlowState, values: np.ndarray, frame: Optional[_Frame] = None) -> np.ndarray:
    """Laplace-Beltrami operator of the hypersurface on invariant functions."""
    frame = frame or _frame(state)
    ext = _extend_scalar(state, values)
    first = _d1(ext, frame.hm, frame.hp)
    second = _d2(ext, frame.hm, frame.hp)
    result = second.copy()
    for index, on_axis, block in ((0, frame.a_end, state.sym.p), (1, frame.b_end, state.sym.q)):
        if block == 1:
            continue
        rate, product = _warp_terms(state, frame, index, on_axis, block, (first, second))
        result += (block - 1) * product
    return result


def codazzi_residual(state: FlowState) -> float:
    """Largest mismatch of lam' = (a'/a)(kappa - lam) over interior nodes."""
    frame = _frame(state)
    residual = 0.0
    scale = float(np.max(np.sqrt(frame.A_sq(state.sym)))) + math.sqrt(state.params.K)
    for index, lam, on_axis, block in (
        (0, frame.lam_a, frame.a_end, state.sym.p),
        (1, frame.lam_b, frame.b_end, state.sym.q),
    ):
        if block == 1:
            continue
        derivative = _d1(_extend_scalar(state, lam), frame.hm, frame.hp)
        coord = state.points[:, index]
        interior = ~on_axis & (np.abs(coord) > 1e-3 * state.R)
        predicted = frame.T[interior, index] / coord[interior] * (frame.kappa - lam)[interior]
        if np.any(interior):
            residual = max(residual, float(np.max(np.abs(derivative[interior] - predicted))))
    return residual / scale**2


def axis_residual(state: FlowState, frame: Optional[_Frame] = None) -> float:
    """Distance of the near-axis rotational curvature from its axis limit."""
    if state.is_loop:
        return 0.0
    frame = frame or _frame(state)
    scale = float(np.max(np.sqrt(frame.A_sq(state.sym)))) + math.sqrt(state.params.K)
    worst = 0.0
    for end, near in ((0, 1), (len(state) - 1, len(state) - 2)):
        lam = frame.lam_a if state.ends[0 if end == 0 else 1] == A_AXIS else frame.lam_b
        worst = max(worst, abs(lam[near] - frame.kappa[end]) / scale)
    return worst


def orthogonality_residual(state: FlowState) -> float:
    if state.is_loop:
        return 0.0
    worst = 0.0
    for end, near, axis in ((0, 1, state.ends[0]), (-1, -2, state.ends[1])):
        chord = state.points[near] - state.points[end]
        cosine = abs(chord[_axis_index(axis)]) / np.linalg.norm(chord)
        worst = max(worst, 1.0 - float(cosine))
    return worst


def validate_state(state: FlowState) -> None:
    radius_error = np.max(np.abs(np.linalg.norm(state.points, axis=1) - state.R))
    if radius_error > SPHERE_TOL * state.R:
        raise InvariantViolation(
            f"Profile left the orbit sphere by {radius_error!r}", state
        )
    frame = _frame(state)
    kappa_scale = float(np.max(frame.kappa**2)) + state.params.K
    limit = 10 * state.h**2 * kappa_scale
    residual = orthogonality_residual(state)
    if residual > limit:
        raise InvariantViolation(
            f"Axis endpoints not orthogonal: residual {residual!r} > {limit!r}", state
        )


def _project(state: FlowState, points: np.ndarray) -> np.ndarray:
    if not state.is_loop:
        points[0, _axis_index(state.ends[0])] = 0.0
        points[-1, _axis_index(state.ends[1])] = 0.0
    return state.R * points / np.linalg.norm(points, axis=1)[:, None]


def _monitor_lengths(state: FlowState, frame: Optional[_Frame] = None) -> np.ndarray:
    lengths = state.segment_lengths()
    if state.monitor == Monitor.ARCLENGTH:
        return lengths
    frame = frame or _frame(state)
    A_sq = frame.A_sq(state.sym)
    if state.is_loop:
        A_mid = 0.5 * (A_sq + np.roll(A_sq, -1))
    else:
        A_mid = 0.5 * (A_sq[:-1] + A_sq[1:])
    return lengths * np.sqrt(1 + A_mid / (state.monitor_scale**2 * state.params.K))


def spacing_drift(state: FlowState, frame: Optional[_Frame] = None) -> float:
    lengths = _monitor_lengths(state, frame)
    mean = float(np.mean(lengths))
    return float(np.max(np.abs(lengths - mean))) / mean


def regrid(state: FlowState, frame: Optional[_Frame] = None) -> FlowState:
    """Redistribute nodes evenly in the monitor metric by cubic interpolation."""
    lengths = _monitor_lengths(state, frame)
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    size = len(state)
    if state.is_loop:
        closed = np.vstack([state.points, state.points[:1]])
        spline = CubicSpline(cumulative, closed, axis=0, bc_type="periodic")
        targets = np.linspace(0.0, cumulative[-1], size, endpoint=False)
    else:
        spline = CubicSpline(cumulative, state.points, axis=0)
        targets = np.linspace(0.0, cumulative[-1], size)
    points = _project(state, spline(targets))
    logger.debug("Regrid at t=%s (monitor %s)", state.t, state.monitor)
    return state.with_points(points, regrid_count=state.regrid_count + 1)


def _build_state(
    points: np.ndarray,
    sym: SymmetryType,
    params: PinchingParams,
    topology: str,
    ends: Optional[tuple[str, str]],
    monitor: str,
) -> FlowState:
    state = FlowState(
        sym=sym,
        params=params,
        points=points,
        topology=topology,
        ends=ends,
        monitor=monitor,
    )
    state = state.with_points(_project(state, points.copy()))
    return attr.evolve(regrid(state), regrid_count=0)


def _sphere_profile(
    descriptor: GeodesicSphere, sym: SymmetryType, R: float, resolution: int
) -> tuple[np.ndarray, tuple[str, str]]:
    theta = descriptor.rho0 / R
    if not 0 < theta < math.pi:
        raise ConstructionError(
            f"Geodesic sphere radius must lie in (0, pi/sqrt(K)), got {descriptor.rho0!r}"
        )
    start = 0.0 if sym.q > 1 else -math.pi / 2
    stop = math.pi / 2 if sym.p > 1 else math.pi
    ends = (B_AXIS if sym.q > 1 else A_AXIS, A_AXIS if sym.p > 1 else B_AXIS)
    psi = np.linspace(start, stop, resolution + 1)
    radius = R * math.sin(theta)
    points = np.column_stack(
        [radius * np.cos(psi), radius * np.sin(psi), np.full_like(psi, R * math.cos(theta))]
    )
    return points, ends


def _band_profile(
    descriptor: CliffordBand, sym: SymmetryType, R: float, resolution: int
) -> tuple[np.ndarray, str, Optional[tuple[str, str]]]:
    phi0, amplitude = descriptor.phi0, descriptor.amplitude
    if not (0 < phi0 - abs(amplitude) and phi0 + abs(amplitude) < math.pi / 2):
        raise ConstructionError(
            f"Clifford band angle range must stay inside (0, pi/2), got "
            f"phi0={phi0!r}, amplitude={amplitude!r}"
        )
    if sym.p == 1:
        raise ConstructionError("A Clifford band needs a rotating a-block (p >= 2)")
    if sym.q > 1:
        psi = np.linspace(-math.pi / 2, math.pi / 2, resolution + 1)
        phi = phi0 + amplitude * np.cos(descriptor.mode * (psi + math.pi / 2))
        topology, ends = Topology.AXIS_TO_AXIS, (B_AXIS, B_AXIS)
    else:
        psi = np.linspace(-math.pi, math.pi, resolution, endpoint=False)
        phi = phi0 + amplitude * np.cos(descriptor.mode * psi)
        topology, ends = Topology.CLOSED_LOOP, None
    points = np.column_stack(
        [R * np.cos(phi), R * np.sin(phi) * np.cos(psi), R * np.sin(phi) * np.sin(psi)]
    )
    return points, topology, ends


def _dumbbell_profile(
    descriptor: Dumbbell, sym: SymmetryType, R: float, resolution: int
) -> np.ndarray:
    neck, bulge, width = descriptor.neck_ratio, descriptor.bulge_ratio, descriptor.neck_width
    if sym.p != 1:
        raise ConstructionError("The dumbbell profile needs p = 1 (signed a-coordinate)")
    if not (0 < neck < 1 and 0 < bulge <= 1 and 0 < width <= 1):
        raise ConstructionError(
            f"Dumbbell ratios out of range: neck={neck!r}, bulge={bulge!r}, width={width!r}"
        )
    half_length = math.pi * R / 4
    bulge_radius = 0.5 * bulge * half_length
    t = np.linspace(0.0, math.pi, resolution + 1)
    x = half_length * np.cos(t)
    dip = 1 - (1 - neck) * np.exp(-((x / (width * half_length)) ** 2))
    y = bulge_radius * np.sin(t) * dip
    # exponential map of the tangent plane at the pole (0, 0, R)
    dist = np.hypot(x, y)
    scale = np.where(dist > 0, R * np.sin(dist / R) / np.where(dist > 0, dist, 1.0), 1.0)
    return np.column_stack([scale * x, scale * y, R * np.cos(dist / R)])


def init_profile(
    descriptor: Descriptor,
    sym: SymmetryType,
    params: PinchingParams,
    resolution: int = 128,
    monitor: str = Monitor.ARCLENGTH,
) -> FlowState:
    if sym.n != params.n:
        raise ConstructionError(
            f"Symmetry type (p, q) = ({sym.p}, {sym.q}) gives n={sym.n}, expected {params.n}"
        )
    if resolution < 8:
        raise ConstructionError(f"Resolution must be at least 8, got {resolution}")
    R = 1.0 / math.sqrt(params.K)
    if isinstance(descriptor, GeodesicSphere):
        points, ends = _sphere_profile(descriptor, sym, R, resolution)
        topology = Topology.AXIS_TO_AXIS
    elif isinstance(descriptor, CliffordBand):
        points, topology, ends = _band_profile(descriptor, sym, R, resolution)
    elif isinstance(descriptor, Dumbbell):
        points = _dumbbell_profile(descriptor, sym, R, resolution)
        topology, ends = Topology.AXIS_TO_AXIS, (B_AXIS, B_AXIS)
    else:
        raise ConstructionError(f"Unknown profile descriptor {descriptor!r}")
    state = _build_state(points, sym, params, topology, ends, monitor)
    validate_state(state)
    state.class_c = classify_class_C(state, params)
    logger.info(
        "Initial %s profile with %d nodes, in class: %s",
        descriptor.kind,
        len(state),
        state.class_c.in_class,
    )
    return state


def classify_class_C(state: FlowState, params: PinchingParams) -> ClassCVerdict:
    require_admissible(params)
    frame = _frame(state)
    H = frame.H(state.sym)
    A_sq = frame.A_sq(state.sym)
    K = params.K
    V_measured = area(state) * K ** (params.n / 2)
    Theta_measured = float(np.max(H**2)) / K
    max_g = float(np.max(g_m_alpha(A_sq, H, params.n, params.m, params.alpha, K)))
    return ClassCVerdict(
        V_measured=V_measured,
        Theta_measured=Theta_measured,
        max_g=max_g,
        in_class=bool(max_g <= 0 and V_measured <= params.V and Theta_measured <= params.Theta),
    )


def time_step(state: FlowState, frame: _Frame, policy: DtPolicy) -> float:
    h_min = float(np.min(state.segment_lengths()))
    max_A_sq = float(np.max(frame.A_sq(state.sym)))
    block = max(state.sym.p, state.sym.q)
    dt = min(
        policy.c_cfl * h_min**2 / block,
        policy.c_cur / max(max_A_sq, state.params.K),
        policy.dt_max / state.params.K,
    )
    if dt < policy.dt_min:
        raise SingularityEvent(state.t, max_A_sq, "time step underflow")
    return dt


def _velocity(state: FlowState, frame: _Frame) -> np.ndarray:
    return frame.H(state.sym)[:, None] * frame.N


def step(
    state: FlowState,
    dt_policy: DtPolicy,
    frame: Optional[_Frame] = None,
    allow_regrid: bool = True,
) -> FlowState:
    """One Heun step of the normal motion, then projection and optional regrid."""
    frame = frame or _frame(state)
    dt = time_step(state, frame, dt_policy)
    v0 = _velocity(state, frame)
    predictor = _project(state, state.points + dt * v0)
    v1 = _velocity(state, _frame(state, predictor))
    points = _project(state, state.points + 0.5 * dt * (v0 + v1))
    new_state = state.with_points(points, t=state.t + dt)
    if allow_regrid and spacing_drift(new_state) > SPACING_DRIFT:
        new_state = regrid(new_state)
    return new_state


def is_degenerate(state: FlowState) -> bool:
    if state.h <= 1e-12 * state.R:
        return True
    interior = slice(None) if state.is_loop else slice(1, -1)
    for index, block in ((0, state.sym.p), (1, state.sym.q)):
        if block > 1 and np.any(state.points[interior, index] <= 0):
            return True
    return False


@attr.s(kw_only=True, frozen=True)
class EquivariantRun:
    descriptor = attr.ib()
    sym: SymmetryType = attr.ib(validator=instance_of(SymmetryType))
    params: PinchingParams = attr.ib(validator=instance_of(PinchingParams))
    resolution: int = attr.ib(default=128)
    horizon: float = attr.ib(default=1.0)
    snapshot_every: float = attr.ib(default=0.01)
    curvature_cadence: float = attr.ib(default=1.25)
    max_curvature: float = attr.ib(default=1e6)
    dt_policy: DtPolicy = attr.ib(factory=DtPolicy)
    monitor: str = attr.ib(default=Monitor.ARCLENGTH)
    residual_probes: tuple[float, ...] = attr.ib(default=())
    max_steps: int = attr.ib(default=50_000_000)


def snapshot(state: FlowState, frame: Optional[_Frame] = None, probe: bool = False) -> Snapshot:
    return Snapshot(
        t=state.t,
        geometry=geometry(state, frame),
        sigma=state.sigma,
        points=state.points.copy(),
        regrid_count=state.regrid_count,
        probe=probe,
    )


def _singular_kind(frame: _Frame, sym: SymmetryType) -> str:
    A_sq = frame.A_sq(sym)
    if float(np.min(A_sq)) >= EXTINCTION_RATIO * float(np.max(A_sq)):
        return TerminalEvent.EXTINCTION
    return TerminalEvent.SINGULARITY


def run(scenario: EquivariantRun, state: Optional[FlowState] = None) -> FlowTrace:
    state = state or init_profile(
        scenario.descriptor,
        scenario.sym,
        scenario.params,
        scenario.resolution,
        scenario.monitor,
    )
    K = scenario.params.K
    trace = FlowTrace(
        kind=TraceKind.EQUIVARIANT,
        params=scenario.params,
        sym=scenario.sym,
        topology=state.topology,
        ends=state.ends,
        initial_in_class=None if state.class_c is None else state.class_c.in_class,
    )
    frame = _frame(state)
    trace.append(snapshot(state, frame))
    next_time = state.t + scenario.snapshot_every
    last_max = float(np.max(frame.A_sq(state.sym)))
    probes = sorted(scenario.residual_probes)
    probing = 0
    resolution_retry = False

    for _ in range(scenario.max_steps):
        if state.t >= scenario.horizon:
            if trace.snapshots[-1].t < state.t:
                trace.append(snapshot(state, frame))
            trace.finish(TerminalEvent.HORIZON, state.t)
            break
        try:
            if not state.is_loop and axis_residual(state, frame) > AXIS_RESIDUAL_TOL:
                raise ResolutionError(f"Axis limit residual too large at t={state.t!r}")
            state = step(state, scenario.dt_policy, frame, allow_regrid=probing == 0)
            frame = _frame(state)
            validate_state(state)
            resolution_retry = False
        except SingularityEvent as exc:
            trace.finish(_singular_kind(frame, state.sym), exc.t, str(exc))
            break
        except ResolutionError as exc:
            if resolution_retry:
                trace.finish(TerminalEvent.DEGENERATE, state.t, str(exc))
                break
            logger.info("%s; regridding by curvature", exc)
            state = regrid(attr.evolve(state, monitor=Monitor.CURVATURE))
            frame = _frame(state)
            resolution_retry = True
            continue
        except InvariantViolation as exc:
            if exc.state is not None:
                trace.append(snapshot(exc.state, probe=False))
            trace.finish(TerminalEvent.ABORT, state.t, str(exc))
            logger.error("Run aborted: %s", exc)
            break

        if is_degenerate(state):
            trace.append(snapshot(state, frame))
            trace.finish(TerminalEvent.DEGENERATE, state.t, "profile reached an axis")
            break
        max_A_sq = float(np.max(frame.A_sq(state.sym)))
        if max_A_sq / K >= scenario.max_curvature:
            trace.append(snapshot(state, frame))
            kind = _singular_kind(frame, state.sym)
            trace.finish(kind, state.t, f"max|A|^2/K reached {max_A_sq / K!r}")
            break
        if probing:
            trace.append(snapshot(state, frame, probe=True))
            probing -= 1
        elif probes and state.t >= probes[0]:
            probes.pop(0)
            trace.append(snapshot(state, frame, probe=True))
            probing = 2
        elif state.t >= next_time or max_A_sq >= scenario.curvature_cadence * last_max:
            trace.append(snapshot(state, frame))
            next_time = state.t + scenario.snapshot_every
            last_max = max_A_sq
    else:
        trace.finish(TerminalEvent.HORIZON, state.t, "step budget exhausted")

    logger.info(
        "Equivariant run finished: %s at t=%s after %d snapshots",
        trace.terminal.kind,
        trace.terminal.t,
        len(trace),
    )
    return trace


def state_from_snapshot(trace: FlowTrace, snap: Snapshot) -> FlowState:
    if not trace.is_equivariant or snap.points is None:
        raise NotApplicable("Snapshot carries no profile curve")
    return FlowState(
        sym=trace.sym,
        params=trace.params,
        points=snap.points,
        t=snap.t,
        topology=trace.topology,
        ends=trace.ends,
        regrid_count=snap.regrid_count,
    )


def extinction_time_estimate(trace: FlowTrace) -> Optional[float]:
    """Singular time from the last snapshot, using T - t = 1/(2 max|A|^2) for spheres."""
    if trace.terminal is None or trace.terminal.kind != TerminalEvent.EXTINCTION:
        return None
    last = trace.snapshots[-1]
    return last.t + 1.0 / (2.0 * last.max_A_sq)
