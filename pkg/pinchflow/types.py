from __future__ import annotations

import math
from typing import Optional

import attr
import numpy as np
from attr.validators import instance_of, optional

from pinchflow.exceptions import RangeError


def _positive(instance, attribute, value):
    if not value > 0:
        raise RangeError(f"Field '{attribute.name}' must be positive, got {value!r}")


def _open_unit_interval(instance, attribute, value):
    if not 0 < value < 1:
        raise RangeError(f"Field '{attribute.name}' must lie in (0, 1), got {value!r}")


def _dimension(instance, attribute, value):
    if value < 2:
        raise RangeError(f"Dimension n must be at least 2, got {value!r}")


def _pinching_index(instance, attribute, value):
    upper = math.ceil(instance.n / 2)
    if not 1 <= value <= upper:
        raise RangeError(
            f"Pinching index m must lie in [1, {upper}] for n={instance.n}, got {value!r}"
        )


def _as_float_array(value) -> np.ndarray:
    return np.asarray(value, dtype=float)


def _sorted_array(value) -> np.ndarray:
    return np.sort(np.asarray(value, dtype=float).ravel())


class TerminalEvent:
    EXTINCTION = "extinction"
    SINGULARITY = "singularity"
    HORIZON = "horizon"
    DEGENERATE = "degenerate"
    ABORT = "abort"
    EQUATOR = "equator"


class TypeFlag:
    I = "I"  # noqa: E741
    II = "II"
    UNDECIDED = "undecided"


class Topology:
    CLOSED_LOOP = "closed-loop"
    AXIS_TO_AXIS = "axis-to-axis"


class TraceKind:
    HYPERPARALLEL = "hyperparallel"
    CLIFFORD = "clifford"
    EQUIVARIANT = "equivariant"


@attr.s(kw_only=True, frozen=True)
class PinchingParams:
    n: int = attr.ib(validator=[instance_of(int), _dimension])
    m: int = attr.ib(validator=[instance_of(int), _pinching_index])
    alpha: float = attr.ib(validator=[instance_of((float, int)), _open_unit_interval])
    K: float = attr.ib(default=1.0, validator=[instance_of((float, int)), _positive])
    V: float = attr.ib(default=math.inf, validator=[instance_of((float, int)), _positive])
    Theta: float = attr.ib(
        default=math.inf, validator=[instance_of((float, int)), _positive]
    )

    def scaled(self, c: float) -> PinchingParams:
        """Same pinching data in the ambient sphere of curvature c²K."""
        return attr.evolve(self, K=self.K * c * c)


@attr.s(kw_only=True, frozen=True, eq=False)
class ShapeSpectrum:
    lam: np.ndarray = attr.ib(converter=_sorted_array)

    @property
    def n(self) -> int:
        return int(self.lam.size)

    @property
    def H(self) -> float:
        return float(np.sum(self.lam))

    @property
    def A_norm_sq(self) -> float:
        return float(np.sum(self.lam**2))

    @property
    def lambda_min(self) -> float:
        return float(self.lam[0])

    def scaled(self, c: float) -> ShapeSpectrum:
        return ShapeSpectrum(lam=c * self.lam)

    @classmethod
    def from_groups(cls, values, multiplicities) -> ShapeSpectrum:
        return cls(lam=np.repeat(np.asarray(values, dtype=float), multiplicities))


@attr.s(kw_only=True, frozen=True)
class Coefficients:
    n: int = attr.ib()
    m: int = attr.ib()
    alpha: float = attr.ib()
    a_m: float = attr.ib()
    b_m: float = attr.ib()
    a: float = attr.ib()
    b: float = attr.ib()
    eta: float = attr.ib()
    eta0: float = attr.ib()
    delta: float = attr.ib()
    beta: float = attr.ib()
    C0: float = attr.ib()

    def as_dict(self) -> dict[str, float]:
        return attr.asdict(self)


@attr.s(kw_only=True, frozen=True)
class SymmetryType:
    p: int = attr.ib(validator=[instance_of(int), _positive])
    q: int = attr.ib(validator=[instance_of(int), _positive])

    @property
    def n(self) -> int:
        return self.p + self.q - 1

    @property
    def multiplicities(self) -> tuple[int, int, int]:
        return (1, self.p - 1, self.q - 1)


@attr.s(kw_only=True, eq=False)
class PointGeometry:
    """Per-node curvature data of one snapshot, one array entry per grid point.

    ``kappa`` has multiplicity one, ``lam_a`` and ``lam_b`` carry the
    multiplicities in ``multiplicities``. Derivative norms are ``None`` on
    traces that do not resolve them (the homogeneous ODE families).
    """

    kappa: np.ndarray = attr.ib(converter=_as_float_array)
    lam_a: np.ndarray = attr.ib(converter=_as_float_array)
    lam_b: np.ndarray = attr.ib(converter=_as_float_array)
    multiplicities: tuple[int, int, int] = attr.ib()
    grad_A_sq: Optional[np.ndarray] = attr.ib(default=None)
    hess_A_sq: Optional[np.ndarray] = attr.ib(default=None)
    grad_H_sq: Optional[np.ndarray] = attr.ib(default=None)
    area_weight: Optional[np.ndarray] = attr.ib(default=None)

    def __len__(self) -> int:
        return int(self.kappa.size)

    @property
    def H(self) -> np.ndarray:
        _, ma, mb = self.multiplicities
        return self.kappa + ma * self.lam_a + mb * self.lam_b

    @property
    def A_norm_sq(self) -> np.ndarray:
        _, ma, mb = self.multiplicities
        return self.kappa**2 + ma * self.lam_a**2 + mb * self.lam_b**2

    @property
    def lambda_min(self) -> np.ndarray:
        _, ma, mb = self.multiplicities
        columns = [self.kappa]
        if ma:
            columns.append(self.lam_a)
        if mb:
            columns.append(self.lam_b)
        return np.min(np.vstack(columns), axis=0)

    @property
    def has_derivatives(self) -> bool:
        return self.grad_A_sq is not None

    def spectrum(self, index: int) -> ShapeSpectrum:
        return ShapeSpectrum.from_groups(
            [self.kappa[index], self.lam_a[index], self.lam_b[index]],
            self.multiplicities,
        )


@attr.s(kw_only=True, eq=False)
class Snapshot:
    t: float = attr.ib()
    geometry: PointGeometry = attr.ib(validator=instance_of(PointGeometry))
    sigma: Optional[np.ndarray] = attr.ib(default=None)
    points: Optional[np.ndarray] = attr.ib(default=None)
    # homogeneous families keep their scalar state (rho or phi) here
    scalar_state: Optional[float] = attr.ib(default=None)
    regrid_count: int = attr.ib(default=0)
    probe: bool = attr.ib(default=False)

    @property
    def max_A_sq(self) -> float:
        return float(np.max(self.geometry.A_norm_sq))

    @property
    def argmax_A_sq(self) -> int:
        return int(np.argmax(self.geometry.A_norm_sq))


@attr.s(kw_only=True, frozen=True)
class FlowEvent:
    kind: str = attr.ib(validator=instance_of(str))
    t: float = attr.ib()
    detail: str = attr.ib(default="")


@attr.s(kw_only=True, eq=False)
class FlowTrace:
    kind: str = attr.ib(validator=instance_of(str))
    params: PinchingParams = attr.ib(validator=instance_of(PinchingParams))
    sym: Optional[SymmetryType] = attr.ib(
        default=None, validator=optional(instance_of(SymmetryType))
    )
    # profile layout of equivariant traces, needed to rebuild states from snapshots
    topology: Optional[str] = attr.ib(default=None)
    ends: Optional[tuple[str, str]] = attr.ib(default=None)
    # class membership of the initial data, when the producer classified it
    initial_in_class: Optional[bool] = attr.ib(default=None)
    snapshots: list[Snapshot] = attr.ib(factory=list)
    events: list[FlowEvent] = attr.ib(factory=list)
    terminal: Optional[FlowEvent] = attr.ib(default=None)

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def times(self) -> np.ndarray:
        return np.array([snap.t for snap in self.snapshots])

    @property
    def max_A_sq(self) -> np.ndarray:
        return np.array([snap.max_A_sq for snap in self.snapshots])

    @property
    def has_derivatives(self) -> bool:
        return bool(self.snapshots) and all(
            snap.geometry.has_derivatives for snap in self.snapshots
        )

    @property
    def is_equivariant(self) -> bool:
        return self.kind == TraceKind.EQUIVARIANT

    def append(self, snapshot: Snapshot) -> None:
        self.snapshots.append(snapshot)

    def finish(self, kind: str, t: float, detail: str = "") -> FlowEvent:
        event = FlowEvent(kind=kind, t=t, detail=detail)
        self.events.append(event)
        self.terminal = event
        return event

    def subsample(self, step: int) -> FlowTrace:
        return attr.evolve(self, snapshots=self.snapshots[::step])
