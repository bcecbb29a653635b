"""Scenario files: loading, validation and execution.

A scenario is a JSON object describing one experiment. Unknown keys are
rejected at every level; see docs/scenario_schema.md for the layout.
"""
from __future__ import annotations

import json
import logging
import math
import pathlib
from typing import Any, Optional, Union

import attr
from attr.validators import deep_iterable, in_, instance_of, optional
from slugify import slugify

from pinchflow import equivariant_flow, export, homogeneous_flows
from pinchflow.curvature_algebra import eta0, require_admissible
from pinchflow.estimate_monitor import EstimateReport, FrontierPoint, check_estimates, convexity_frontier
from pinchflow.exceptions import (
    ConfigurationError,
    NotApplicable,
    PinchflowException,
)
from pinchflow.poincare_verifier import GammaCertificate, min_ratio, multiplicity_gap_check
from pinchflow.singularity_rescaler import BlowupRecord, classify_type, neck_ratio, rescale_type_I
from pinchflow.types import FlowTrace, PinchingParams, SymmetryType, TypeFlag

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_number = instance_of((float, int))


class Mode:
    HYPERPARALLEL = "hyperparallel"
    CLIFFORD = "clifford"
    EQUIVARIANT = "equivariant"
    POINCARE = "poincare"
    MONITOR = "monitor"
    RESCALE = "rescale"

    FLOWS = (HYPERPARALLEL, CLIFFORD, EQUIVARIANT)
    ALL = (HYPERPARALLEL, CLIFFORD, EQUIVARIANT, POINCARE, MONITOR, RESCALE)


class Stage:
    MONITOR = "monitor"
    RESCALE = "rescale"


class Check:
    EXTINCTION_TIME = "extinction_time"
    PRESERVATION = "preservation"
    DECAY = "decay"
    CYLINDRICAL = "cylindrical"
    GRADIENT = "gradient"
    HESSIAN = "hessian"
    KATO = "kato"
    T_BOUND = "T_bound"
    LP = "lp"
    TYPE_I = "type_I"
    TYPE_II = "type_II"
    MODEL_DISTANCE = "model_distance"
    GAMMA_POSITIVE = "gamma_positive"
    MULTIPLICITY_GAP = "multiplicity_gap"
    NECK_RATIO = "neck_ratio"
    CONVEXITY = "convexity"

    ALL = (
        EXTINCTION_TIME,
        PRESERVATION,
        DECAY,
        CYLINDRICAL,
        GRADIENT,
        HESSIAN,
        KATO,
        T_BOUND,
        LP,
        TYPE_I,
        TYPE_II,
        MODEL_DISTANCE,
        GAMMA_POSITIVE,
        MULTIPLICITY_GAP,
        NECK_RATIO,
        CONVEXITY,
    )


@attr.s(kw_only=True, frozen=True)
class HyperparallelOptions:
    rho0: float = attr.ib(default=0.5, validator=_number)
    horizon: float = attr.ib(default=1.0, validator=_number)
    ancient: bool = attr.ib(default=False, validator=instance_of(bool))
    t_min: float = attr.ib(default=-5.0, validator=_number)


@attr.s(kw_only=True, frozen=True)
class CliffordOptions:
    r0: float = attr.ib(validator=_number)
    horizon: float = attr.ib(default=1.0, validator=_number)


@attr.s(kw_only=True, frozen=True)
class ProfileOptions:
    kind: str = attr.ib(
        validator=in_(
            [
                equivariant_flow.DescriptorKind.GEODESIC_SPHERE,
                equivariant_flow.DescriptorKind.CLIFFORD_BAND,
                equivariant_flow.DescriptorKind.DUMBBELL,
            ]
        )
    )
    rho0: Optional[float] = attr.ib(default=None, validator=optional(_number))
    phi0: Optional[float] = attr.ib(default=None, validator=optional(_number))
    amplitude: float = attr.ib(default=0.0, validator=_number)
    mode: int = attr.ib(default=2, validator=instance_of(int))
    neck_ratio: Optional[float] = attr.ib(default=None, validator=optional(_number))
    bulge_ratio: Optional[float] = attr.ib(default=None, validator=optional(_number))
    neck_width: float = attr.ib(default=0.5, validator=_number)

    def descriptor(self) -> equivariant_flow.Descriptor:
        kinds = equivariant_flow.DescriptorKind
        required = {
            kinds.GEODESIC_SPHERE: ("rho0",),
            kinds.CLIFFORD_BAND: ("phi0",),
            kinds.DUMBBELL: ("neck_ratio", "bulge_ratio"),
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ConfigurationError(
                f"Profile '{self.kind}' needs: {','.join(missing)}"
            )
        if self.kind == kinds.GEODESIC_SPHERE:
            return equivariant_flow.GeodesicSphere(rho0=self.rho0)
        if self.kind == kinds.CLIFFORD_BAND:
            return equivariant_flow.CliffordBand(
                phi0=self.phi0, amplitude=self.amplitude, mode=self.mode
            )
        return equivariant_flow.Dumbbell(
            neck_ratio=self.neck_ratio,
            bulge_ratio=self.bulge_ratio,
            neck_width=self.neck_width,
        )


@attr.s(kw_only=True, frozen=True)
class EquivariantOptions:
    p: int = attr.ib(validator=instance_of(int))
    q: int = attr.ib(validator=instance_of(int))
    profile: ProfileOptions = attr.ib(validator=instance_of(ProfileOptions))
    resolution: int = attr.ib(default=64, validator=instance_of(int))
    horizon: float = attr.ib(default=1.0, validator=_number)
    max_curvature: float = attr.ib(default=1e6, validator=_number)
    monitor: str = attr.ib(
        default=equivariant_flow.Monitor.ARCLENGTH,
        validator=in_([equivariant_flow.Monitor.ARCLENGTH, equivariant_flow.Monitor.CURVATURE]),
    )
    residual_probes: tuple[float, ...] = attr.ib(
        default=(), converter=tuple, validator=deep_iterable(member_validator=_number)
    )


@attr.s(kw_only=True, frozen=True)
class PoincareOptions:
    eta: float = attr.ib(validator=_number)
    budget: int = attr.ib(default=60, validator=instance_of(int))
    workers: int = attr.ib(default=1, validator=instance_of(int))


@attr.s(kw_only=True, frozen=True)
class MonitorOptions:
    eta_list: tuple[float, ...] = attr.ib(
        default=(), converter=tuple, validator=deep_iterable(member_validator=_number)
    )
    theta_squared: bool = attr.ib(default=False, validator=instance_of(bool))
    lp_p: float = attr.ib(default=10.0, validator=_number)
    lp_sigma: float = attr.ib(default=0.05, validator=_number)
    frontier_etas: tuple[float, ...] = attr.ib(
        default=(0.05, 0.1, 0.2), converter=tuple, validator=deep_iterable(member_validator=_number)
    )


@attr.s(kw_only=True, frozen=True)
class AssertionSpec:
    check: str = attr.ib(validator=in_(Check.ALL))
    tol: float = attr.ib(default=1e-3, validator=_number)
    # neck_ratio only: cylinder index and the H^2/K level where sampling starts
    k: int = attr.ib(default=1, validator=instance_of(int))
    threshold: float = attr.ib(default=1e4, validator=_number)


_FLOW_OPTIONS = {
    Mode.HYPERPARALLEL: HyperparallelOptions,
    Mode.CLIFFORD: CliffordOptions,
    Mode.EQUIVARIANT: EquivariantOptions,
}


@attr.s(kw_only=True, frozen=True)
class ScenarioConfig:
    name: str = attr.ib(validator=instance_of(str))
    mode: str = attr.ib(validator=in_(Mode.ALL))
    params: PinchingParams = attr.ib(validator=instance_of(PinchingParams))
    flow: Optional[str] = attr.ib(default=None, validator=optional(in_(Mode.FLOWS)))
    options: Any = attr.ib(default=None)
    stages: tuple[str, ...] = attr.ib(
        default=(),
        converter=tuple,
        validator=deep_iterable(member_validator=in_([Stage.MONITOR, Stage.RESCALE])),
    )
    monitor: MonitorOptions = attr.ib(factory=MonitorOptions, validator=instance_of(MonitorOptions))
    assertions: tuple[AssertionSpec, ...] = attr.ib(default=(), converter=tuple)
    output_dir: Optional[str] = attr.ib(default=None, validator=optional(instance_of(str)))
    seed: int = attr.ib(default=0, validator=instance_of(int))
    cadence: Optional[float] = attr.ib(default=None, validator=optional(_number))
    schema_version: int = attr.ib(default=SCHEMA_VERSION, validator=in_([SCHEMA_VERSION]))

    @property
    def slug(self) -> str:
        return slugify(self.name)

    @property
    def run_dir(self) -> pathlib.Path:
        if self.output_dir is not None:
            return pathlib.Path(self.output_dir)
        return pathlib.Path("runs") / self.slug

    @property
    def flow_mode(self) -> Optional[str]:
        return self.mode if self.mode in Mode.FLOWS else self.flow

    @property
    def active_stages(self) -> tuple[str, ...]:
        stages = list(self.stages)
        if self.mode in (Mode.MONITOR, Mode.RESCALE) and Stage.MONITOR not in stages:
            stages.append(Stage.MONITOR)
        if self.mode == Mode.RESCALE and Stage.RESCALE not in stages:
            stages.append(Stage.RESCALE)
        return tuple(stages)


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"'{where}' must be a JSON object")
    known = {field.name for field in attr.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in '{where}': {','.join(unknown)}")
    try:
        return cls(**data)
    except ConfigurationError:
        raise
    except (TypeError, ValueError, PinchflowException) as exc:
        raise ConfigurationError(f"Invalid '{where}': {exc}") from None


def parse_scenario(data: Any, default_name: str = "scenario") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("A scenario must be a JSON object")
    data = dict(data)
    known = {field.name for field in attr.fields(ScenarioConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in scenario: {','.join(unknown)}")
    if "mode" not in data or "params" not in data:
        raise ConfigurationError("A scenario needs both 'mode' and 'params'")
    mode = data["mode"]
    if mode not in Mode.ALL:
        raise ConfigurationError(f"Unknown mode '{mode}', expected one of {','.join(Mode.ALL)}")
    data.setdefault("name", default_name)
    data["params"] = _build(PinchingParams, data["params"], "params")
    require_admissible(data["params"])

    flow = mode if mode in Mode.FLOWS else data.get("flow")
    if mode in (Mode.MONITOR, Mode.RESCALE) and flow is None:
        raise ConfigurationError(f"Mode '{mode}' needs a 'flow' naming the flow to run")
    options = data.get("options", {})
    if mode == Mode.POINCARE:
        data["options"] = _build(PoincareOptions, options, "options")
    elif flow in _FLOW_OPTIONS:
        options = dict(options) if isinstance(options, dict) else options
        if flow == Mode.EQUIVARIANT and isinstance(options, dict) and "profile" in options:
            options["profile"] = _build(ProfileOptions, options["profile"], "options.profile")
        data["options"] = _build(_FLOW_OPTIONS[flow], options, "options")
    if "monitor" in data:
        data["monitor"] = _build(MonitorOptions, data["monitor"], "monitor")
    data["assertions"] = [
        _build(AssertionSpec, item, f"assertions[{index}]")
        for index, item in enumerate(data.get("assertions", []))
    ]
    return _build(ScenarioConfig, data, "scenario")


def load_scenario(path: Union[str, pathlib.Path]) -> ScenarioConfig:
    path = pathlib.Path(path)
    try:
        with open(path, "r", encoding="utf-8") as config_file:
            data = json.load(config_file)
    except FileNotFoundError:
        raise ConfigurationError(f"No scenario file at {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Scenario {path} is not valid JSON: {exc}") from None
    return parse_scenario(data, default_name=path.stem)


@attr.s(kw_only=True)
class AssertionOutcome:
    check: str = attr.ib()
    passed: bool = attr.ib()
    detail: str = attr.ib(default="")


@attr.s(kw_only=True)
class ScenarioResult:
    config: ScenarioConfig = attr.ib()
    trace: Optional[FlowTrace] = attr.ib(default=None)
    extinction: Optional[homogeneous_flows.ExtinctionRecord] = attr.ib(default=None)
    report: Optional[EstimateReport] = attr.ib(default=None)
    frontier: Optional[list[FrontierPoint]] = attr.ib(default=None)
    blowup: Optional[BlowupRecord] = attr.ib(default=None)
    certificate: Optional[GammaCertificate] = attr.ib(default=None)
    gap: Any = attr.ib(default=None)
    outcomes: list[AssertionOutcome] = attr.ib(factory=list)

    @property
    def passed(self) -> bool:
        return all(outcome.passed for outcome in self.outcomes)

    @property
    def failures(self) -> list[AssertionOutcome]:
        return [outcome for outcome in self.outcomes if not outcome.passed]


def _run_flow(config: ScenarioConfig, result: ScenarioResult) -> None:
    params, options = config.params, config.options
    flow = config.flow_mode
    if flow == Mode.HYPERPARALLEL:
        if options.ancient:
            result.trace = homogeneous_flows.ancient_hyperparallel(
                params, options.t_min, cadence=config.cadence
            )
        else:
            result.trace, result.extinction = homogeneous_flows.hyperparallel_flow(
                options.rho0, params, options.horizon, config.cadence
            )
    elif flow == Mode.CLIFFORD:
        if not 0 < options.r0 < 1:
            raise ConfigurationError(f"r0 must lie in (0, 1), got {options.r0!r}")
        phi0 = math.acos(options.r0)
        result.trace = homogeneous_flows.clifford_flow(
            params, phi0, options.horizon, config.cadence
        )
    else:
        scenario = equivariant_flow.EquivariantRun(
            descriptor=options.profile.descriptor(),
            sym=SymmetryType(p=options.p, q=options.q),
            params=params,
            resolution=options.resolution,
            horizon=options.horizon,
            snapshot_every=config.cadence or options.horizon / 100,
            max_curvature=options.max_curvature,
            monitor=options.monitor,
            residual_probes=options.residual_probes,
        )
        result.trace = equivariant_flow.run(scenario)


def _eta_list(config: ScenarioConfig) -> list[float]:
    if config.monitor.eta_list:
        return list(config.monitor.eta_list)
    largest = eta0(config.params.n, config.params.m, config.params.alpha)
    return [largest / 4, largest / 2, 3 * largest / 4]


def _report_check(report: Optional[EstimateReport], name: str) -> AssertionOutcome:
    if report is None:
        return AssertionOutcome(check=name, passed=False, detail="monitor stage not run")
    records = {
        Check.PRESERVATION: [report.preservation],
        Check.DECAY: [report.decay],
        Check.CYLINDRICAL: report.cylindrical,
        Check.GRADIENT: report.gradient,
        Check.HESSIAN: [report.hessian],
        Check.KATO: [report.kato],
        Check.T_BOUND: [report.T_bound],
        Check.LP: [report.lp],
    }[name]
    for record in records:
        if not record.applicable:
            return AssertionOutcome(check=name, passed=False, detail=f"not applicable: {record.detail}")
        if record.passed is False:
            return AssertionOutcome(check=name, passed=False, detail=f"{record.name} = {record.value!r}")
    return AssertionOutcome(check=name, passed=True)


def evaluate_assertion(spec: AssertionSpec, result: ScenarioResult) -> AssertionOutcome:
    name = spec.check
    if name == Check.EXTINCTION_TIME:
        record = result.extinction
        if record is None or not record.extinct:
            return AssertionOutcome(check=name, passed=False, detail="no extinction recorded")
        error = abs(record.T - record.T_closed_form) / record.T_closed_form
        return AssertionOutcome(
            check=name, passed=error <= spec.tol, detail=f"relative error {error!r}"
        )
    if name in (Check.TYPE_I, Check.TYPE_II):
        if result.blowup is None:
            return AssertionOutcome(check=name, passed=False, detail="rescale stage not run")
        wanted = TypeFlag.I if name == Check.TYPE_I else TypeFlag.II
        return AssertionOutcome(
            check=name,
            passed=result.blowup.type_flag == wanted,
            detail=f"classified as {result.blowup.type_flag}",
        )
    if name == Check.MODEL_DISTANCE:
        if result.blowup is None or not result.blowup.rescaled:
            return AssertionOutcome(check=name, passed=False, detail="no rescaled spectra")
        distance = result.blowup.rescaled[-1].distance
        return AssertionOutcome(
            check=name, passed=distance <= spec.tol, detail=f"distance {distance!r}"
        )
    if name == Check.GAMMA_POSITIVE:
        cert = result.certificate
        passed = cert is not None and cert.feasible and cert.gamma_hat > 0
        return AssertionOutcome(
            check=name, passed=passed, detail=f"gamma_hat {None if cert is None else cert.gamma_hat!r}"
        )
    if name == Check.MULTIPLICITY_GAP:
        passed = result.gap is not None and result.gap.passed
        return AssertionOutcome(check=name, passed=passed)
    if name == Check.NECK_RATIO:
        if result.trace is None:
            return AssertionOutcome(check=name, passed=False, detail="no flow trace")
        try:
            record = neck_ratio(result.trace, spec.k, spec.threshold)
        except NotApplicable as exc:
            return AssertionOutcome(check=name, passed=False, detail=f"not applicable: {exc}")
        return AssertionOutcome(
            check=name,
            passed=record.sup <= spec.tol,
            detail=f"sup {record.sup!r} over {len(record.samples)} snapshots",
        )
    if name == Check.CONVEXITY:
        if result.frontier is None:
            return AssertionOutcome(check=name, passed=False, detail="monitor stage not run")
        h = [point.h for point in result.frontier]
        ordered = all(earlier >= later for earlier, later in zip(h, h[1:]))
        return AssertionOutcome(
            check=name,
            passed=bool(h) and ordered and all(math.isfinite(value) for value in h),
            detail="h = " + ", ".join(repr(value) for value in h),
        )
    return _report_check(result.report, name)


def execute(config: ScenarioConfig) -> ScenarioResult:
    """Run the configured pipeline; no files are written."""
    result = ScenarioResult(config=config)
    logger.info("Running scenario %s (mode %s)", config.name, config.mode)
    if config.mode == Mode.POINCARE:
        result.certificate = min_ratio(
            config.params,
            config.options.eta,
            budget=config.options.budget,
            seed=config.seed,
            workers=config.options.workers,
        )
        result.gap = multiplicity_gap_check(config.params, config.options.eta)
    else:
        _run_flow(config, result)
        if Stage.MONITOR in config.active_stages:
            result.report = check_estimates(
                result.trace,
                config.params,
                _eta_list(config),
                theta_squared=config.monitor.theta_squared,
                lp_p=config.monitor.lp_p,
                lp_sigma=config.monitor.lp_sigma,
            )
            result.frontier = convexity_frontier(result.trace, config.monitor.frontier_etas)
        if Stage.RESCALE in config.active_stages:
            record = classify_type(result.trace)
            if record.type_flag == TypeFlag.I:
                record = rescale_type_I(result.trace, record)
            result.blowup = record
    result.outcomes = [evaluate_assertion(spec, result) for spec in config.assertions]
    return result


def summary_text(result: ScenarioResult) -> str:
    config = result.config
    lines = [
        f"scenario: {config.name}",
        f"mode: {config.mode}",
        f"params: n={config.params.n} m={config.params.m} alpha={config.params.alpha!r} "
        f"K={config.params.K!r}",
    ]
    if result.trace is not None:
        terminal = result.trace.terminal
        lines.append(f"snapshots: {len(result.trace)}")
        if terminal is not None:
            lines.append(f"terminal: {terminal.kind} at t={terminal.t!r} {terminal.detail}".rstrip())
    if result.extinction is not None and result.extinction.extinct:
        lines.append(
            f"extinction time: observed {result.extinction.T!r}, "
            f"closed form {result.extinction.T_closed_form!r}"
        )
    if result.report is not None:
        lines.append("estimates:")
        for check in result.report.checks():
            state = "n/a" if not check.applicable else {True: "pass", False: "FAIL", None: "-"}[check.passed]
            lines.append(f"  {check.name:<32s} {state:<5s} {check.value!r}")
    if result.frontier is not None:
        lines.append(
            "convexity frontier: " + " ".join(f"eta={point.eta!r}:h={point.h!r}" for point in result.frontier)
        )
    if result.blowup is not None:
        lines.append(
            f"blow-up: type {result.blowup.type_flag}, T={result.blowup.T!r}, "
            f"best model k={result.blowup.k_best}"
        )
    if result.certificate is not None:
        lines.append(f"gamma_hat ({result.certificate.label}): {result.certificate.gamma_hat!r}")
    if result.gap is not None:
        lines.append(f"multiplicity gap: {'pass' if result.gap.passed else 'FAIL'}")
    for outcome in result.outcomes:
        lines.append(f"assert {outcome.check}: {'pass' if outcome.passed else 'FAIL'} {outcome.detail}".rstrip())
    return "\n".join(lines) + "\n"


def write_artifacts(result: ScenarioResult) -> pathlib.Path:
    run_dir = result.config.run_dir
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"Cannot create output directory {run_dir}: {exc}") from None
    if result.trace is not None:
        export.write_trace_csv(result.trace, run_dir / "trace.csv")
    summary = {"scenario": result.config.name, "passed": result.passed}
    if result.extinction is not None:
        summary["extinction"] = result.extinction.as_dict()
    summary["assertions"] = [attr.asdict(outcome) for outcome in result.outcomes]
    export.write_json(summary, run_dir / "summary.json")
    if result.report is not None:
        export.write_json(result.report.as_dict(), run_dir / "report.json")
    if result.frontier is not None:
        export.write_json(result.frontier, run_dir / "frontier.json")
    if result.blowup is not None:
        export.write_json(result.blowup.as_dict(), run_dir / "blowup.json")
        if result.blowup.rescaled:
            export.write_rescaled_csv(result.blowup, run_dir / "rescaled.csv")
    if result.certificate is not None:
        export.write_json(result.certificate.as_dict(), run_dir / "certificate.json")
    if result.gap is not None:
        export.write_json(result.gap.as_dict(), run_dir / "gap.json")
    export.write_text(summary_text(result), run_dir / "summary.txt")
    return run_dir


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    result = execute(config)
    write_artifacts(result)
    for failure in result.failures:
        logger.error("Assertion %s failed: %s", failure.check, failure.detail)
    return result

