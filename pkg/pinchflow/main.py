import logging
import math
import sys
from typing import Optional

import attr
import click

from pinchflow import export, homogeneous_flows, scenario
from pinchflow.batch import run_batch
from pinchflow.exceptions import (
    AdmissibilityError,
    ConfigurationError,
    PinchflowCLIError,
    PinchflowException,
    RangeError,
)
from pinchflow.poincare_verifier import min_ratio, multiplicity_gap_check
from pinchflow.types import PinchingParams

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_CRASH = 3


def _fail(message: str, code: int = EXIT_CONFIG):
    click.echo(f"Error: {message}", err=True)
    sys.exit(code)


def _params(**kwargs) -> PinchingParams:
    try:
        return PinchingParams(**kwargs)
    except (TypeError, ValueError, PinchflowException) as exc:
        _fail(str(exc))


def _merge(config: scenario.ScenarioConfig, seed: Optional[int], output_dir: Optional[str]):
    changes = {}
    defaults = attr.fields(scenario.ScenarioConfig)
    for name, flag in (("seed", seed), ("output_dir", output_dir)):
        if flag is None:
            continue
        current = getattr(config, name)
        default = getattr(defaults, name).default
        if current != default and current != flag:
            raise PinchflowCLIError(
                f"--{name.replace('_', '-')} conflicts with '{name}' in scenario {config.name}"
            )
        changes[name] = flag
    if not changes:
        return config
    return attr.evolve(config, **changes)


@click.group()
@click.option("--verbose", is_flag=True, default=False, help="Log debug messages")
def cli(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="[%(name)s] %(message)s",
    )


@cli.command()
@click.argument("configs", nargs=-1, required=True, type=click.Path())
@click.option("--jobs", type=int, default=1, help="Number of scenarios run concurrently")
@click.option("--seed", type=int, help="Seed (only when the scenario sets none)")
@click.option("--output-dir", help="Output directory (single scenario only)")
def run(configs: tuple[str, ...], jobs: int, seed: Optional[int], output_dir: Optional[str]):
    if output_dir is not None and len(configs) > 1:
        _fail("--output-dir can only be used with a single scenario")
    try:
        loaded = [_merge(scenario.load_scenario(path), seed, output_dir) for path in configs]
    except (ConfigurationError, AdmissibilityError, RangeError, PinchflowCLIError) as exc:
        _fail(str(exc))
    results = run_batch(
        [lambda config=config: scenario.run_scenario(config) for config in loaded],
        workers=jobs,
        names=[config.name for config in loaded],
    )
    code = EXIT_OK
    for job in results:
        if job.failed and isinstance(job.error, PinchflowException):
            click.echo(f"Error: scenario {job.name} failed: {job.error}", err=True)
            code = max(code, EXIT_CONFIG)
            continue
        if job.failed:
            # the traceback was logged by the job agent
            click.echo(
                f"Error: scenario {job.name} crashed: {type(job.error).__name__}: {job.error}",
                err=True,
            )
            code = max(code, EXIT_CRASH)
            continue
        for failure in job.value.failures:
            click.echo(f"Assertion failed in {job.name}: {failure.check} {failure.detail}", err=True)
            code = max(code, EXIT_ASSERTION)
        click.echo(f"{job.name}: {'pass' if job.value.passed else 'FAIL'} ({job.value.config.run_dir})")
    sys.exit(code)


@cli.command(name="verify-poincare")
@click.option("--n", "n", type=int, required=True)
@click.option("--m", "m", type=int, required=True)
@click.option("--alpha", type=float, required=True)
@click.option("--eta", type=float, required=True)
@click.option("--budget", type=int, default=60, help="Number of multistart starts")
@click.option("--seed", type=int, default=0)
@click.option("--jobs", type=int, default=1, help="Worker threads for the starts")
@click.option("--output", type=click.Path(), help="Write the certificate JSON here")
def verify_poincare(n, m, alpha, eta, budget, seed, jobs, output):
    params = _params(n=n, m=m, alpha=alpha)
    try:
        certificate = min_ratio(params, eta, budget=budget, seed=seed, workers=jobs)
        gap = multiplicity_gap_check(params, eta)
    except PinchflowException as exc:
        _fail(str(exc))
    if output:
        try:
            export.write_json({"certificate": certificate, "gap": gap.as_dict()}, output)
        except ConfigurationError as exc:
            _fail(str(exc))
    click.echo(f"gamma_hat ({certificate.label}): {certificate.gamma_hat!r}")
    if certificate.minimizer is not None:
        click.echo("witness: " + " ".join(export.format_float(x) for x in certificate.minimizer))
    click.echo(f"multiplicity gap: {'pass' if gap.passed else 'FAIL'}")
    if not certificate.feasible or not gap.passed:
        sys.exit(EXIT_ASSERTION)


@cli.command()
@click.option("--n", "n", type=int, required=True)
@click.option("--m", "m", type=int, required=True)
@click.option("--r0", type=float, required=True, help="Radius of the S^m factor (K=1 units)")
@click.option("--alpha", type=float, default=0.5)
@click.option("--K", "K", type=float, default=1.0)
@click.option("--horizon", type=float, default=1.0)
@click.option("--output", type=click.Path(), help="Write the trace CSV here")
def clifford(n, m, r0, alpha, K, horizon, output):
    params = _params(n=n, m=m, alpha=alpha, K=K)
    if not 0 < r0 < 1:
        _fail(f"r0 must lie in (0, 1), got {r0!r}")
    try:
        trace = homogeneous_flows.clifford_flow(params, math.acos(r0), horizon)
    except PinchflowException as exc:
        _fail(str(exc))
    if output:
        try:
            export.write_trace_csv(trace, output)
        except ConfigurationError as exc:
            _fail(str(exc))
    last = trace.snapshots[-1]
    click.echo(f"terminal: {trace.terminal.kind} at t={trace.terminal.t!r}")
    click.echo(f"phi={last.scalar_state!r} H={float(last.geometry.H[0])!r}")
    click.echo(f"linearization at the minimal torus: {homogeneous_flows.clifford_linearization(params)!r}")


@cli.command()
@click.option("--n", "n", type=int, required=True)
@click.option("--rho0", type=float, required=True)
@click.option("--m", "m", type=int, default=1)
@click.option("--alpha", type=float, default=0.5)
@click.option("--K", "K", type=float, default=1.0)
@click.option("--horizon", type=float, default=10.0)
@click.option("--output", type=click.Path(), help="Write the trace CSV here")
def sphere(n, rho0, m, alpha, K, horizon, output):
    params = _params(n=n, m=m, alpha=alpha, K=K)
    try:
        trace, record = homogeneous_flows.hyperparallel_flow(rho0, params, horizon)
    except PinchflowException as exc:
        _fail(str(exc))
    if output:
        try:
            export.write_trace_csv(trace, output)
        except ConfigurationError as exc:
            _fail(str(exc))
    click.echo(f"terminal: {trace.terminal.kind} at t={trace.terminal.t!r}")
    if record.extinct:
        click.echo(f"extinction time: {record.T!r} (closed form {record.T_closed_form!r})")

