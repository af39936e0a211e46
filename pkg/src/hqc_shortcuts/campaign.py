"""The Campaign class plans gate simulations from a scenario file, runs
them, and reports the results.
"""

import asyncio
import csv
import hashlib
import json
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
import structlog
import yaml
from pydantic import ValidationError as PydanticValidationError
from safir.logging import configure_logging
from safir.slack.blockkit import SlackMessage, SlackTextBlock
from safir.slack.webhook import SlackWebhookClient

from .constants import (
    FD_STEP_FRACTION,
    ROOT_LOGGER,
    TWO_PI,
)
from .dynamics import format_number, run_gate, write_trajectory_csv
from .exceptions import (
    HqcError,
    PlanNotReadyError,
    ScenarioError,
    ValidationError,
)
from .holonomy import (
    CdMethod,
    GateKind,
    build_h0,
    dark_states,
    gate_hamiltonian,
    solid_angle_phase,
    wilson_loop,
)
from .models.config import Config
from .models.plan import (
    CampaignPlan,
    CampaignReport,
    CheckRecord,
    GateRecord,
    RunRecord,
)
from .models.v1.scenario import (
    Scenario,
    load_scenario,
    resolve_axis,
    scenario_error,
)
from .qcore import HilbertLayout, Ket
from .tqda import (
    ControlPoint,
    cd_bitphase_closed_form,
    cd_cp_closed_form,
    cd_phase_closed_form,
    counterdiabatic_numeric,
)

__all__ = ["Campaign", "execute_run"]

SWEEP_COLUMNS = (
    "fidelity",
    "berry_phase",
    "relative_phase",
    "final_dark_leakage",
    "max_dark_leakage",
    "total_time",
    "error",
)

_GAUGE_TOL = 1e-8

_CLOSED_FORMS = {
    GateKind.BITPHASE: cd_bitphase_closed_form,
    GateKind.PHASE: cd_phase_closed_form,
    GateKind.CP: cd_cp_closed_form,
}


def _package_version() -> str:
    try:
        return version("hqc-shortcuts")
    except PackageNotFoundError:
        return "0.0.0"


def execute_run(
    scenario: Scenario, run: RunRecord, root: Path
) -> tuple[GateRecord, float]:
    """Perform one planned run; return its record and wall time.

    Package errors are recorded on the returned record instead of raised.
    This is a module-level function so that worker processes can run it.
    """
    if run.scenario is not None:
        try:
            scenario = Scenario.model_validate(run.scenario)
        except PydanticValidationError as exc:
            return GateRecord.failed(run, scenario_error(exc)), 0.0
        except HqcError as exc:
            return GateRecord.failed(run, exc), 0.0
    try:
        enc = scenario.holonomy.encoding()
        lam = scenario.nvplatform.resolved_lambda_prime()
        _, schedule = scenario.holonomy.schedules(lam)[run.schedule_index]
        dyn = scenario.dynamics
        psi_in = Ket(
            layout=HilbertLayout.single("logical", enc.logical_dim),
            amplitudes=dyn.initial_amplitudes(enc),
        )
        report = run_gate(
            scenario.holonomy.kind,
            schedule,
            dyn.layer,
            dyn.rates(),
            psi_in,
            enc=enc,
            platform=scenario.nvplatform.platform(),
            cd_method=dyn.cd_method,
            samples=dyn.samples,
            tol=dyn.tol,
            initial_label=dyn.initial_label,
        )
    except HqcError as exc:
        return GateRecord.failed(run, exc), 0.0
    relative = f"{run.directory}/trajectory.csv"
    trajectory = report.trajectory
    if trajectory is None:
        return GateRecord.from_report(run, report, None), report.wall_time
    duration = report.duration or 1.0
    write_trajectory_csv(
        trajectory,
        root / relative,
        observables={"t_over_T": trajectory.times / duration},
    )
    return GateRecord.from_report(run, report, relative), report.wall_time


class Campaign:
    """Object to plan, run and report gate-simulation campaigns."""

    def __init__(
        self, config: Config, logger: structlog.BoundLogger | None = None
    ) -> None:
        self._config = config
        if logger is None:
            self._logger = structlog.get_logger(ROOT_LOGGER)
            configure_logging(
                name=ROOT_LOGGER,
                profile=config.logging.profile,
                log_level=config.logging.log_level,
                add_timestamp=config.logging.add_timestamp,
            )
        else:
            self._logger = logger
        self._logger.debug("Campaign initialized")
        self._lock = asyncio.Lock()
        self._axis: str | None = None
        self._values: list[float | str] = []
        self._scenario: Scenario | None = None
        self._plan: CampaignPlan | None = None
        self._results: list[GateRecord] | None = None
        self._wall_times: dict[int, float] = {}
        self._checks: list[CheckRecord] = []

    def set_scenario_file(self, scenario_file: Path) -> None:
        old = self._config.scenario_file
        self._config.scenario_file = scenario_file
        self._logger.debug(
            f"Reset scenario file: '{old}' -> '{scenario_file}'"
        )

    def set_sweep(self, axis: str, values: Sequence[float | str]) -> None:
        """Vary ``axis`` over ``values`` instead of the scenario's sweep."""
        resolve_axis(axis)
        if not values:
            raise ValidationError(f"Sweep over '{axis}' has no values")
        self._axis = axis
        self._values = list(values)

    @property
    def seed(self) -> int:
        if self._config.seed is not None:
            return self._config.seed
        return self._scenario.seed if self._scenario else 0

    @property
    def output_dir(self) -> Path:
        if self._scenario is None:
            raise PlanNotReadyError("No scenario loaded yet")
        return self._config.output_root / self._scenario.name

    def load_scenario(self) -> Scenario:
        """Read and validate the scenario file."""
        path = self._config.scenario_file
        if path is None:
            raise ScenarioError("No scenario file given", field="config")
        self._logger.debug(f"Loading scenario from {path}")
        try:
            doc = yaml.safe_load(path.read_text())
        except (FileNotFoundError, UnicodeDecodeError) as exc:
            raise ScenarioError(
                f"Cannot read scenario file {path}: {exc}"
            ) from exc
        except yaml.YAMLError as exc:
            raise ScenarioError(f"Scenario file {path} is not YAML") from exc
        return load_scenario(doc)

    def _config_hash(self, scenario: Scenario) -> str:
        canonical = json.dumps(
            scenario.model_dump(mode="json", by_alias=False), sort_keys=True
        )
        digest = hashlib.sha256(f"{canonical}|{self.seed}".encode())
        return digest.hexdigest()

    async def plan(self) -> CampaignPlan:
        """Load the scenario and expand it into runs.  Only one operation
        may be in progress, hence the lock.
        """
        self._logger.debug("Attempting to acquire lock for plan()")
        async with self._lock:
            self._logger.debug("Lock for plan() acquired.")
            scenario = self.load_scenario()
            self._scenario = scenario
            self._plan = None
            self._results = None
            axis, values = self._axis, self._values
            if axis is None and scenario.sweep is not None:
                axis, values = scenario.sweep.axis, scenario.sweep.values
                resolve_axis(axis)
            if axis is None:
                runs = self._expand(scenario, start=0)
            else:
                runs = []
                for value in values:
                    runs.extend(
                        self._expand_value(scenario, axis, value, len(runs))
                    )
            self._plan = CampaignPlan(
                name=scenario.name,
                config_hash=self._config_hash(scenario),
                axis=axis,
                runs=runs,
            )
            self._logger.debug(f"Planned {len(runs)} runs")
            return self._plan

    def _expand(
        self,
        scenario: Scenario,
        start: int,
        axis_value: float | str | None = None,
        *,
        embed: bool = False,
    ) -> list[RunRecord]:
        lam = scenario.nvplatform.resolved_lambda_prime()
        runs = []
        for offset, (closed, schedule) in enumerate(
            scenario.holonomy.schedules(lam)
        ):
            index = start + offset
            runs.append(
                RunRecord(
                    index=index,
                    kind=scenario.holonomy.kind,
                    layer=scenario.dynamics.layer,
                    schedule_index=offset,
                    total_time=schedule.duration,
                    phi_c=scenario.holonomy.phi_c,
                    closed=closed,
                    directory=f"run-{index:03d}",
                    axis_value=axis_value,
                    scenario=(
                        scenario.model_dump(mode="json", by_alias=False)
                        if embed
                        else None
                    ),
                )
            )
        return runs

    def _expand_value(
        self, scenario: Scenario, axis: str, value: float | str, start: int
    ) -> list[RunRecord]:
        try:
            varied = scenario.with_value(axis, value)
        except (PydanticValidationError, HqcError):
            # Recorded as a failed row when the run executes.
            return [
                RunRecord(
                    index=start,
                    kind=scenario.holonomy.kind,
                    layer=scenario.dynamics.layer,
                    schedule_index=0,
                    total_time=0.0,
                    phi_c=scenario.holonomy.phi_c,
                    closed=scenario.holonomy.close_loop,
                    directory=f"run-{start:03d}",
                    axis_value=value,
                    scenario=scenario.raw_with_value(axis, value),
                )
            ]
        parsed = varied.axis_value(axis)
        shown = float(parsed) if parsed is not None else None
        return self._expand(varied, start, shown, embed=True)

    async def run(self) -> list[GateRecord]:
        """Execute the plan, in worker processes when ``jobs`` > 1."""
        if self._plan is None or self._scenario is None:
            raise PlanNotReadyError("Cannot run: plan not ready")
        self._logger.debug("Awaiting lock for run()")
        async with self._lock:
            self._logger.debug("Acquired lock for run()")
            root = self.output_dir
            root.mkdir(parents=True, exist_ok=True)
            scenario = self._scenario
            runs = self._plan.runs
            if self._config.jobs > 1 and len(runs) > 1:
                loop = asyncio.get_running_loop()
                with ProcessPoolExecutor(
                    max_workers=self._config.jobs
                ) as pool:
                    outcomes = await asyncio.gather(
                        *(
                            loop.run_in_executor(
                                pool, execute_run, scenario, run, root
                            )
                            for run in runs
                        )
                    )
            else:
                outcomes = [execute_run(scenario, run, root) for run in runs]
            self._results = [record for record, _ in outcomes]
            self._wall_times = {
                run.index: wall
                for run, (_, wall) in zip(runs, outcomes, strict=True)
            }
            for record in self._results:
                if record.error:
                    self._logger.warning(
                        f"Run {record.run.index} failed: {record.error}"
                    )
                else:
                    self._logger.info(
                        f"Run {record.run.index}: fidelity"
                        f" {record.fidelity:.6f}",
                        schedule=record.schedule_id,
                    )
            return self._results

    async def validate(self) -> list[CheckRecord]:
        """Run seeded consistency checks on the scenario's gate family."""
        async with self._lock:
            scenario = self.load_scenario()
            self._scenario = scenario
            rng = np.random.default_rng(self.seed)
            self._checks = _consistency_checks(scenario, rng)
            for check in self._checks:
                log = self._logger.info if check.passed else self._logger.error
                log(
                    f"Check {check.name}: {check.value:.3e}"
                    f" (bound {check.bound:.1e})"
                )
            return self._checks

    async def report(self) -> CampaignReport:
        """Write report.yaml, summary.txt and, for sweeps, sweep.csv."""
        if self._scenario is None or (
            self._results is None and not self._checks
        ):
            raise PlanNotReadyError("Cannot report: nothing has run")
        self._logger.debug("Awaiting lock for report()")
        async with self._lock:
            self._logger.debug("Acquired lock for report()")
            scenario = self._scenario
            root = self.output_dir
            root.mkdir(parents=True, exist_ok=True)
            results = self._results or []
            axis = self._plan.axis if self._plan else None
            written = [
                r.trajectory_csv for r in results if r.trajectory_csv
            ]
            if axis is not None:
                self._write_sweep_csv(root / "sweep.csv", axis, results)
                written.append("sweep.csv")
            written.append("summary.txt")
            report = CampaignReport(
                name=scenario.name,
                version=_package_version(),
                config_hash=self._config_hash(scenario),
                seed=self.seed,
                scenario=scenario.model_dump(mode="json", by_alias=False),
                axis=axis,
                results=results,
                in_band=_in_band(scenario, results),
                checks=self._checks,
                manifest=sorted(written),
            )
            (root / "summary.txt").write_text(self._summary(report))
            (root / "report.yaml").write_text(
                yaml.safe_dump(
                    report.model_dump(mode="json", by_alias=False),
                    sort_keys=True,
                )
            )
            if report.failures and self._config.alert_hook is not None:
                await self._alert(report)
            return report

    def _write_sweep_csv(
        self, path: Path, axis: str, results: Sequence[GateRecord]
    ) -> None:
        _, name = resolve_axis(axis)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([name, *SWEEP_COLUMNS])
            for r in results:
                row = {
                    "fidelity": r.fidelity,
                    "berry_phase": r.berry_phase,
                    "relative_phase": r.relative_phase,
                    "final_dark_leakage": r.final_dark_leakage,
                    "max_dark_leakage": r.max_dark_leakage,
                    "total_time": r.run.total_time if not r.error else None,
                    "error": r.error,
                }
                writer.writerow(
                    [
                        _cell(r.run.axis_value),
                        *(_cell(row[c]) for c in SWEEP_COLUMNS),
                    ]
                )

    def _summary(self, report: CampaignReport) -> str:
        lines = [
            f"Campaign {report.name} (hqc-shortcuts {report.version})",
            f"Scenario hash {report.config_hash}, seed {report.seed}",
            "",
        ]
        for r in report.results:
            run = r.run
            head = (
                f"[{run.index:03d}] {run.kind} on {run.layer},"
                f" T = {run.total_time:.4g} us"
            )
            if run.axis_value is not None:
                head += f", {report.axis} = {run.axis_value}"
            if r.error:
                lines.append(f"{head}: FAILED {r.error}")
                continue
            wall = self._wall_times.get(run.index, 0.0)
            lines.append(
                f"{head}: F = {r.fidelity:.6f},"
                f" holonomy angle {r.berry_phase:.6f} rad,"
                f" max leakage {r.max_dark_leakage:.2e}"
                f" ({wall:.1f} s)"
            )
        if report.in_band:
            lines.append("")
            lines.append(
                "In target band: "
                + ", ".join(f"[{i:03d}]" for i in report.in_band)
            )
        for check in report.checks:
            status = "ok" if check.passed else "FAILED"
            lines.append(
                f"check {check.name}: {check.value:.3e} <= {check.bound:.1e}"
                f" {status}"
            )
        return "\n".join(lines) + "\n"

    async def _alert(self, report: CampaignReport) -> None:
        hook = self._config.alert_hook
        if hook is None:
            return
        client = SlackWebhookClient(str(hook), "hqc-shortcuts", self._logger)
        text = "\n".join(
            f"[{r.run.index:03d}] {r.error}" for r in report.failures
        )
        message = SlackMessage(
            message=f"Campaign {report.name}: {len(report.failures)} failed",
            blocks=[SlackTextBlock(heading="Failed runs", text=text)],
        )
        await client.post(message)


def _cell(value: float | str | bool | None) -> str:
    if value is None:
        return ""
    if isinstance(value, bool) or not isinstance(value, float):
        return str(value)
    return format_number(value)


def _in_band(scenario: Scenario, results: Sequence[GateRecord]) -> list[int]:
    target = scenario.target_fidelity
    if target is None:
        return []
    return [
        r.run.index
        for r in results
        if r.fidelity is not None and abs(r.fidelity - target) <= scenario.band
    ]


def _random_point(rng: np.random.Generator) -> ControlPoint:
    return ControlPoint(
        theta=float(rng.uniform(0.0, np.pi)),
        phi=float(rng.uniform(0.0, TWO_PI)),
        theta_dot=float(rng.normal()),
        phi_dot=float(rng.normal()),
        lambda_prime=float(rng.uniform(0.5, 2.0)),
    )


def _consistency_checks(
    scenario: Scenario, rng: np.random.Generator
) -> list[CheckRecord]:
    kind = scenario.holonomy.kind
    enc = scenario.holonomy.encoding()
    lam = scenario.nvplatform.resolved_lambda_prime()
    _, schedule = scenario.holonomy.schedules(lam)[0]
    checks = []

    worst = 0.0
    for _ in range(100):
        p = _random_point(rng)
        h0 = build_h0(kind, p, enc).matrix
        for dark in dark_states(kind, p, enc):
            residual = np.linalg.norm(h0 @ dark.amplitudes) / p.lambda_prime
            worst = max(worst, float(residual))
    checks.append(
        CheckRecord(
            name="dark_state_annihilation",
            passed=worst <= 1e-12,
            value=worst,
            bound=1e-12,
        )
    )

    hd = gate_hamiltonian(kind, schedule, enc, CdMethod.NONE)
    step = FD_STEP_FRACTION * schedule.shortest_segment
    times = rng.uniform(0.0, schedule.duration, size=10)
    cross = 0.0
    gauge = 0.0
    for t in times:
        numeric = counterdiabatic_numeric(hd, float(t), step)
        closed_form = _CLOSED_FORMS[kind](schedule.control_point(float(t)))
        scale = max(1.0, float(np.max(np.abs(closed_form.matrix.matrix))))
        cross = max(
            cross,
            float(
                np.max(
                    np.abs(
                        numeric.matrix.matrix - closed_form.matrix.matrix
                    )
                )
            )
            / scale,
        )
        remixed = counterdiabatic_numeric(hd, float(t), step, rng=rng)
        gauge = max(
            gauge,
            float(
                np.max(np.abs(numeric.matrix.matrix - remixed.matrix.matrix))
            )
            / scale,
        )
    checks.append(
        CheckRecord(
            name="counterdiabatic_cross_oracle",
            passed=cross <= 1e-6,
            value=cross,
            bound=1e-6,
        )
    )
    checks.append(
        CheckRecord(
            name="counterdiabatic_gauge_invariance",
            passed=gauge <= _GAUGE_TOL,
            value=gauge,
            bound=_GAUGE_TOL,
        )
    )

    if kind != GateKind.BITPHASE:
        holonomy = wilson_loop(kind, schedule, enc=enc)
        gap = abs((holonomy.berry_phase or 0.0) - solid_angle_phase(schedule))
        checks.append(
            CheckRecord(
                name="holonomy_solid_angle",
                passed=gap <= 1e-6,
                value=gap,
                bound=1e-6,
            )
        )
    return checks
