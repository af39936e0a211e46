"""Campaign plans and reports."""

from __future__ import annotations

from typing import Annotated, Any

from pydantic import Field
from safir.pydantic import CamelCaseModel

from ..dynamics import GateReport, Layer
from ..exceptions import HqcError
from ..holonomy import GateKind


class RunRecord(CamelCaseModel):
    """One gate simulation to perform."""

    index: Annotated[int, Field(..., title="Position in the campaign")]

    kind: Annotated[GateKind, Field(..., title="Gate family")]

    layer: Annotated[Layer, Field(..., title="Simulation layer")]

    schedule_index: Annotated[
        int, Field(..., title="Loop within the expanded scenario")
    ]

    total_time: Annotated[float, Field(..., title="Loop time in us")]

    phi_c: Annotated[float, Field(..., title="Azimuth reached by the loop")]

    closed: Annotated[bool, Field(..., title="Loop carries its return leg")]

    directory: Annotated[
        str, Field(..., title="Output directory, relative to the campaign")
    ]

    axis_value: Annotated[
        float | str | None, Field(title="Sweep value of this run")
    ] = None

    scenario: Annotated[
        dict[str, Any] | None,
        Field(title="Validated scenario, when it differs per run"),
    ] = None


class CampaignPlan(CamelCaseModel):
    """Runs making up a campaign."""

    name: Annotated[str, Field(..., title="Scenario name")]

    config_hash: Annotated[
        str, Field(..., title="SHA-256 of the validated scenario and seed")
    ]

    axis: Annotated[str | None, Field(title="Sweep axis, if any")] = None

    runs: Annotated[list[RunRecord], Field(..., title="Runs to perform")]


class GateRecord(CamelCaseModel):
    """Outcome of one run, as written to the report."""

    run: Annotated[RunRecord, Field(..., title="Run this outcome is for")]

    fidelity: Annotated[float | None, Field(title="Gate fidelity")] = None

    berry_phase: Annotated[
        float | None, Field(title="Holonomy angle scored against")
    ] = None

    relative_phase: Annotated[
        float | None,
        Field(title="Phase of the last logical state against the first"),
    ] = None

    final_dark_leakage: Annotated[
        float | None, Field(title="Population outside the dark subspace")
    ] = None

    max_dark_leakage: Annotated[
        float | None, Field(title="Largest dark-subspace leakage")
    ] = None

    max_trace_error: Annotated[float | None, Field(title="Trace error")] = (
        None
    )

    max_hermiticity_correction: Annotated[
        float | None, Field(title="Largest symmetrization correction")
    ] = None

    min_eigenvalue: Annotated[
        float | None, Field(title="Smallest density-matrix eigenvalue")
    ] = None

    schedule_id: Annotated[str | None, Field(title="Loop identifier")] = None

    initial_label: Annotated[
        str | None, Field(title="Logical input state")
    ] = None

    parameters: Annotated[
        dict[str, float | str | bool],
        Field(title="Settings the run used"),
    ] = {}

    trajectory_csv: Annotated[
        str | None, Field(title="Trajectory file, relative")
    ] = None

    error: Annotated[str | None, Field(title="Failure message")] = None

    exit_status: Annotated[
        int, Field(title="Exit status of the failure category")
    ] = 0

    @classmethod
    def from_report(
        cls, run: RunRecord, report: GateReport, trajectory_csv: str | None
    ) -> GateRecord:
        return cls(
            run=run,
            fidelity=report.fidelity,
            berry_phase=report.ideal_angle,
            relative_phase=report.relative_phase,
            final_dark_leakage=report.final_dark_leakage,
            max_dark_leakage=report.max_dark_leakage,
            max_trace_error=report.max_trace_error,
            max_hermiticity_correction=report.max_hermiticity_correction,
            min_eigenvalue=report.min_eigenvalue,
            schedule_id=report.schedule_id,
            initial_label=report.initial_label,
            parameters=dict(report.parameters),
            trajectory_csv=trajectory_csv,
        )

    @classmethod
    def failed(cls, run: RunRecord, exc: HqcError) -> GateRecord:
        return cls(
            run=run,
            error=f"{type(exc).__name__}: {exc}",
            exit_status=exc.exit_status,
        )


class CheckRecord(CamelCaseModel):
    """Outcome of one consistency check run by ``hqc validate``."""

    name: Annotated[str, Field(..., title="Check name")]

    passed: Annotated[bool, Field(..., title="Whether the check passed")]

    value: Annotated[float, Field(..., title="Measured worst-case value")]

    bound: Annotated[float, Field(..., title="Allowed bound")]


class CampaignReport(CamelCaseModel):
    """Everything a campaign produced."""

    name: Annotated[str, Field(..., title="Scenario name")]

    version: Annotated[str, Field(..., title="hqc-shortcuts version")]

    config_hash: Annotated[str, Field(..., title="Scenario hash")]

    seed: Annotated[int, Field(..., title="Seed in effect")]

    scenario: Annotated[
        dict[str, Any], Field(..., title="Validated scenario with defaults")
    ]

    axis: Annotated[str | None, Field(title="Sweep axis, if any")] = None

    results: Annotated[list[GateRecord], Field(..., title="Run outcomes")]

    in_band: Annotated[
        list[int],
        Field(title="Runs whose fidelity lies in the target band"),
    ] = []

    checks: Annotated[
        list[CheckRecord], Field(title="Consistency checks")
    ] = []

    manifest: Annotated[
        list[str], Field(title="Files written, relative, sorted")
    ] = []

    @property
    def failures(self) -> list[GateRecord]:
        return [r for r in self.results if r.error is not None]
