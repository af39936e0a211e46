"""Test planning, running and reporting campaigns."""

from pathlib import Path

import numpy as np
import pytest
import yaml
from hqc_shortcuts.campaign import Campaign
from hqc_shortcuts.exceptions import (
    PlanNotReadyError,
    UnknownAxisError,
    ValidationError,
)
from hqc_shortcuts.models.config import Config

from .util import support_file, write_scenario


@pytest.mark.asyncio
async def test_plan(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    plan = await campaign.plan()
    assert plan.name == "phase_quick"
    assert plan.axis is None
    assert len(plan.runs) == 1
    assert plan.runs[0].directory == "run-000"
    assert plan.runs[0].total_time == pytest.approx(1.0)
    assert len(plan.config_hash) == 64
    assert campaign.seed == 7


@pytest.mark.asyncio
async def test_noplan(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    with pytest.raises(PlanNotReadyError):
        await campaign.run()
    with pytest.raises(PlanNotReadyError):
        await campaign.report()
    with pytest.raises(PlanNotReadyError):
        _ = campaign.output_dir


@pytest.mark.asyncio
async def test_plan_only_report(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    await campaign.plan()
    with pytest.raises(PlanNotReadyError):
        await campaign.report()


@pytest.mark.asyncio
async def test_run_and_report(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    await campaign.plan()
    (record,) = await campaign.run()
    assert record.error is None
    assert record.fidelity is not None
    assert record.fidelity >= 1 - 1e-6
    assert record.berry_phase == pytest.approx(-np.pi / 2, abs=1e-6)

    report = await campaign.report()
    out = campaign_config.output_root / "phase_quick"
    assert campaign.output_dir == out
    assert report.manifest == ["run-000/trajectory.csv", "summary.txt"]
    assert report.failures == []
    for name in report.manifest:
        assert (out / name).is_file()
    trajectory = (out / "run-000" / "trajectory.csv").read_text().splitlines()
    assert trajectory[0] == "t_us,dark_leakage,norm_error,t_over_T"
    assert len(trajectory) == 22
    assert trajectory[-1].endswith(",1")

    saved = yaml.safe_load((out / "report.yaml").read_text())
    assert saved["name"] == "phase_quick"
    assert saved["seed"] == 7
    assert saved["scenario"]["holonomy"]["phi_c"] == pytest.approx(np.pi / 2)
    assert "wall_time" not in saved["results"][0]
    summary = (out / "summary.txt").read_text()
    assert "[000] phase on dfs_abstract" in summary


@pytest.mark.asyncio
async def test_seed_override(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    first = await campaign.plan()
    campaign_config.seed = 11
    second = await Campaign(config=campaign_config).plan()
    assert first.config_hash != second.config_hash


@pytest.mark.asyncio
async def test_scenario_sweep(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    campaign.set_scenario_file(support_file("sweep.yaml"))
    plan = await campaign.plan()
    assert plan.axis == "phi_c"
    assert [run.axis_value for run in plan.runs] == pytest.approx(
        [np.pi / 4, np.pi / 2, np.pi]
    )
    results = await campaign.run()
    for record in results:
        assert record.error is None
        assert record.run.axis_value is not None
        assert record.berry_phase == pytest.approx(
            -float(record.run.axis_value), abs=1e-6
        )
    report = await campaign.report()
    assert "sweep.csv" in report.manifest
    rows = (
        (campaign_config.output_root / "phi_c_sweep" / "sweep.csv")
        .read_text()
        .splitlines()
    )
    assert rows[0] == (
        "phi_c,fidelity,berry_phase,relative_phase,final_dark_leakage,"
        "max_dark_leakage,total_time,error"
    )
    assert len(rows) == 4


@pytest.mark.asyncio
async def test_failed_row_continues(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    campaign.set_sweep("phi_c", ["pi/4", 7.0, "pi/2"])
    plan = await campaign.plan()
    assert len(plan.runs) == 3
    results = await campaign.run()
    assert results[0].error is None
    assert results[2].error is None
    failed = results[1]
    assert failed.error is not None
    assert failed.error.startswith("ScenarioError")
    assert failed.exit_status == 2
    assert failed.fidelity is None

    report = await campaign.report()
    assert report.failures == [failed]
    rows = (campaign.output_dir / "sweep.csv").read_text().splitlines()
    assert rows[2].startswith("7,,,,,,,")
    assert "FAILED" in (campaign.output_dir / "summary.txt").read_text()


def test_set_sweep_errors(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    with pytest.raises(ValidationError):
        campaign.set_sweep("phi_c", [])
    with pytest.raises(UnknownAxisError):
        campaign.set_sweep("seed", [1])
    with pytest.raises(UnknownAxisError):
        campaign.set_sweep("dynamics.phi_c", [1.0])


@pytest.mark.asyncio
async def test_total_time_sweep_is_flat(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    campaign.set_sweep("total_time", [0.1, "500 ns", 2.0])
    await campaign.plan()
    fidelities = [r.fidelity or 0.0 for r in await campaign.run()]
    assert min(fidelities) >= 1 - 1e-4
    assert max(fidelities) - min(fidelities) <= 1e-4


@pytest.mark.asyncio
async def test_kappa_sweep(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    campaign.set_scenario_file(support_file("effective.yaml"))
    campaign.set_sweep("kappa", [0.0, "2pi x 1 MHz", "2pi x 10 MHz"])
    await campaign.plan()
    fidelities = [r.fidelity or 0.0 for r in await campaign.run()]
    assert fidelities[0] > fidelities[1] > fidelities[2]


@pytest.mark.asyncio
async def test_parallel_matches_serial(campaign_config: Config) -> None:
    campaign_config.scenario_file = support_file("sweep.yaml")
    serial = Campaign(config=campaign_config)
    await serial.plan()
    expected = [r.fidelity for r in await serial.run()]

    campaign_config.jobs = 2
    parallel = Campaign(config=campaign_config)
    await parallel.plan()
    fidelities = [r.fidelity for r in await parallel.run()]
    assert fidelities == pytest.approx(expected, rel=1e-12)


@pytest.mark.asyncio
async def test_report_is_reproducible(
    campaign_config: Config, fake_root: Path
) -> None:
    contents = []
    for root in ("a", "b"):
        campaign_config.output_root = fake_root / root
        campaign = Campaign(config=campaign_config)
        await campaign.plan()
        await campaign.run()
        await campaign.report()
        contents.append((campaign.output_dir / "report.yaml").read_bytes())
    assert contents[0] == contents[1]


@pytest.mark.asyncio
async def test_validate(campaign_config: Config) -> None:
    campaign = Campaign(config=campaign_config)
    checks = await campaign.validate()
    assert [c.name for c in checks] == [
        "dark_state_annihilation",
        "counterdiabatic_cross_oracle",
        "counterdiabatic_gauge_invariance",
        "holonomy_solid_angle",
    ]
    assert all(c.passed for c in checks)
    report = await campaign.report()
    assert report.results == []
    assert report.checks == checks
    assert report.manifest == ["summary.txt"]


@pytest.mark.asyncio
async def test_validate_bitphase(
    campaign_config: Config, fake_root: Path
) -> None:
    campaign_config.scenario_file = write_scenario(
        fake_root,
        "phase.yaml",
        holonomy={"kind": "bitphase", "total_time": 1.0},
        dynamics={"initial_state": "0L"},
    )
    checks = await Campaign(config=campaign_config).validate()
    assert len(checks) == 3
    assert all(c.passed for c in checks)


@pytest.mark.asyncio
async def test_bitphase_closure_comparison(
    campaign_config: Config, fake_root: Path
) -> None:
    campaign_config.scenario_file = write_scenario(
        fake_root,
        "phase.yaml",
        holonomy={
            "kind": "bitphase",
            "total_time": 0.4,
            "compare_closure": True,
        },
        dynamics={"initial_state": "0L", "samples": 5},
    )
    campaign = Campaign(config=campaign_config)
    plan = await campaign.plan()
    assert [run.closed for run in plan.runs] == [True, False]
    closed, open_loop = await campaign.run()
    assert closed.fidelity is not None
    assert closed.fidelity >= 1 - 1e-4
    assert open_loop.error is None
