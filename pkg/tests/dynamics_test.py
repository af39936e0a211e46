"""Test propagation and gate simulation."""

from pathlib import Path

import numpy as np
import pytest
from hqc_shortcuts import dynamics
from hqc_shortcuts.constants import SUPEROPERATOR_MAX_SIDE, TWO_PI
from hqc_shortcuts.dynamics import (
    DecayRates,
    Layer,
    LindbladModel,
    Trajectory,
    collective_channels,
    logical_unitary,
    propagate_lindblad,
    propagate_unitary,
    run_gate,
    write_trajectory_csv,
)
from hqc_shortcuts.exceptions import LayoutError, ValidationError
from hqc_shortcuts.holonomy import (
    C1,
    C2,
    CdMethod,
    GateKind,
    PulseSchedule,
    cp_encoding_for,
    ideal_gate,
    make_schedule,
    split_total_time,
)
from hqc_shortcuts.nvplatform import PlatformSettings
from hqc_shortcuts.qcore import (
    DensityMatrix,
    HilbertLayout,
    Ket,
    Op,
    propagator_step,
    sigma_minus,
    sigma_z,
)
from hqc_shortcuts.tqda import ParamHamiltonian

from .util import random_hermitian

LAMBDA_PRIME = TWO_PI * 3.4375
CYCLE = TWO_PI / LAMBDA_PRIME
PLATFORM = PlatformSettings(
    g=TWO_PI * 50.0,
    detunings=(TWO_PI * 4000.0, TWO_PI * 400.0, TWO_PI * 400.0),
    dispersive_guard=False,
)
MICROSPHERE_RATES = DecayRates(
    kappa=TWO_PI * 0.0748, gamma=TWO_PI * 0.004, gamma_phi=TWO_PI * 0.004
)


def logical(amplitudes: list[complex]) -> Ket:
    vector = np.asarray(amplitudes, dtype=complex)
    return Ket(
        layout=HilbertLayout.single("logical", vector.size),
        amplitudes=vector / np.linalg.norm(vector),
    )


def phase_schedule(total: float, phi_c: float = np.pi / 2) -> PulseSchedule:
    return make_schedule(
        GateKind.PHASE,
        phi_c,
        [total / 3] * 3,
        lambda_prime=LAMBDA_PRIME,
    )


def zero_hamiltonian(layout: HilbertLayout) -> ParamHamiltonian:
    dim = layout.total_dim
    return ParamHamiltonian(
        layout=layout, generator=lambda t, p: np.zeros((dim, dim))
    )


def test_constant_hamiltonian(rng: np.random.Generator) -> None:
    layout = HilbertLayout.single("x", 4)
    h = Op(layout=layout, matrix=random_hermitian(rng, 4), hermitian=True)
    psi0 = Ket.basis(layout, 0)
    trajectory = propagate_unitary(
        ParamHamiltonian.constant(h), psi0, [0.0, 0.5, 1.0], tol=1e-11
    )
    final = trajectory.final
    assert isinstance(final, Ket)
    expected = propagator_step(h, 1.0).apply(psi0)
    assert np.max(np.abs(final.amplitudes - expected.amplitudes)) <= 1e-9
    assert trajectory.diagnostics["norm_error"].shape == (3,)


def test_bad_grid() -> None:
    layout = HilbertLayout.single("q", 2)
    with pytest.raises(ValidationError):
        propagate_unitary(
            zero_hamiltonian(layout), Ket.basis(layout, 0), [0.0, 0.0]
        )


def test_amplitude_damping() -> None:
    layout = HilbertLayout.single("q", 2)
    rate = 0.7
    model = LindbladModel(
        hamiltonian=zero_hamiltonian(layout),
        channels=((Op(layout=layout, matrix=sigma_minus()), rate),),
    )
    grid = np.linspace(0.0, 2.0, 5)
    trajectory = propagate_lindblad(
        model, Ket.basis(layout, 1).to_density(), grid, tol=1e-10
    )
    for t, state in zip(grid, trajectory.states, strict=True):
        assert isinstance(state, DensityMatrix)
        assert state.matrix[1, 1].real == pytest.approx(
            np.exp(-rate * t), abs=1e-8
        )
    assert np.max(trajectory.diagnostics["trace_error"]) <= 1e-8


def test_dephasing() -> None:
    layout = HilbertLayout.single("q", 2)
    rate = 0.3
    model = LindbladModel(
        hamiltonian=zero_hamiltonian(layout),
        channels=((Op(layout=layout, matrix=sigma_z()), rate),),
    )
    plus = Ket(layout=layout, amplitudes=np.array([1, 1]) / np.sqrt(2))
    trajectory = propagate_lindblad(
        model, plus.to_density(), [0.0, 1.0], tol=1e-10
    )
    final = trajectory.final
    assert isinstance(final, DensityMatrix)
    assert final.matrix[0, 1].real == pytest.approx(
        0.5 * np.exp(-2 * rate), abs=1e-8
    )


def test_dense_and_direct_dissipators_agree(
    monkeypatch: pytest.MonkeyPatch, rng: np.random.Generator
) -> None:
    # Four qubits' worth of Liouville space is the largest kept dense.
    assert SUPEROPERATOR_MAX_SIDE == 16**2
    layout = HilbertLayout.single("q", 3)
    h = Op(layout=layout, matrix=random_hermitian(rng, 3), hermitian=True)
    lower = np.diag([1.0, 1.0], k=1)
    model = LindbladModel(
        hamiltonian=ParamHamiltonian.constant(h),
        channels=(
            (Op(layout=layout, matrix=lower), 0.4),
            (Op(layout=layout, matrix=np.diag([0.0, 1.0, 2.0])), 0.2),
        ),
    )
    rho0 = Ket.basis(layout, 2).to_density()
    dense = propagate_lindblad(model, rho0, [0.0, 1.5], tol=1e-11).final
    monkeypatch.setattr(dynamics, "SUPEROPERATOR_MAX_SIDE", 0)
    direct = propagate_lindblad(model, rho0, [0.0, 1.5], tol=1e-11).final
    assert isinstance(dense, DensityMatrix)
    assert isinstance(direct, DensityMatrix)
    assert np.max(np.abs(dense.matrix - direct.matrix)) <= 1e-8


def test_integrator_tolerance_convergence(rng: np.random.Generator) -> None:
    layout = HilbertLayout.single("x", 4)
    h = Op(layout=layout, matrix=random_hermitian(rng, 4), hermitian=True)
    psi0 = Ket.basis(layout, 0)
    expected = propagator_step(h, 5.0).apply(psi0).amplitudes

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return -1j * (h.matrix @ y)

    errors = [
        np.max(
            np.abs(
                dynamics._integrate(rhs, 0.0, 5.0, psi0.amplitudes, tol)
                - expected
            )
        )
        for tol in (1e-4, 1e-6, 1e-8)
    ]
    assert errors[1] <= errors[0]
    assert errors[2] <= errors[1]
    assert errors[2] <= 1e-6
    assert errors[2] * 10 <= errors[0]


def test_lindblad_rejects_bad_state() -> None:
    layout = HilbertLayout.single("q", 2)
    model = LindbladModel(hamiltonian=zero_hamiltonian(layout))
    bad = DensityMatrix(layout=layout, matrix=np.diag([1.0, 1.0]))
    with pytest.raises(ValidationError):
        propagate_lindblad(model, bad, [0.0, 1.0])


def test_channel_layout_checks() -> None:
    layout = HilbertLayout.single("q", 2)
    other = HilbertLayout.single("r", 2)
    with pytest.raises(LayoutError):
        LindbladModel(
            hamiltonian=zero_hamiltonian(layout),
            channels=((Op.identity(other), 1.0),),
        )
    with pytest.raises(ValidationError):
        DecayRates(kappa=-1.0)


def test_abstract_layer_channels() -> None:
    with pytest.raises(LayoutError):
        collective_channels(Layer.DFS_ABSTRACT, DecayRates(gamma=1.0), C1)
    with pytest.raises(LayoutError):
        collective_channels(Layer.DFS_ABSTRACT, DecayRates(kappa=1.0), C1)
    ((op, rate),) = collective_channels(
        Layer.DFS_ABSTRACT, DecayRates(gamma_phi=0.5), C1
    )
    assert rate == 0.5
    # Every C1 state has one excitation, so dephasing is a constant.
    assert np.allclose(op.matrix, 2 * np.eye(4))


def test_identity_schedule() -> None:
    report = run_gate(
        GateKind.PHASE, PulseSchedule(segments=(), lambda_prime=1.0)
    )
    assert report.fidelity == pytest.approx(1.0)
    assert report.duration == 0.0
    assert report.ideal_angle == 0.0


@pytest.mark.parametrize("phi_c", [np.pi / 4, np.pi / 2])
def test_cp_bell_state(phi_c: float) -> None:
    schedule = make_schedule(
        GateKind.CP, phi_c, [0.1, 0.1, 0.1], lambda_prime=LAMBDA_PRIME
    )
    report = run_gate(
        GateKind.CP, schedule, psi_in=logical([1, 0, 0, 1]), samples=11
    )
    assert report.fidelity >= 1 - 1e-4
    assert report.relative_phase is not None
    assert abs(report.relative_phase + phi_c) <= 1e-3
    assert report.ideal_angle == pytest.approx(-phi_c, abs=1e-6)


def test_logical_unitary() -> None:
    schedule = phase_schedule(0.3)
    simulated = logical_unitary(GateKind.PHASE, schedule)
    expected = ideal_gate(GateKind.PHASE, -np.pi / 2).matrix
    assert np.max(np.abs(simulated - expected)) <= 1e-6


@pytest.mark.parametrize("cycles", [0.1, 1.0, 10.0])
def test_transitionless_leakage(cycles: float) -> None:
    report = run_gate(
        GateKind.PHASE,
        phase_schedule(cycles * CYCLE),
        psi_in=logical([0, 1]),
        samples=21,
    )
    assert report.max_dark_leakage <= 1e-6
    assert report.fidelity >= 1 - 1e-6


@pytest.mark.parametrize("cycles", [0.1, 1.0, 10.0])
def test_bitphase_transitionless_leakage(cycles: float) -> None:
    schedule = make_schedule(
        GateKind.BITPHASE,
        np.pi / 2,
        split_total_time(GateKind.BITPHASE, cycles * CYCLE),
        lambda_prime=LAMBDA_PRIME,
    )
    report = run_gate(
        GateKind.BITPHASE, schedule, psi_in=logical([1, 0]), samples=21
    )
    assert report.max_dark_leakage <= 1e-6
    assert report.fidelity >= 1 - 1e-5


def test_target_hamiltonian_alone_leaks() -> None:
    report = run_gate(
        GateKind.PHASE,
        phase_schedule(0.1 * CYCLE),
        psi_in=logical([0, 1]),
        cd_method=CdMethod.NONE,
        samples=21,
    )
    assert report.max_dark_leakage > 0.01


def test_numeric_counterdiabatic_term() -> None:
    report = run_gate(
        GateKind.PHASE,
        phase_schedule(0.2),
        cd_method=CdMethod.NUMERIC,
        samples=5,
    )
    assert report.fidelity >= 1 - 1e-5
    assert report.parameters["cd_method"] == "numeric"


def test_effective_layer() -> None:
    report = run_gate(
        GateKind.PHASE,
        phase_schedule(0.2),
        Layer.EFFECTIVE,
        platform=PLATFORM,
        samples=11,
    )
    assert report.layer == Layer.EFFECTIVE
    assert report.fidelity > 1 - 1e-6


def test_abstract_dephasing_is_harmless() -> None:
    report = run_gate(
        GateKind.PHASE,
        phase_schedule(0.2),
        lindblad=DecayRates(gamma_phi=TWO_PI * 0.004),
        samples=11,
    )
    assert report.fidelity >= 1 - 1e-6
    assert report.max_trace_error <= 1e-8


def test_kappa_lowers_fidelity() -> None:
    fidelities = [
        run_gate(
            GateKind.PHASE,
            phase_schedule(0.2),
            Layer.EFFECTIVE,
            DecayRates(kappa=kappa),
            psi_in=logical([0, 1]),
            platform=PLATFORM,
            samples=11,
        ).fidelity
        for kappa in (0.0, TWO_PI * 1.0, TWO_PI * 10.0)
    ]
    assert fidelities[0] > fidelities[1] > fidelities[2]


@pytest.mark.parametrize("field", ["gamma", "gamma_phi"])
def test_collective_noise_monotone(field: str) -> None:
    fidelities = [
        run_gate(
            GateKind.PHASE,
            phase_schedule(0.2),
            Layer.EFFECTIVE,
            DecayRates(**{field: scale * TWO_PI * 0.004}),
            platform=PLATFORM,
            samples=5,
        ).fidelity
        for scale in (0.0, 1.0, 10.0)
    ]
    for weaker, stronger in zip(fidelities, fidelities[1:], strict=False):
        assert stronger <= weaker + 1e-8
    if field == "gamma":
        assert fidelities[0] > fidelities[1] > fidelities[2]
    else:
        # Collective dephasing is a constant on one-excitation states.
        assert max(fidelities) - min(fidelities) <= 1e-6


@pytest.mark.slow
def test_phase_gate_under_microsphere_rates() -> None:
    report = run_gate(
        GateKind.PHASE,
        phase_schedule(0.1),
        Layer.EFFECTIVE,
        MICROSPHERE_RATES,
        platform=PLATFORM,
        samples=5,
    )
    assert abs(report.fidelity - 0.9952) <= 0.005


@pytest.mark.slow
def test_cp_gate_under_microsphere_rates() -> None:
    schedule = make_schedule(
        GateKind.CP,
        np.pi / 2,
        split_total_time(GateKind.CP, 0.2),
        lambda_prime=LAMBDA_PRIME,
    )
    report = run_gate(
        GateKind.CP,
        schedule,
        Layer.EFFECTIVE,
        MICROSPHERE_RATES,
        psi_in=logical([1, 0, 0, 1]),
        enc=cp_encoding_for(1, 2, 2),
        platform=PLATFORM,
        samples=5,
    )
    assert abs(report.fidelity - 0.98969) <= 1e-3


@pytest.mark.parametrize("layer", [Layer.EFFECTIVE, Layer.FULL_CAVITY])
def test_physical_cp_rejects_10_input(layer: Layer) -> None:
    amplitudes: list[complex] = [0.0] * 4
    amplitudes[C2.computational_labels.index("10L")] = 1.0
    amplitudes[0] = 1.0
    schedule = make_schedule(
        GateKind.CP, np.pi / 2, [0.1, 0.1, 0.1], lambda_prime=LAMBDA_PRIME
    )
    with pytest.raises(LayoutError):
        run_gate(
            GateKind.CP,
            schedule,
            layer,
            psi_in=logical(amplitudes),
            platform=PLATFORM,
        )
    report = run_gate(
        GateKind.CP, schedule, psi_in=logical(amplitudes), samples=5
    )
    assert report.fidelity >= 1 - 1e-4


def test_abstract_layer_rejects_decay() -> None:
    with pytest.raises(LayoutError):
        run_gate(
            GateKind.PHASE,
            phase_schedule(0.2),
            lindblad=DecayRates(gamma=1.0),
        )


def test_bad_input_state() -> None:
    with pytest.raises(LayoutError):
        run_gate(
            GateKind.PHASE, phase_schedule(0.2), psi_in=logical([1, 0, 0])
        )


def test_write_trajectory_csv(fake_root: Path) -> None:
    trajectory = Trajectory(
        layout=HilbertLayout.single("q", 2),
        times=np.array([0.0, 0.5]),
        states=(),
        diagnostics={"norm_error": np.array([0.0, 1e-12])},
    )
    path = fake_root / "run" / "trajectory.csv"
    write_trajectory_csv(trajectory, path, {"p1": [1.0, 0.25]})
    assert path.read_text().splitlines() == [
        "t_us,norm_error,p1",
        "0,0,1",
        "0.5,1.000000e-12,0.25",
    ]
    with pytest.raises(LayoutError):
        write_trajectory_csv(trajectory, path, {"p1": [1.0]})


def full_cavity_run(
    detunings: tuple[float, ...], fock_cutoff: int = 2
) -> float:
    platform = PlatformSettings(
        g=TWO_PI * 5.0,
        detunings=tuple(TWO_PI * d for d in detunings),
        fock_cutoff=fock_cutoff,
    )
    schedule = make_schedule(
        GateKind.PHASE,
        np.pi / 2,
        [0.5 / 3] * 3,
        lambda_prime=PlatformSettings(
            g=TWO_PI * 5.0, detunings=(TWO_PI * 100.0, TWO_PI * 60.0)
        ).lambda_prime(),
    )
    report = run_gate(
        GateKind.PHASE,
        schedule,
        Layer.FULL_CAVITY,
        platform=platform,
        samples=3,
        tol=1e-10,
    )
    assert report.parameters["program_error"] >= 0
    assert report.parameters["max_g_over_delta"] > 0
    return report.fidelity


@pytest.mark.slow
def test_full_cavity_reads_detunings() -> None:
    near = full_cavity_run((100.0, 60.0, 60.0))
    far = full_cavity_run((120.0, 60.0, 60.0))
    assert abs(near - far) > 1e-6


@pytest.mark.slow
def test_full_cavity_fock_cutoff() -> None:
    # One excitation never fills a second photon.
    low = full_cavity_run((100.0, 60.0, 60.0), fock_cutoff=2)
    high = full_cavity_run((100.0, 60.0, 60.0), fock_cutoff=3)
    assert abs(low - high) <= 1e-4


def test_full_cavity_needs_detunings() -> None:
    with pytest.raises(ValidationError):
        run_gate(
            GateKind.PHASE,
            phase_schedule(0.2),
            Layer.FULL_CAVITY,
            platform=PlatformSettings(g=TWO_PI * 5.0),
        )
