"""Test the NV-centre and cavity layer."""

import numpy as np
import pytest
from hqc_shortcuts.constants import TWO_PI
from hqc_shortcuts.dynamics import propagate_unitary
from hqc_shortcuts.exceptions import (
    AsymmetricProgramError,
    DispersiveGuardError,
    LayoutError,
    PhysicsError,
    ValidationError,
)
from hqc_shortcuts.holonomy import C1, GateKind, build_h0
from hqc_shortcuts.nvplatform import (
    LaserDrive,
    NvDriveConfig,
    NvParams,
    PairCouplingProgram,
    PlatformSettings,
    RegisterOperators,
    build_effective_hamiltonian,
    build_interaction_hamiltonian,
    coupling_strength_G,
    dispersive_decay_rates,
    effective_rabi,
    gate_program,
    program_qubits,
    raman_coupling_g,
    solve_laser_program,
)
from hqc_shortcuts.qcore import HilbertLayout, Ket, excitation_number
from hqc_shortcuts.tqda import (
    ControlPoint,
    ParamHamiltonian,
    cd_bitphase_closed_form,
    cd_phase_closed_form,
)


def nv_params() -> NvParams:
    return NvParams(
        gamma0=TWO_PI * 83.0,
        field_ratio=1 / 6,
        nu=471e6,
        v_m=100.0,
        omega_l=TWO_PI * 500.0,
        delta=TWO_PI * 20000.0,
        omega_c=TWO_PI * 471e6,
        omega_10=TWO_PI * 2870.0,
    )


def test_coupling_strength() -> None:
    G = coupling_strength_G(nv_params())  # noqa: N806
    assert G == pytest.approx(TWO_PI * 817.6, rel=1e-3)


def test_nv_params_checks() -> None:
    with pytest.raises(ValidationError):
        NvParams(
            gamma0=-1.0,
            field_ratio=0.5,
            nu=1.0,
            v_m=1.0,
            omega_l=1.0,
            delta=1.0,
            omega_c=1.0,
            omega_10=1.0,
        )


def test_raman_coupling() -> None:
    g = raman_coupling_g(
        TWO_PI * 1000.0, TWO_PI * 500.0, TWO_PI * 20000.0, TWO_PI * 2000.0
    )
    assert g == pytest.approx(TWO_PI * 47.727, rel=1e-4)
    with pytest.raises(DispersiveGuardError):
        raman_coupling_g(1.0, 1.0, 0.0, 1.0)


def test_effective_rabi() -> None:
    assert effective_rabi(1.0, 40.0, 40.0) == pytest.approx(0.025)
    assert effective_rabi(2.0, 4.0, -4.0) == pytest.approx(0.0)
    g = TWO_PI * 50.0
    lam = effective_rabi(g, TWO_PI * 4000.0, TWO_PI * 400.0)
    assert lam == pytest.approx(TWO_PI * 3.4375)
    with pytest.raises(DispersiveGuardError):
        effective_rabi(1.0, 0.0, 1.0)


def test_dispersive_decay_rates() -> None:
    rates = dispersive_decay_rates(1.0, [10.0, -20.0], 100.0)
    assert rates == pytest.approx([1.0, 0.25])


def test_drive_config_guard() -> None:
    with pytest.raises(DispersiveGuardError) as excinfo:
        NvDriveConfig(
            n_centers=2, g=1.0, deltas=(5.0, 20.0), phases=(0.0, 0.0)
        )
    assert excinfo.value.guard == "dispersive_guard"
    config = NvDriveConfig(
        n_centers=2,
        g=1.0,
        deltas=(5.0, None),
        phases=(0.0, 0.0),
        dispersive_guard=False,
    )
    assert config.driven == [1]
    with pytest.raises(LayoutError):
        NvDriveConfig(n_centers=2, g=1.0, deltas=(20.0,), phases=(0.0, 0.0))


def test_program_symmetry() -> None:
    with pytest.raises(AsymmetricProgramError):
        PairCouplingProgram(pairs={(1, 2): (1.0, 0.3), (2, 1): (1.0, 0.3)})
    with pytest.raises(AsymmetricProgramError):
        PairCouplingProgram(pairs={(1, 1): (1.0, 0.0)})
    prog = PairCouplingProgram(
        pairs={(1, 2): (1.0, 0.3), (2, 1): (1.0, -0.3)}
    )
    assert prog.coefficient(2, 1) == pytest.approx(np.exp(-0.3j))
    assert prog.coefficient(1, 3) == 0
    assert len(list(prog.unordered())) == 1


def test_solver_round_trip() -> None:
    g = TWO_PI * 20.0
    deltas = (TWO_PI * 4000.0, TWO_PI * 400.0, TWO_PI * 400.0)
    phases = (0.0, 0.3, 1.1)
    couplings = {
        (j, k): effective_rabi(g, deltas[j - 1], deltas[k - 1])
        * np.exp(1j * (phases[j - 1] - phases[k - 1]))
        for j, k in [(1, 2), (1, 3), (2, 3)]
    }
    targets = PairCouplingProgram.from_coefficients(couplings)
    solution = solve_laser_program(targets, g)
    assert solution.feasible
    config = solution.require()
    assert config.deltas == pytest.approx(deltas, rel=1e-8)
    for (j, k), c in couplings.items():
        solved = config.phases[j - 1] - config.phases[k - 1]
        gap = np.angle(np.exp(1j * (solved - np.angle(c))))
        assert abs(gap) <= 1e-9


def test_solver_rejects_untrimmed_bitphase_step() -> None:
    # Rotating theta at phi = 0 couples three centres with one imaginary
    # pair coefficient; no set of laser phases closes that triangle.
    p = ControlPoint(
        theta=0.6, phi=0.0, theta_dot=0.8, lambda_prime=TWO_PI * 1.964
    )
    matrix = (
        build_h0(GateKind.BITPHASE, p).matrix
        + cd_bitphase_closed_form(p).matrix.matrix
    )
    prog = gate_program(matrix, C1)
    assert sorted(prog.centers) == [1, 2, 4]
    solution = solve_laser_program(prog, TWO_PI * 50.0)
    assert not solution.feasible
    assert any("phases" in reason for reason in solution.reasons)
    with pytest.raises(PhysicsError):
        solution.require()


def test_solver_lonely_centre() -> None:
    solution = solve_laser_program(
        PairCouplingProgram(pairs={}, shifts={1: 1.0}), 1.0, n_centers=2
    )
    assert solution.feasible
    assert solution.require().driven == []


def test_gate_program_round_trip() -> None:
    layout = HilbertLayout.qubits(4)
    ops = RegisterOperators(layout)
    iso = C1.isometry(layout)
    p = ControlPoint(
        theta=1.0, phi=0.4, theta_dot=0.5, phi_dot=-0.7, lambda_prime=2.0
    )
    phase = build_h0(GateKind.PHASE, p).matrix
    phase = phase + cd_phase_closed_form(p).matrix.matrix
    for matrix in (phase, build_h0(GateKind.BITPHASE, p).matrix):
        prog = gate_program(matrix, C1)
        register = ops.program_matrix(prog)
        assert np.max(np.abs(iso.T @ register @ iso - matrix)) <= 1e-12


def test_program_qubits() -> None:
    assert program_qubits(GateKind.PHASE) == [1, 2, 3]
    assert program_qubits(GateKind.BITPHASE) == [1, 2, 3, 4]
    assert program_qubits(GateKind.CP) == [1, 2, 3]


def test_register_operators() -> None:
    ops = RegisterOperators(HilbertLayout.qubits(2))
    # |10> is index 2 and |01> is index 1.
    assert ops.flip_flop(1, 2)[1, 2] == 1
    assert np.count_nonzero(ops.flip_flop(1, 2)) == 1
    reduced = RegisterOperators(HilbertLayout.qubits(3), max_excitations=1)
    assert reduced.dim == 4
    assert reduced.reduced_layout.total_dim == 4
    assert np.allclose(reduced.isometry().T @ reduced.isometry(), np.eye(4))
    with pytest.raises(LayoutError):
        ops.cavity_lower()


def test_platform_settings() -> None:
    settings = PlatformSettings(
        g=TWO_PI * 50.0,
        detunings=(TWO_PI * 4000.0, TWO_PI * 400.0, TWO_PI * 400.0),
    )
    assert settings.lambda_prime() == pytest.approx(TWO_PI * 3.4375)
    assert list(settings.detuning_map([1, 2, 3])) == [1, 2, 3]
    with pytest.raises(ValidationError):
        settings.detuning_map([1, 2, 3, 4])
    assert PlatformSettings().detuning_map([1, 2]) == {}


def test_platform_drive_config() -> None:
    settings = PlatformSettings(g=1.0, detunings=(20.0, -30.0))
    config = settings.drive_config(3, [1, 3])
    assert config.deltas == (20.0, None, -30.0)
    assert config.phases == (0.0, 0.0, 0.0)
    assert config.driven == [1, 3]
    assert config.detuning(3) == -30.0
    with pytest.raises(LayoutError):
        config.detuning(2)

    close = PlatformSettings(g=1.0, detunings=(5.0, 30.0))
    with pytest.raises(DispersiveGuardError) as excinfo:
        close.drive_config(2, [1, 2])
    assert excinfo.value.guard == "dispersive_guard"
    relaxed = PlatformSettings(
        g=1.0, detunings=(5.0, 30.0), dispersive_guard=False
    )
    assert relaxed.drive_config(2, [1, 2]).driven == [1, 2]


def test_per_centre_couplings() -> None:
    config = NvDriveConfig(
        n_centers=2,
        g=1.0,
        deltas=(20.0, 40.0),
        phases=(0.0, 0.0),
        couplings=(1.0, 3.0),
    )
    assert config.coupling(1) == 1.0
    assert config.coupling(2) == 3.0
    with pytest.raises(LayoutError):
        NvDriveConfig(
            n_centers=2,
            g=1.0,
            deltas=(20.0, 40.0),
            phases=(0.0, 0.0),
            couplings=(1.0,),
        )
    # The guard uses each centre's own coupling.
    with pytest.raises(DispersiveGuardError):
        NvDriveConfig(
            n_centers=2,
            g=1.0,
            deltas=(20.0, 20.0),
            phases=(0.0, 0.0),
            couplings=(1.0, 3.0),
        )


def test_solver_always_reports_phases() -> None:
    lonely = solve_laser_program(
        PairCouplingProgram(pairs={}, shifts={1: 1.0}), 1.0, n_centers=3
    )
    assert len(lonely.phases) == 3
    pair = solve_laser_program(
        PairCouplingProgram.from_coefficients({(1, 2): 0.01j}),
        1.0,
        n_centers=3,
    )
    assert len(pair.phases) == 3
    triangle = solve_laser_program(
        PairCouplingProgram.from_coefficients(
            {(1, 2): 0.02, (1, 3): 0.02j, (2, 3): 0.02j}
        ),
        1.0,
        n_centers=3,
    )
    assert len(triangle.phases) == 3


def test_laser_drive_needs_cavity() -> None:
    base = NvDriveConfig(
        n_centers=2, g=1.0, deltas=(20.0, 20.0), phases=(0.0, 0.0)
    )
    ops = RegisterOperators(base.layout(cavity=False))
    with pytest.raises(LayoutError):
        LaserDrive(ops, base)


def test_laser_drive_needs_detunings() -> None:
    base = NvDriveConfig(
        n_centers=3, g=1.0, deltas=(20.0, 20.0, None), phases=(0.0,) * 3
    )
    ops = RegisterOperators(base.layout(cavity=True), max_excitations=1)
    drive = LaserDrive(ops, base)
    prog = PairCouplingProgram.from_coefficients({(1, 3): 0.05})
    with pytest.raises(LayoutError):
        drive.matrix(prog, 0.0)


def test_laser_drive_realises_program() -> None:
    g, delta = 1.0, 20.0
    lam = g**2 / delta
    target = lam * np.exp(0.7j)
    base = NvDriveConfig(
        n_centers=2, g=g, deltas=(delta, delta), phases=(0.0, 0.0)
    )
    prog = PairCouplingProgram.from_coefficients({(1, 2): target})

    full_ops = RegisterOperators(base.layout(cavity=True), max_excitations=1)
    drive = LaserDrive(full_ops, base)
    config = drive.config(prog)
    assert config.coupling(1) == pytest.approx(g)
    assert config.coupling(2) == pytest.approx(g)
    assert drive.max_program_error <= 1e-12
    full = ParamHamiltonian(
        layout=full_ops.reduced_layout,
        generator=lambda t, p: drive.matrix(prog, t),
    )

    eff_ops = RegisterOperators(base.layout(cavity=False))
    effective = ParamHamiltonian.constant(
        build_effective_hamiltonian(prog, base, ops=eff_ops)
    )

    full_rows = list(full_ops.indices)
    full_10 = full_rows.index(full_ops.layout.basis_index([1, 0, 0]))
    full_01 = full_rows.index(full_ops.layout.basis_index([0, 1, 0]))
    eff_rows = list(eff_ops.indices)
    eff_10 = eff_rows.index(eff_ops.layout.basis_index([1, 0]))
    eff_01 = eff_rows.index(eff_ops.layout.basis_index([0, 1]))

    grid = [0.0, np.pi / (4 * lam)]
    slow = propagate_unitary(
        full, Ket.basis(full.layout, full_10), grid, tol=1e-11
    ).final
    fast = propagate_unitary(
        effective, Ket.basis(effective.layout, eff_10), grid, tol=1e-11
    ).final
    assert isinstance(slow, Ket)
    assert isinstance(fast, Ket)
    for a, b in ((full_10, eff_10), (full_01, eff_01)):
        assert abs(slow.amplitudes[a] - fast.amplitudes[b]) <= 2e-2
    assert abs(fast.amplitudes[eff_01]) ** 2 == pytest.approx(0.5)


def test_laser_drive_records_detuning_mismatch() -> None:
    base = NvDriveConfig(
        n_centers=2, g=1.0, deltas=(20.0, 30.0), phases=(0.0, 0.0)
    )
    ops = RegisterOperators(base.layout(cavity=True), max_excitations=1)
    drive = LaserDrive(ops, base)
    drive.matrix(PairCouplingProgram.from_coefficients({(1, 2): 0.04}), 0.0)
    # Centres at different detunings exchange nothing on average.
    assert drive.max_program_error == pytest.approx(0.04)
    assert drive.max_ratio > 0


def test_interaction_conserves_excitations() -> None:
    config = NvDriveConfig(
        n_centers=3,
        g=1.0,
        deltas=(40.0, None, -60.0),
        phases=(0.2, 0.0, 1.3),
    )
    h = build_interaction_hamiltonian(config, 0.37)
    assert h.layout.labels == ("q1", "q2", "q3", "cavity")
    number = excitation_number(h.layout)
    assert np.max(np.abs(h.matrix @ number - number @ h.matrix)) <= 1e-12
    assert np.allclose(h.matrix, h.matrix.conj().T)


@pytest.mark.slow
def test_dispersive_exchange_matches_effective() -> None:
    # At g/delta = 1/80 the exchange frequency is off by about
    # 2 (g/delta)^2 of itself and the photon keeps under 1e-3 of the
    # population, so a full exchange period stays within 5e-3.
    g, delta = 1.0, 80.0
    config = NvDriveConfig(
        n_centers=2, g=g, deltas=(delta, delta), phases=(0.0, 0.0)
    )
    real = build_interaction_hamiltonian(config, 0.0).matrix
    quadrature = build_interaction_hamiltonian(
        config, np.pi / (2 * delta)
    ).matrix
    full = ParamHamiltonian(
        layout=config.layout(cavity=True),
        generator=lambda t, p: np.cos(delta * t) * real
        + np.sin(delta * t) * quadrature,
    )
    excited = full.layout.basis_index([1, 0, 0])
    start_full = Ket.basis(full.layout, excited)

    lam = effective_rabi(g, delta, delta)
    prog = PairCouplingProgram.from_coefficients({(1, 2): lam})
    effective = ParamHamiltonian.constant(
        build_effective_hamiltonian(prog, config)
    )
    start_eff = Ket.basis(effective.layout, 2)

    grid = np.linspace(0.0, TWO_PI / lam, 33)
    slow = propagate_unitary(full, start_full, grid, tol=1e-11)
    fast = propagate_unitary(effective, start_eff, grid, tol=1e-11)
    for a, b in zip(slow.states, fast.states, strict=True):
        assert isinstance(a, Ket)
        assert isinstance(b, Ket)
        p_full = abs(a.amplitudes[excited]) ** 2
        p_eff = abs(b.amplitudes[2]) ** 2
        assert abs(p_full - p_eff) <= 5e-3
    final = slow.states[-1]
    assert isinstance(final, Ket)
    assert abs(final.amplitudes[excited]) ** 2 == pytest.approx(1.0, abs=5e-3)
