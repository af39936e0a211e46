"""Time propagation and gate fidelity.

Closed systems are integrated as Schrodinger equations, open systems as
Lindblad master equations.  `run_gate` ties the layers together: it
builds the gate Hamiltonian on the requested layer, propagates a logical
input state and scores the result against the ideal holonomic gate.
"""

from __future__ import annotations

import csv
import itertools
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np
import structlog
from scipy.integrate import solve_ivp

from .constants import (
    CSV_SMALL,
    DEFAULT_SAMPLES,
    DEFAULT_TOL,
    NORM_DRIFT_TOL,
    RHO_HERMITIAN_TOL,
    RHO_MIN_EIGENVALUE,
    RHO_TRACE_TOL,
    ROOT_LOGGER,
    SUPEROPERATOR_MAX_SIDE,
)
from .exceptions import (
    IntegrationQualityError,
    LayoutError,
    StepSizeUnderflowError,
    ValidationError,
)
from .holonomy import (
    CdMethod,
    DfsEncoding,
    GateKind,
    PulseSchedule,
    close_loop,
    dark_states,
    default_encoding,
    gate_hamiltonian,
    ideal_gate,
    wilson_loop,
)
from .nvplatform import (
    LaserDrive,
    NvDriveConfig,
    PlatformSettings,
    RegisterOperators,
    build_effective_hamiltonian,
    dispersive_decay_rates,
    gate_program,
    program_qubits,
)
from .qcore import (
    DensityMatrix,
    HilbertLayout,
    Ket,
    Op,
    hermiticity_error,
    partial_trace,
    state_fidelity,
)
from .tqda import ControlPoint, ParamHamiltonian

__all__ = [
    "DecayRates",
    "GateReport",
    "Layer",
    "LindbladModel",
    "Trajectory",
    "collective_channels",
    "dark_subspace_unitary",
    "format_number",
    "logical_unitary",
    "propagate_lindblad",
    "propagate_unitary",
    "run_gate",
    "write_trajectory_csv",
]

_LIFT_MAX_DIM = 1024
"""Largest full space a final state is lifted into for the partial trace."""
_CP_INPUT_TOL = 1e-12

Monitor = Callable[[float, np.ndarray], Mapping[str, float]]
"""Called with (time, state) at every sample; returns named diagnostics."""


class Layer(StrEnum):
    """Physical level a gate is simulated at."""

    DFS_ABSTRACT = "dfs_abstract"
    EFFECTIVE = "effective"
    FULL_CAVITY = "full_cavity"


@dataclass(frozen=True)
class DecayRates:
    """Cavity decay, collective spontaneous emission and dephasing."""

    kappa: float = 0.0
    gamma: float = 0.0
    gamma_phi: float = 0.0

    def __post_init__(self) -> None:
        for name in ("kappa", "gamma", "gamma_phi"):
            if getattr(self, name) < 0:
                raise ValidationError(f"Decay rate {name} must be >= 0")

    @property
    def is_closed(self) -> bool:
        return not (self.kappa or self.gamma or self.gamma_phi)


@dataclass(frozen=True)
class LindbladModel:
    """A Hamiltonian with jump operators and their rates."""

    hamiltonian: ParamHamiltonian
    channels: tuple[tuple[Op, float], ...] = ()

    def __post_init__(self) -> None:
        for op, rate in self.channels:
            if rate < 0:
                raise ValidationError(f"Channel rate {rate} is negative")
            if op.layout != self.hamiltonian.layout:
                raise LayoutError(
                    "Jump operator layout differs from the Hamiltonian's"
                )


@dataclass(frozen=True)
class Trajectory:
    """Sampled states of one propagation.

    ``diagnostics`` holds one array per named quantity, aligned with
    ``times``.
    """

    layout: HilbertLayout
    times: np.ndarray
    states: tuple[Ket, ...] | tuple[DensityMatrix, ...]
    diagnostics: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def final(self) -> Ket | DensityMatrix:
        return self.states[-1]

    def final_density(self) -> np.ndarray:
        final = self.final
        if isinstance(final, Ket):
            return np.outer(final.amplitudes, final.amplitudes.conj())
        return np.array(final.matrix)


def _check_grid(t_grid: Sequence[float] | np.ndarray) -> np.ndarray:
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValidationError("Time grid must be a non-empty 1-d sequence")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("Time grid must be strictly increasing")
    return grid


def _integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    start: float,
    stop: float,
    y: np.ndarray,
    tol: float,
) -> np.ndarray:
    sol = solve_ivp(
        rhs,
        (start, stop),
        y,
        method="DOP853",
        rtol=tol,
        atol=tol * 1e-3,
    )
    if sol.status != 0:
        raise StepSizeUnderflowError(
            f"Integrator stopped at t={sol.t[-1]:.6g} us: {sol.message}"
        )
    return np.asarray(sol.y[:, -1])


def _collect(
    monitors: Sequence[Monitor],
    t: float,
    state: np.ndarray,
    into: dict[str, list[float]],
) -> None:
    for monitor in monitors:
        for name, value in monitor(t, state).items():
            into.setdefault(name, []).append(value)


def propagate_unitary(
    h: ParamHamiltonian,
    psi0: Ket,
    t_grid: Sequence[float] | np.ndarray,
    tol: float = DEFAULT_TOL,
    *,
    monitors: Sequence[Monitor] = (),
) -> Trajectory:
    """Integrate ``i d|psi>/dt = H(t)|psi>`` and sample it on ``t_grid``.

    The first sample is ``psi0`` itself, taken to sit at ``t_grid[0]``.

    Raises
    ------
    StepSizeUnderflowError
        The integrator gave up.
    IntegrationQualityError
        The norm drifted by more than ``NORM_DRIFT_TOL``.
    """
    if psi0.layout != h.layout:
        raise LayoutError("Initial state and Hamiltonian layouts differ")
    if not psi0.is_normalized():
        raise ValidationError("Initial state is not normalized")
    grid = _check_grid(t_grid)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return -1j * (h.matrix(t) @ y)

    y = np.array(psi0.amplitudes, dtype=complex)
    states = [psi0]
    extra: dict[str, list[float]] = {}
    norm_error = [0.0]
    _collect(monitors, float(grid[0]), y, extra)
    for start, stop in itertools.pairwise(grid):
        y = _integrate(rhs, start, stop, y, tol)
        drift = abs(float(np.linalg.norm(y)) - 1.0)
        if drift > NORM_DRIFT_TOL:
            raise IntegrationQualityError(
                f"Norm drifted by {drift:.3e}",
                time=float(stop),
                bound=f"|norm - 1| <= {NORM_DRIFT_TOL:g}",
            )
        norm_error.append(drift)
        states.append(Ket(layout=h.layout, amplitudes=y))
        _collect(monitors, float(stop), y, extra)
    diagnostics = {"norm_error": np.array(norm_error)}
    diagnostics.update({k: np.array(v) for k, v in extra.items()})
    return Trajectory(
        layout=h.layout,
        times=grid,
        states=tuple(states),
        diagnostics=diagnostics,
    )


def _dissipator_superop(
    jumps: Sequence[np.ndarray], dim: int
) -> np.ndarray:
    """Row-major vectorized dissipator of the rate-weighted ``jumps``."""
    eye = np.eye(dim)
    sup = np.zeros((dim * dim, dim * dim), dtype=complex)
    for op in jumps:
        ldl = op.conj().T @ op
        sup += np.kron(op, op.conj())
        sup -= 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T))
    return sup


def propagate_lindblad(
    model: LindbladModel,
    rho0: DensityMatrix,
    t_grid: Sequence[float] | np.ndarray,
    tol: float = DEFAULT_TOL,
    *,
    monitors: Sequence[Monitor] = (),
) -> Trajectory:
    """Integrate the master equation and sample it on ``t_grid``.

    ``d rho/dt = -i[H, rho] + sum_k r_k (L rho L^+ - {L^+ L, rho}/2)``.
    Small spaces use a dense superoperator for the dissipator.  The state
    is symmetrized at every sample; the size of that correction, the trace
    error and the smallest eigenvalue are recorded and bounded.
    """
    h = model.hamiltonian
    if rho0.layout != h.layout:
        raise LayoutError("Initial state and Hamiltonian layouts differ")
    start_diag = rho0.diagnostics()
    if (
        start_diag["trace_error"] > RHO_TRACE_TOL
        or start_diag["hermiticity_error"] > RHO_HERMITIAN_TOL
        or start_diag["min_eigenvalue"] < RHO_MIN_EIGENVALUE
    ):
        raise ValidationError("Initial density matrix is not a valid state")
    grid = _check_grid(t_grid)
    dim = h.layout.total_dim
    jumps = [
        np.sqrt(rate) * np.asarray(op.matrix)
        for op, rate in model.channels
        if rate > 0
    ]
    use_superop = dim * dim <= SUPEROPERATOR_MAX_SIDE
    superop = _dissipator_superop(jumps, dim) if use_superop else None
    decay = sum(
        (op.conj().T @ op for op in jumps),
        start=np.zeros((dim, dim), dtype=complex),
    )

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        rho = y.reshape(dim, dim)
        hm = h.matrix(t)
        out = -1j * (hm @ rho - rho @ hm)
        if superop is not None:
            return out.ravel() + superop @ y
        for op in jumps:
            out += op @ rho @ op.conj().T
        out -= 0.5 * (decay @ rho + rho @ decay)
        return out.ravel()

    rho = np.array(rho0.matrix, dtype=complex)
    states = [rho0]
    trace_error = [start_diag["trace_error"]]
    correction = [0.0]
    min_eig = [start_diag["min_eigenvalue"]]
    extra: dict[str, list[float]] = {}
    _collect(monitors, float(grid[0]), rho, extra)
    for start, stop in itertools.pairwise(grid):
        y = _integrate(rhs, start, stop, rho.ravel(), tol)
        raw = y.reshape(dim, dim)
        fix = 0.5 * hermiticity_error(raw)
        rho = 0.5 * (raw + raw.conj().T)
        state = DensityMatrix(layout=h.layout, matrix=rho)
        diag = state.diagnostics()
        when = float(stop)
        if fix > RHO_HERMITIAN_TOL:
            raise IntegrationQualityError(
                f"Hermiticity correction of {fix:.3e}",
                time=when,
                bound=f"correction <= {RHO_HERMITIAN_TOL:g}",
            )
        if diag["trace_error"] > RHO_TRACE_TOL:
            raise IntegrationQualityError(
                f"Trace drifted by {diag['trace_error']:.3e}",
                time=when,
                bound=f"|tr rho - 1| <= {RHO_TRACE_TOL:g}",
            )
        if diag["min_eigenvalue"] < RHO_MIN_EIGENVALUE:
            raise IntegrationQualityError(
                f"Eigenvalue {diag['min_eigenvalue']:.3e} is negative",
                time=when,
                bound=f"min eigenvalue >= {RHO_MIN_EIGENVALUE:g}",
            )
        states.append(state)
        trace_error.append(diag["trace_error"])
        correction.append(fix)
        min_eig.append(diag["min_eigenvalue"])
        _collect(monitors, when, rho, extra)
    diagnostics = {
        "trace_error": np.array(trace_error),
        "hermiticity_correction": np.array(correction),
        "min_eigenvalue": np.array(min_eig),
    }
    diagnostics.update({k: np.array(v) for k, v in extra.items()})
    return Trajectory(
        layout=h.layout,
        times=grid,
        states=tuple(states),
        diagnostics=diagnostics,
    )


def collective_channels(
    layer: Layer,
    rates: DecayRates,
    enc: DfsEncoding,
    ops: RegisterOperators | None = None,
) -> list[tuple[Op, float]]:
    """Jump operators of ``rates`` on the basis of ``layer``.

    The abstract DFS layer has no register and no cavity, so only
    collective dephasing, which is a constant on a DFS, can be expressed.
    """
    if layer == Layer.DFS_ABSTRACT:
        if rates.kappa or rates.gamma:
            raise LayoutError(
                "Decay and cavity loss need the effective or full layer"
            )
        if not rates.gamma_phi:
            return []
        n = enc.n_qubits
        counts = [len(enc.excitations[x]) for x in enc.logical_labels]
        sz = np.diag([float(n - 2 * c) for c in counts]).astype(complex)
        return [(Op(layout=enc.layout, matrix=sz), rates.gamma_phi)]
    if ops is None:
        raise LayoutError(f"Layer {layer} needs register operators")
    layout = ops.reduced_layout
    channels: list[tuple[Op, float]] = []
    if rates.gamma:
        channels.append(
            (Op(layout=layout, matrix=ops.collective_lower()), rates.gamma)
        )
    if rates.gamma_phi:
        channels.append(
            (Op(layout=layout, matrix=ops.collective_z()), rates.gamma_phi)
        )
    if rates.kappa and layer == Layer.FULL_CAVITY:
        channels.append(
            (Op(layout=layout, matrix=ops.cavity_lower()), rates.kappa)
        )
    return channels


@dataclass(frozen=True)
class GateReport:
    """Outcome of one gate simulation.

    ``fidelity`` is ``<psi_ideal|rho_L|psi_ideal>`` where ``rho_L`` is the
    final state with the cavity traced out, on the computational states.
    ``wall_time`` is informational and never written to reports.
    """

    kind: GateKind
    layer: Layer
    fidelity: float
    ideal_angle: float
    initial_label: str
    schedule_id: str
    duration: float
    relative_phase: float | None
    final_dark_leakage: float
    max_dark_leakage: float
    max_trace_error: float
    max_hermiticity_correction: float
    min_eigenvalue: float
    parameters: Mapping[str, float | str | bool] = field(default_factory=dict)
    wall_time: float = 0.0
    trajectory: Trajectory | None = field(default=None, repr=False)
    logical_density: np.ndarray | None = field(default=None, repr=False)


@dataclass
class _LayerModel:
    """Hamiltonian and bases of one layer, ready to propagate."""

    hamiltonian: ParamHamiltonian
    embedding: np.ndarray
    """Layer basis x DFS labels."""
    ops: RegisterOperators | None = None
    drive_config: NvDriveConfig | None = None
    drive: LaserDrive | None = None


def _build_layer(
    layer: Layer,
    kind: GateKind,
    hd: ParamHamiltonian,
    enc: DfsEncoding,
    platform: PlatformSettings,
) -> _LayerModel:
    if layer == Layer.DFS_ABSTRACT:
        return _LayerModel(
            hamiltonian=hd, embedding=np.eye(len(enc.logical_labels))
        )
    excitations = len(next(iter(enc.excitations.values())))
    driven = program_qubits(kind, enc)
    cfg = platform.drive_config(enc.n_qubits, driven)
    cavity = layer == Layer.FULL_CAVITY
    ops = RegisterOperators(
        cfg.layout(cavity=cavity), max_excitations=excitations
    )
    reduced = ops.reduced_layout

    if layer == Layer.EFFECTIVE:

        def effective(t: float, p: ControlPoint | None) -> np.ndarray:
            prog = gate_program(hd.matrix(t), enc)
            return np.asarray(
                build_effective_hamiltonian(prog, cfg, t, ops=ops).matrix
            )

        return _LayerModel(
            hamiltonian=ParamHamiltonian(layout=reduced, generator=effective),
            embedding=ops.embed(enc),
            ops=ops,
            drive_config=cfg,
        )

    if len(cfg.driven) < len(driven):
        raise ValidationError(
            f"The full cavity layer needs a detuning for each of centres"
            f" {driven}"
        )
    drive = LaserDrive(ops, cfg)

    def full(t: float, p: ControlPoint | None) -> np.ndarray:
        return drive.matrix(gate_program(hd.matrix(t), enc), t)

    return _LayerModel(
        hamiltonian=ParamHamiltonian(layout=reduced, generator=full),
        embedding=ops.embed(enc),
        ops=ops,
        drive_config=cfg,
        drive=drive,
    )


def _layer_channels(
    layer: Layer,
    rates: DecayRates,
    enc: DfsEncoding,
    model: _LayerModel,
    platform: PlatformSettings,
) -> list[tuple[Op, float]]:
    channels = collective_channels(layer, rates, enc, model.ops)
    cfg = model.drive_config
    if (
        layer == Layer.EFFECTIVE
        and rates.kappa
        and platform.cavity_purcell
        and model.ops is not None
        and cfg is not None
    ):
        purcell = dispersive_decay_rates(
            cfg.g, [cfg.detuning(q) for q in cfg.driven], rates.kappa
        )
        layout = model.ops.reduced_layout
        channels.extend(
            (Op(layout=layout, matrix=model.ops.lower(q)), rate)
            for q, rate in zip(cfg.driven, purcell, strict=True)
        )
    return channels


def _logical_density(
    rho: np.ndarray,
    layer: Layer,
    enc: DfsEncoding,
    model: _LayerModel,
    platform: PlatformSettings,
) -> np.ndarray:
    """Final state on the computational states, cavity traced out."""
    comp = enc.computational_isometry()
    if layer != Layer.FULL_CAVITY or model.ops is None:
        c = model.embedding @ comp
        return c.conj().T @ rho @ c
    out = np.zeros((enc.logical_dim, enc.logical_dim), dtype=complex)
    for photons in range(platform.fock_cutoff + 1):
        c = model.ops.embed(enc, photons=photons) @ comp
        out += c.conj().T @ rho @ c
    return out


def _final_fidelity(
    rho: np.ndarray,
    rho_logical: np.ndarray,
    psi_ideal: Ket,
    layer: Layer,
    enc: DfsEncoding,
    model: _LayerModel,
) -> float:
    ops = model.ops
    if (
        layer == Layer.FULL_CAVITY
        and ops is not None
        and ops.layout.total_dim <= _LIFT_MAX_DIM
    ):
        lift = ops.isometry()
        full = DensityMatrix(layout=ops.layout, matrix=lift @ rho @ lift.T)
        qubits = [f"q{j}" for j in range(1, enc.n_qubits + 1)]
        register = partial_trace(full, qubits)
        target = enc.isometry(register.layout) @ (
            enc.computational_isometry() @ psi_ideal.amplitudes
        )
        return state_fidelity(
            register, Ket(layout=register.layout, amplitudes=target)
        )
    logical = DensityMatrix(layout=psi_ideal.layout, matrix=rho_logical)
    return state_fidelity(logical, psi_ideal)


def _relative_phase(kind: GateKind, rho_logical: np.ndarray) -> float | None:
    """Phase of the last computational state relative to the first."""
    if kind == GateKind.BITPHASE:
        return None
    coherence = rho_logical[-1, 0]
    if abs(coherence) == 0:
        return None
    return float(np.angle(coherence))


def _dark_leakage_monitor(
    kind: GateKind,
    schedule: PulseSchedule,
    enc: DfsEncoding,
    embedding: np.ndarray,
) -> Monitor:
    def monitor(t: float, state: np.ndarray) -> dict[str, float]:
        p = schedule.control_point(t)
        frame = embedding @ np.column_stack(
            [d.amplitudes for d in dark_states(kind, p, enc)]
        )
        if state.ndim == 1:
            population = float(np.sum(np.abs(frame.conj().T @ state) ** 2))
        else:
            population = float(
                np.real(np.trace(frame.conj().T @ state @ frame))
            )
        return {"dark_leakage": max(0.0, 1.0 - population)}

    return monitor


def _ideal_angle(
    kind: GateKind, schedule: PulseSchedule, enc: DfsEncoding
) -> float:
    if not schedule.segments:
        return 0.0
    loop = close_loop(schedule) if kind == GateKind.BITPHASE else schedule
    berry = wilson_loop(kind, loop, enc=enc).berry_phase
    return float(berry or 0.0)


def _check_cp_input(enc: DfsEncoding, psi_in: Ket) -> None:
    """Refuse inputs the physical cp realisation cannot handle.

    The programmed flip-flops also move the excitation of |10>_L out of
    the DFS, so the physical layers apply a cp gate only to inputs
    without that component.
    """
    weight = abs(psi_in.amplitudes[enc.computational_labels.index("10L")])
    if weight > _CP_INPUT_TOL:
        raise LayoutError(
            "cp on the effective and full cavity layers needs an input"
            f" without |10>_L (amplitude {weight:.3g})"
        )


def _report_parameters(
    cd_method: CdMethod,
    schedule: PulseSchedule,
    rates: DecayRates,
    samples: int,
    tol: float,
    model: _LayerModel,
) -> dict[str, float | str | bool]:
    parameters: dict[str, float | str | bool] = {
        "cd_method": cd_method.value,
        "lambda_prime": schedule.lambda_prime,
        "kappa": rates.kappa,
        "gamma": rates.gamma,
        "gamma_phi": rates.gamma_phi,
        "samples": samples,
        "tol": tol,
    }
    if model.drive is not None:
        parameters["program_error"] = model.drive.max_program_error
        parameters["max_g_over_delta"] = model.drive.max_ratio
    return parameters


def run_gate(  # noqa: PLR0913
    kind: GateKind,
    schedule: PulseSchedule,
    layer: Layer = Layer.DFS_ABSTRACT,
    lindblad: DecayRates | None = None,
    psi_in: Ket | None = None,
    *,
    enc: DfsEncoding | None = None,
    platform: PlatformSettings | None = None,
    cd_method: CdMethod = CdMethod.CLOSED_FORM,
    samples: int = DEFAULT_SAMPLES,
    tol: float = DEFAULT_TOL,
    ideal_angle: float | None = None,
    initial_label: str = "",
    keep_trajectory: bool = True,
) -> GateReport:
    """Simulate one holonomic gate and score it.

    Parameters
    ----------
    kind
        Gate family.
    schedule
        Control loop.  A schedule with no segments is the identity.
    layer
        Simulation level: the abstract DFS, the dispersive register or the
        register with its cavity.
    lindblad
        Decay rates; ``None`` or all-zero rates give a closed system.
    psi_in
        Logical input state on the computational states.  Defaults to the
        equal superposition.
    ideal_angle
        Gate angle to score against.  Defaults to the holonomy of the
        (closed) loop.
    """
    started = time.perf_counter()
    enc = enc or default_encoding(kind)
    platform = platform or PlatformSettings()
    logical_layout = HilbertLayout.single("logical", enc.logical_dim)
    if psi_in is None:
        psi_in = Ket(
            layout=logical_layout,
            amplitudes=np.full(
                enc.logical_dim, 1 / np.sqrt(enc.logical_dim), dtype=complex
            ),
        )
    if psi_in.layout.total_dim != enc.logical_dim:
        raise LayoutError(
            f"{kind} takes a {enc.logical_dim}-dimensional logical state"
        )
    if not psi_in.is_normalized():
        raise ValidationError("Logical input state is not normalized")
    psi_in = Ket(layout=logical_layout, amplitudes=psi_in.amplitudes)
    if kind == GateKind.CP and layer != Layer.DFS_ABSTRACT:
        _check_cp_input(enc, psi_in)
    if samples < 2:
        raise ValidationError("At least two samples are needed")
    angle = (
        _ideal_angle(kind, schedule, enc)
        if ideal_angle is None
        else ideal_angle
    )
    gate = ideal_gate(kind, angle)
    psi_ideal = Ket(
        layout=logical_layout, amplitudes=gate.matrix @ psi_in.amplitudes
    )

    hd = gate_hamiltonian(kind, schedule, enc, cd_method)
    model = _build_layer(layer, kind, hd, enc, platform)
    rates = lindblad or DecayRates()
    psi0 = model.embedding @ (enc.computational_isometry() @ psi_in.amplitudes)
    start = Ket(layout=model.hamiltonian.layout, amplitudes=psi0)
    monitor = _dark_leakage_monitor(kind, schedule, enc, model.embedding)

    if schedule.duration == 0:
        trajectory = Trajectory(
            layout=start.layout,
            times=np.array([0.0]),
            states=(start,),
            diagnostics={"dark_leakage": np.array([0.0])},
        )
    elif rates.is_closed:
        grid = np.linspace(0.0, schedule.duration, samples)
        trajectory = propagate_unitary(
            model.hamiltonian, start, grid, tol, monitors=[monitor]
        )
    else:
        grid = np.linspace(0.0, schedule.duration, samples)
        channels = _layer_channels(layer, rates, enc, model, platform)
        trajectory = propagate_lindblad(
            LindbladModel(model.hamiltonian, tuple(channels)),
            start.to_density(),
            grid,
            tol,
            monitors=[monitor],
        )

    rho = trajectory.final_density()
    rho_logical = _logical_density(rho, layer, enc, model, platform)
    fidelity = _final_fidelity(rho, rho_logical, psi_ideal, layer, enc, model)
    diag = trajectory.diagnostics
    leakage = diag.get("dark_leakage", np.zeros(1))
    report = GateReport(
        kind=kind,
        layer=layer,
        fidelity=fidelity,
        ideal_angle=angle,
        initial_label=initial_label,
        schedule_id=schedule.schedule_id,
        duration=schedule.duration,
        relative_phase=_relative_phase(kind, rho_logical),
        final_dark_leakage=float(leakage[-1]),
        max_dark_leakage=float(np.max(leakage)),
        max_trace_error=float(np.max(diag.get("trace_error", [0.0]))),
        max_hermiticity_correction=float(
            np.max(diag.get("hermiticity_correction", [0.0]))
        ),
        min_eigenvalue=float(np.min(diag.get("min_eigenvalue", [0.0]))),
        parameters=_report_parameters(
            cd_method, schedule, rates, samples, tol, model
        ),
        wall_time=time.perf_counter() - started,
        trajectory=trajectory if keep_trajectory else None,
        logical_density=rho_logical,
    )
    structlog.get_logger(ROOT_LOGGER).debug(
        f"{kind} gate on {layer}: fidelity {fidelity:.8f}",
        schedule=schedule.schedule_id,
    )
    return report


def _propagate_columns(
    kind: GateKind,
    schedule: PulseSchedule,
    enc: DfsEncoding,
    starts: np.ndarray,
    cd_method: CdMethod,
    tol: float,
) -> np.ndarray:
    """Evolve each column of ``starts`` on the DFS; return final columns."""
    hd = gate_hamiltonian(kind, schedule, enc, cd_method)
    grid = np.array([0.0, schedule.duration])
    finals = []
    for column in starts.T:
        psi = Ket(layout=enc.layout, amplitudes=column)
        trajectory = propagate_unitary(hd, psi, grid, tol)
        final = trajectory.final
        assert isinstance(final, Ket)
        finals.append(final.amplitudes)
    return np.column_stack(finals)


def logical_unitary(
    kind: GateKind,
    schedule: PulseSchedule,
    enc: DfsEncoding | None = None,
    cd_method: CdMethod = CdMethod.CLOSED_FORM,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Simulated gate on the computational states of the DFS."""
    enc = enc or default_encoding(kind)
    comp = enc.computational_isometry().astype(complex)
    if not schedule.segments:
        return np.eye(enc.logical_dim, dtype=complex)
    finals = _propagate_columns(kind, schedule, enc, comp, cd_method, tol)
    return comp.conj().T @ finals


def dark_subspace_unitary(
    kind: GateKind,
    schedule: PulseSchedule,
    enc: DfsEncoding | None = None,
    cd_method: CdMethod = CdMethod.CLOSED_FORM,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Simulated map ``<D_k(T)|U|D_l(0)>`` on the dark subspace."""
    enc = enc or default_encoding(kind)
    initial = dark_states(kind, schedule.control_point(0.0), enc)
    start = np.column_stack([d.amplitudes for d in initial])
    end = np.column_stack(
        [
            d.amplitudes
            for d in dark_states(
                kind, schedule.control_point(schedule.duration), enc
            )
        ]
    )
    finals = _propagate_columns(kind, schedule, enc, start, cd_method, tol)
    return end.conj().T @ finals


def format_number(value: float) -> str:
    """Fixed notation, or exponent notation below ``CSV_SMALL``."""
    if value != 0 and abs(value) < CSV_SMALL:
        return f"{value:.6e}"
    return f"{value:.10g}"


def write_trajectory_csv(
    trajectory: Trajectory,
    path: Path,
    observables: Mapping[str, Sequence[float] | np.ndarray] | None = None,
) -> None:
    """Write one row per sample: time, then diagnostics and observables.

    Columns after ``t_us`` are sorted by name.  Magnitudes below
    ``CSV_SMALL`` are written in exponent notation.
    """
    columns: dict[str, np.ndarray] = {
        name: np.asarray(values, dtype=float)
        for name, values in trajectory.diagnostics.items()
    }
    for name, values in (observables or {}).items():
        columns[name] = np.asarray(values, dtype=float)
    for name, values in columns.items():
        if values.shape != trajectory.times.shape:
            raise LayoutError(
                f"Column {name} has {values.size} entries for"
                f" {trajectory.times.size} samples"
            )
    names = sorted(columns)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_us", *names])
        for i, t in enumerate(trajectory.times):
            writer.writerow(
                [
                    format_number(float(t)),
                    *(format_number(float(columns[n][i])) for n in names),
                ]
            )
