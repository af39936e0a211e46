"""NV-centre and microcavity physical layer.

NV centres sit around a whispering-gallery cavity and are addressed by
individual lasers.  With the excited level adiabatically eliminated each
centre is a qubit with Raman coupling ``g`` to the cavity, and far from
two-photon resonance the cavity only mediates flip-flops between centres.

All frequencies are angular, in rad/us.
"""

from __future__ import annotations

import itertools
from collections import deque
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
import structlog

from .constants import (
    DEFAULT_FOCK_CUTOFF,
    DEFAULT_RAMAN_COUPLING,
    DISPERSIVE_RATIO,
    EXCITATION_CONSERVATION_TOL,
    ROOT_LOGGER,
    SPEED_OF_LIGHT,
    TWO_PI,
)
from .exceptions import (
    AsymmetricProgramError,
    DispersiveGuardError,
    EncodingError,
    InfeasibleProgramError,
    LayoutError,
    ValidationError,
)
from .holonomy import (
    DfsEncoding,
    GateKind,
    build_h0,
    default_encoding,
)
from .qcore import (
    HilbertLayout,
    Op,
    annihilation,
    excitation_subspace,
    sigma_minus,
    sigma_plus,
    sigma_z,
)
from .tqda import (
    ControlPoint,
    cd_bitphase_closed_form,
    cd_cp_closed_form,
    cd_phase_closed_form,
)

__all__ = [
    "LaserDrive",
    "LaserSolution",
    "NvDriveConfig",
    "NvParams",
    "PairCouplingProgram",
    "PlatformSettings",
    "RegisterOperators",
    "build_effective_hamiltonian",
    "build_interaction_hamiltonian",
    "coupling_strength_G",
    "dispersive_decay_rates",
    "effective_rabi",
    "gate_program",
    "program_qubits",
    "raman_coupling_g",
    "solve_laser_program",
]

_PHASE_TOL = 1e-9
_COUPLING_FLOOR = 1e-12


@dataclass(frozen=True)
class NvParams:
    """NV and cavity parameters.

    ``gamma0``, ``omega_l``, ``delta``, ``omega_c`` and ``omega_10`` are
    angular frequencies in rad/us, ``nu`` is the optical transition
    frequency in MHz (cyclic) and ``v_m`` the mode volume in cubic
    micrometres.
    """

    gamma0: float
    field_ratio: float
    nu: float
    v_m: float
    omega_l: float
    delta: float
    omega_c: float
    omega_10: float

    def __post_init__(self) -> None:
        for name in (
            "gamma0",
            "nu",
            "v_m",
            "omega_l",
            "delta",
            "omega_c",
            "omega_10",
        ):
            if not getattr(self, name) > 0:
                raise ValidationError(f"NvParams.{name} must be positive")
        if not 0.0 <= self.field_ratio <= 1.0:
            raise ValidationError("NvParams.field_ratio must lie in [0, 1]")


def coupling_strength_G(p: NvParams) -> float:  # noqa: N802
    """Return the single-centre cavity coupling ``G`` in rad/us.

    ``G = Gamma0 |E/E_max| sqrt(V_a / V_m)`` with the characteristic volume
    ``V_a = 3 c^3 / (4 pi nu^2 Gamma0)`` evaluated in SI units, taking
    ``nu`` and ``Gamma0 / 2pi`` as cyclic frequencies.
    """
    nu_hz = p.nu * 1e6
    gamma0_hz = p.gamma0 / TWO_PI * 1e6
    v_a = 3 * SPEED_OF_LIGHT**3 / (4 * np.pi * nu_hz**2 * gamma0_hz)
    v_m = p.v_m * 1e-18
    return float(p.gamma0 * p.field_ratio * np.sqrt(v_a / v_m))


def raman_coupling_g(
    G: float,  # noqa: N803
    omega_l: float,
    delta_opt: float,
    delta: float,
) -> float:
    """Return the Raman coupling ``G Omega_L (1/(Delta + delta) + 1/Delta)``.

    A warning is logged when the optical detuning is less than ten times
    ``G`` or ``Omega_L``; the excited level cannot be eliminated then.
    """
    if delta_opt == 0 or delta_opt + delta == 0:
        raise DispersiveGuardError(
            "Optical detuning makes the Raman coupling singular",
            guard="Delta != 0 and Delta + delta != 0",
        )
    largest = max(abs(G), abs(omega_l))
    if largest and abs(delta_opt) < DISPERSIVE_RATIO * largest:
        structlog.get_logger(ROOT_LOGGER).warning(
            f"Optical detuning {delta_opt:.4g} is not large against"
            f" G={G:.4g} and Omega_L={omega_l:.4g}"
        )
    return float(G * omega_l * (1 / (delta_opt + delta) + 1 / delta_opt))


def effective_rabi(g: float, delta_j: float, delta_k: float) -> float:
    """Return ``(g^2/2)(1/delta_j + 1/delta_k)``, signed."""
    if delta_j == 0 or delta_k == 0:
        raise DispersiveGuardError(
            "Two-photon detunings must be nonzero", guard="delta != 0"
        )
    return float(0.5 * g**2 * (1 / delta_j + 1 / delta_k))


def dispersive_decay_rates(
    g: float, deltas: Sequence[float], kappa: float
) -> list[float]:
    """Cavity-induced decay ``kappa (g/delta_j)^2`` of each driven centre."""
    return [float(kappa * (g / d) ** 2) for d in deltas]


@dataclass(frozen=True)
class NvDriveConfig:
    """Laser settings for a register of NV centres.

    ``deltas[j]`` is the two-photon detuning of centre ``j + 1``, or
    ``None`` when its laser is off.  All centres couple with ``g`` unless
    ``couplings`` gives one Raman coupling per centre.
    """

    n_centers: int
    g: float
    deltas: tuple[float | None, ...]
    phases: tuple[float, ...]
    fock_cutoff: int = DEFAULT_FOCK_CUTOFF
    include_stark: bool = False
    dispersive_guard: bool = True
    couplings: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.deltas) != self.n_centers:
            raise LayoutError("One detuning entry per centre is required")
        if len(self.phases) != self.n_centers:
            raise LayoutError("One laser phase per centre is required")
        if self.couplings is not None and (
            len(self.couplings) != self.n_centers
        ):
            raise LayoutError("One Raman coupling per centre is required")
        if self.fock_cutoff < 1:
            raise LayoutError("fock_cutoff must be at least 1")
        if self.dispersive_guard:
            for j, delta in enumerate(self.deltas, start=1):
                g = self.coupling(j)
                if delta is not None and abs(delta) < DISPERSIVE_RATIO * g:
                    raise DispersiveGuardError(
                        f"Centre {j}: |delta|={abs(delta):.4g} is below"
                        f" {DISPERSIVE_RATIO:g} g={g:.4g}",
                        guard="dispersive_guard",
                    )

    def coupling(self, j: int) -> float:
        """Raman coupling of centre ``j`` (1-based)."""
        if self.couplings is None:
            return self.g
        return self.couplings[j - 1]

    def detuning(self, j: int) -> float:
        """Detuning of driven centre ``j``."""
        delta = self.deltas[j - 1]
        if delta is None:
            raise LayoutError(f"Centre {j} is not driven")
        return delta

    @property
    def driven(self) -> list[int]:
        """Centres (1-based) with their laser on."""
        return [j for j, d in enumerate(self.deltas, start=1) if d is not None]

    def layout(self, *, cavity: bool) -> HilbertLayout:
        return HilbertLayout.qubits(
            self.n_centers, cavity_cutoff=self.fock_cutoff if cavity else None
        )


@dataclass(frozen=True)
class PairCouplingProgram:
    """Flip-flop couplings between centres plus local level shifts.

    ``pairs[(j, k)] = (lambda, phase)`` stands for
    ``lambda (e^{i phase} s_j^- s_k^+ + h.c.)``; each unordered pair
    counts once.  If both orientations are present they must be
    conjugates of each other.
    """

    pairs: Mapping[tuple[int, int], tuple[float, float]]
    shifts: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for (j, k), (lam, phase) in self.pairs.items():
            if j == k or j < 1 or k < 1:
                raise AsymmetricProgramError(f"Invalid pair ({j}, {k})")
            if (k, j) in self.pairs:
                other = _polar(*self.pairs[(k, j)])
                if abs(other - np.conj(_polar(lam, phase))) > _PHASE_TOL * max(
                    1.0, abs(lam)
                ):
                    raise AsymmetricProgramError(
                        f"Pair ({j}, {k}) and ({k}, {j}) are not conjugate"
                    )
        object.__setattr__(self, "pairs", MappingProxyType(dict(self.pairs)))
        object.__setattr__(
            self, "shifts", MappingProxyType(dict(self.shifts))
        )

    @classmethod
    def from_coefficients(
        cls,
        couplings: Mapping[tuple[int, int], complex],
        shifts: Mapping[int, float] | None = None,
    ) -> PairCouplingProgram:
        return cls(
            pairs={
                pair: (float(abs(c)), float(np.angle(c)))
                for pair, c in couplings.items()
            },
            shifts=dict(shifts or {}),
        )

    def coefficient(self, j: int, k: int) -> complex:
        """Coefficient of ``s_j^- s_k^+``."""
        if (j, k) in self.pairs:
            return _polar(*self.pairs[(j, k)])
        if (k, j) in self.pairs:
            return complex(np.conj(_polar(*self.pairs[(k, j)])))
        return 0j

    def unordered(self) -> Iterator[tuple[tuple[int, int], complex]]:
        seen: set[frozenset[int]] = set()
        for (j, k), (lam, phase) in self.pairs.items():
            key = frozenset((j, k))
            if key in seen:
                continue
            seen.add(key)
            yield (j, k), _polar(lam, phase)

    @property
    def centers(self) -> set[int]:
        out = {q for pair in self.pairs for q in pair}
        return out | set(self.shifts)


def _polar(lam: float, phase: float) -> complex:
    return complex(lam * np.exp(1j * phase))


@dataclass(frozen=True)
class LaserSolution:
    """Outcome of `solve_laser_program`.

    ``phases`` holds one laser phase per centre even when the program is
    infeasible; centres without a coupling keep phase 0.
    """

    feasible: bool
    config: NvDriveConfig | None
    residual: float
    reasons: tuple[str, ...] = ()
    guard_violated: bool = False
    phases: tuple[float, ...] = ()

    def require(self) -> NvDriveConfig:
        """Return the configuration or raise the categorized error."""
        if self.feasible and self.config is not None:
            return self.config
        message = "; ".join(self.reasons) or "infeasible laser program"
        if self.guard_violated:
            raise DispersiveGuardError(message, guard="dispersive_guard")
        raise InfeasibleProgramError(message)


def solve_laser_program(
    targets: PairCouplingProgram,
    g: float,
    *,
    n_centers: int | None = None,
    guard_ratio: float = DISPERSIVE_RATIO,
    tol: float = 1e-10,
    fock_cutoff: int = DEFAULT_FOCK_CUTOFF,
) -> LaserSolution:
    """Find one detuning and one phase per centre for ``targets``.

    Each active centre contributes ``x_j = 1/delta_j`` and every pair of
    active centres couples with ``(g^2/2)(x_j + x_k)``, so the magnitudes
    are a linear system in ``x``: least squares when overdetermined,
    minimum norm when underdetermined.  Active pairs without a target must
    come out at zero.  Phases must satisfy ``phase_jk = phi_j - phi_k``.
    """
    active = sorted(
        {
            q
            for (j, k), (lam, _) in targets.pairs.items()
            if lam
            for q in (j, k)
        }
    )
    n_centers = n_centers or max(active, default=0)
    reasons: list[str] = []
    if not active:
        config = NvDriveConfig(
            n_centers=n_centers,
            g=g,
            deltas=(None,) * n_centers,
            phases=(0.0,) * n_centers,
            fock_cutoff=fock_cutoff,
        )
        return LaserSolution(
            feasible=True,
            config=config,
            residual=0.0,
            phases=config.phases,
        )
    column = {q: i for i, q in enumerate(active)}
    rows = []
    rhs = []
    for j, k in itertools.combinations(active, 2):
        row = np.zeros(len(active))
        row[column[j]] = row[column[k]] = 0.5 * g**2
        rows.append(row)
        rhs.append(abs(targets.coefficient(j, k)))
    if len(active) == 1:
        reasons.append(f"Centre {active[0]} has no partner to couple with")
        return LaserSolution(
            feasible=False,
            config=None,
            residual=float("inf"),
            reasons=tuple(reasons),
            phases=(0.0,) * n_centers,
        )
    matrix = np.array(rows)
    values = np.array(rhs)
    x, *_ = np.linalg.lstsq(matrix, values, rcond=None)
    residual = float(np.max(np.abs(matrix @ x - values)))
    if residual > tol:
        reasons.append(
            f"Coupling magnitudes are not reachable (residual"
            f" {residual:.3e})"
        )
    deltas: list[float | None] = [None] * n_centers
    guard_violated = False
    for q in active:
        xq = x[column[q]]
        if xq == 0:
            reasons.append(f"Centre {q} would need an infinite detuning")
            continue
        delta = float(1 / xq)
        deltas[q - 1] = delta
        if abs(delta) < guard_ratio * g:
            guard_violated = True
            reasons.append(
                f"Centre {q}: |delta|={abs(delta):.4g} is below"
                f" {guard_ratio:g} g"
            )
    solved = _solve_phases(targets, active, reasons)
    phases = tuple(solved.get(j, 0.0) for j in range(1, n_centers + 1))
    config = None
    if all(deltas[q - 1] is not None for q in active):
        config = NvDriveConfig(
            n_centers=n_centers,
            g=g,
            deltas=tuple(deltas),
            phases=phases,
            fock_cutoff=fock_cutoff,
            dispersive_guard=False,
        )
    return LaserSolution(
        feasible=not reasons,
        config=config,
        residual=residual,
        reasons=tuple(reasons),
        guard_violated=guard_violated,
        phases=phases,
    )


def _solve_phases(
    targets: PairCouplingProgram, active: Sequence[int], reasons: list[str]
) -> dict[int, float]:
    """Assign ``phi_j`` so that ``phi_j - phi_k`` matches each target."""
    edges: dict[int, list[tuple[int, float]]] = {q: [] for q in active}
    for (j, k), c in targets.unordered():
        if abs(c) == 0:
            continue
        phase = float(np.angle(c))
        edges[j].append((k, -phase))
        edges[k].append((j, phase))
    phases: dict[int, float] = {}
    for root in active:
        if root in phases:
            continue
        phases[root] = 0.0
        queue = deque([root])
        while queue:
            j = queue.popleft()
            for k, step in edges[j]:
                # phi_k = phi_j - phase_jk
                wanted = phases[j] + step
                if k not in phases:
                    phases[k] = wanted
                    queue.append(k)
                    continue
                gap = np.angle(np.exp(1j * (phases[k] - wanted)))
                if abs(gap) > _PHASE_TOL:
                    message = (
                        f"No laser phases satisfy pair ({j}, {k}):"
                        f" mismatch {gap:.4g} rad"
                    )
                    if message not in reasons:
                        reasons.append(message)
    return phases


class RegisterOperators:
    """Ladder operators on a register (and cavity), cached.

    With ``max_excitations`` the operators are restricted to the product
    states with at most that many excitations (qubit 1-states plus
    photons).  Matrix elements between product states factorize, so the
    restricted matrices are built directly without the full space.
    """

    def __init__(
        self, layout: HilbertLayout, max_excitations: int | None = None
    ) -> None:
        self.layout = layout
        grids = np.indices(layout.dims).reshape(len(layout.dims), -1).T
        if max_excitations is not None:
            grids = grids[grids.sum(axis=1) <= max_excitations]
        self.max_excitations = max_excitations
        self.digits = grids
        self.indices = np.ravel_multi_index(grids.T, layout.dims)
        self.dim = int(grids.shape[0])
        self.n_qubits = sum(1 for label in layout.labels if label[0] == "q")
        self.has_cavity = "cavity" in layout.labels
        self._cache: dict[tuple[object, ...], np.ndarray] = {}

    @property
    def reduced_layout(self) -> HilbertLayout:
        if self.dim == self.layout.total_dim:
            return self.layout
        return HilbertLayout.single("subspace", self.dim)

    def isometry(self) -> np.ndarray:
        if self.max_excitations is None:
            return np.eye(self.dim)
        return excitation_subspace(self.layout, self.max_excitations)

    def reduce_vector(self, amplitudes: np.ndarray) -> np.ndarray:
        return np.asarray(amplitudes)[self.indices]

    def local_product(self, ops: Mapping[int, np.ndarray]) -> np.ndarray:
        """Matrix of a product of single-factor operators."""
        out = np.ones((self.dim, self.dim), dtype=complex)
        for f in range(self.digits.shape[1]):
            rows = self.digits[:, f][:, None]
            cols = self.digits[:, f][None, :]
            if f in ops:
                out = out * ops[f][rows, cols]
            else:
                out = out * (rows == cols)
        return out

    def _cached(
        self, key: tuple[object, ...], ops: Mapping[int, np.ndarray]
    ) -> np.ndarray:
        if key not in self._cache:
            self._cache[key] = self.local_product(ops)
        return self._cache[key]

    def lower(self, j: int) -> np.ndarray:
        return self._cached(("lower", j), {j - 1: sigma_minus()})

    def number(self, j: int) -> np.ndarray:
        return self._cached(
            ("number", j), {j - 1: np.diag([0, 1]).astype(complex)}
        )

    def flip_flop(self, j: int, k: int) -> np.ndarray:
        """``s_j^- s_k^+``, moving an excitation from ``j`` to ``k``."""
        return self._cached(
            ("flip", j, k), {j - 1: sigma_minus(), k - 1: sigma_plus()}
        )

    def collective_lower(self) -> np.ndarray:
        return sum(
            (self.lower(j) for j in range(1, self.n_qubits + 1)),
            start=np.zeros((self.dim, self.dim), dtype=complex),
        )

    def collective_z(self) -> np.ndarray:
        return sum(
            (
                self._cached(("z", j), {j - 1: sigma_z()})
                for j in range(1, self.n_qubits + 1)
            ),
            start=np.zeros((self.dim, self.dim), dtype=complex),
        )

    def cavity_lower(self) -> np.ndarray:
        if not self.has_cavity:
            raise LayoutError("This register has no cavity factor")
        position = self.layout.index_of("cavity")
        cutoff = self.layout.dims[position] - 1
        return self._cached(("a",), {position: annihilation(cutoff)})

    def raman(self, j: int) -> np.ndarray:
        """``a s_j^+``: absorb a cavity photon into centre ``j``."""
        position = self.layout.index_of("cavity")
        cutoff = self.layout.dims[position] - 1
        return self._cached(
            ("raman", j),
            {position: annihilation(cutoff), j - 1: sigma_plus()},
        )

    def excitation_number(self) -> np.ndarray:
        return np.diag(self.digits.sum(axis=1)).astype(complex)

    def embed(self, enc: DfsEncoding, photons: int = 0) -> np.ndarray:
        """Rows of this basis for each DFS label, cavity in ``photons``."""
        lookup = {int(idx): row for row, idx in enumerate(self.indices)}
        out = np.zeros((self.dim, len(enc.logical_labels)))
        extra = len(self.layout.factors) - enc.n_qubits
        for col, label in enumerate(enc.logical_labels):
            digits = [0] * (enc.n_qubits + extra)
            for q in enc.excitations[label]:
                digits[q - 1] = 1
            if extra:
                digits[-1] = photons
            flat = self.layout.basis_index(digits)
            if flat in lookup:
                out[lookup[flat], col] = 1.0
        return out

    def program_matrix(self, prog: PairCouplingProgram) -> np.ndarray:
        """Flip-flop Hamiltonian of ``prog`` on this basis."""
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for (j, k), c in prog.unordered():
            term = c * self.flip_flop(j, k)
            h += term + term.conj().T
        for j, shift in prog.shifts.items():
            h += shift * self.number(j)
        return h


def _register_ops(
    cfg: NvDriveConfig, ops: RegisterOperators | None, *, cavity: bool
) -> RegisterOperators:
    layout = cfg.layout(cavity=cavity)
    if ops is None:
        return RegisterOperators(layout)
    if ops.layout != layout:
        raise LayoutError(
            f"Register operators on {ops.layout.labels} do not match"
            f" {layout.labels}"
        )
    return ops


def build_interaction_hamiltonian(
    cfg: NvDriveConfig, t: float, *, ops: RegisterOperators | None = None
) -> Op:
    """Raman interaction of the driven centres with the cavity.

    ``H = sum_j g_j a s_j^+ e^{-i(delta_j t - phi_j)} + h.c.``.  The result lives on the register followed by the cavity, or on the
    excitation-limited basis of ``ops`` when one is given.
    """
    ops = _register_ops(cfg, ops, cavity=True)
    h = np.zeros((ops.dim, ops.dim), dtype=complex)
    for j in cfg.driven:
        term = (
            cfg.coupling(j)
            * np.exp(-1j * (cfg.detuning(j) * t - cfg.phases[j - 1]))
            * ops.raman(j)
        )
        h += term + term.conj().T
    number = ops.excitation_number()
    error = float(np.max(np.abs(h @ number - number @ h)))
    if error > EXCITATION_CONSERVATION_TOL * max(1.0, cfg.g):
        raise ValidationError("Interaction does not conserve excitations")
    return Op(layout=ops.reduced_layout, matrix=h, hermitian=True)


def build_effective_hamiltonian(
    prog: PairCouplingProgram,
    cfg: NvDriveConfig,
    t: float = 0.0,
    *,
    ops: RegisterOperators | None = None,
) -> Op:
    """Dispersive flip-flop Hamiltonian on the register alone.

    With ``cfg.include_stark`` each driven centre also gets the vacuum
    Stark shift ``g_j^2/delta_j`` on its excited level.
    """
    ops = _register_ops(cfg, ops, cavity=False)
    h = ops.program_matrix(prog)
    if cfg.include_stark:
        for j in cfg.driven:
            h += (cfg.coupling(j) ** 2 / cfg.detuning(j)) * ops.number(j)
    return Op(layout=ops.reduced_layout, matrix=h, hermitian=True)


def gate_program(
    matrix: np.ndarray | Op, enc: DfsEncoding
) -> PairCouplingProgram:
    """Decompose a DFS Hamiltonian into flip-flops and level shifts.

    An off-diagonal element between two DFS states that differ by one
    moved excitation becomes the coupling of that pair of centres.  A
    diagonal element becomes a shift on the single programmed centre the
    state excites.  States with no coupling and no energy are left alone,
    so on C2 the program acts on the first logical block regardless of
    the second.
    """
    m = np.asarray(matrix.matrix if isinstance(matrix, Op) else matrix)
    floor = _COUPLING_FLOOR * max(1.0, float(np.max(np.abs(m))))
    labels = enc.logical_labels
    excited = {label: set(enc.excitations[label]) for label in labels}
    couplings: dict[tuple[int, int], complex] = {}
    for (x, lx), (y, ly) in itertools.permutations(enumerate(labels), 2):
        value = complex(m[x, y])
        if abs(value) <= floor:
            continue
        source = excited[ly] - excited[lx]
        sink = excited[lx] - excited[ly]
        if len(source) != 1 or len(sink) != 1:
            raise EncodingError(
                f"Coupling {lx} <-> {ly} is not a two-body flip-flop"
            )
        (j,), (k,) = source, sink
        if (k, j) in couplings:
            continue
        if (j, k) in couplings and abs(couplings[(j, k)] - value) > floor:
            raise EncodingError(
                f"Pair ({j}, {k}) is programmed with two values"
            )
        couplings[(j, k)] = value
    programmed = {q for pair in couplings for q in pair}
    shifts: dict[int, float] = {}
    for x, label in enumerate(labels):
        energy = float(m[x, x].real)
        if abs(energy) <= floor:
            continue
        owners = excited[label] & programmed or excited[label]
        if len(owners) != 1:
            raise EncodingError(
                f"Energy of {label} cannot be placed on a single centre"
            )
        (q,) = owners
        if q in shifts and abs(shifts[q] - energy) > floor:
            raise EncodingError(f"Centre {q} needs two different shifts")
        shifts[q] = energy
    return PairCouplingProgram.from_coefficients(couplings, shifts)


def program_qubits(
    kind: GateKind, enc: DfsEncoding | None = None
) -> list[int]:
    """Centres a gate of ``kind`` ever drives, in increasing order.

    Read off the program at a generic control point, where every coupling
    the loop uses is nonzero.
    """
    enc = enc or default_encoding(kind)
    point = ControlPoint(
        theta=1.1, phi=0.7, theta_dot=0.3, phi_dot=0.5, lambda_prime=1.0
    )
    closed_form = {
        GateKind.BITPHASE: cd_bitphase_closed_form,
        GateKind.PHASE: cd_phase_closed_form,
        GateKind.CP: cd_cp_closed_form,
    }[kind]
    matrix = (
        build_h0(kind, point, enc).matrix + closed_form(point).matrix.matrix
    )
    return sorted(gate_program(matrix, enc).centers)


@dataclass(frozen=True)
class PlatformSettings:
    """Physical-layer settings for a gate run.

    ``detunings`` are the static two-photon detunings of the driven
    centres in increasing centre order.  They set the Stark shifts and
    the cavity-induced decay of the effective layer and the laser
    detunings of the full cavity layer.
    """

    g: float = DEFAULT_RAMAN_COUPLING
    detunings: tuple[float, ...] = ()
    fock_cutoff: int = DEFAULT_FOCK_CUTOFF
    include_stark: bool = False
    cavity_purcell: bool = True
    dispersive_guard: bool = True

    def detuning_map(self, qubits: Sequence[int]) -> dict[int, float]:
        if not self.detunings:
            return {}
        if len(self.detunings) < len(qubits):
            raise ValidationError(
                f"{len(qubits)} driven centres need detunings, got"
                f" {len(self.detunings)}"
            )
        return dict(zip(qubits, self.detunings, strict=False))

    def lambda_prime(self) -> float:
        """Effective Rabi frequency of the first two driven centres."""
        if len(self.detunings) < 2:
            raise ValidationError("lambda_prime needs two detunings")
        return effective_rabi(self.g, self.detunings[0], self.detunings[1])

    def drive_config(
        self, n_centers: int, driven: Sequence[int]
    ) -> NvDriveConfig:
        """Lasers on ``driven`` at their detunings, all phases zero."""
        deltas = self.detuning_map(driven)
        return NvDriveConfig(
            n_centers=n_centers,
            g=self.g,
            deltas=tuple(deltas.get(j) for j in range(1, n_centers + 1)),
            phases=(0.0,) * n_centers,
            fock_cutoff=self.fock_cutoff,
            include_stark=self.include_stark,
            dispersive_guard=self.dispersive_guard,
        )


class LaserDrive:
    """One laser per centre realising a time-dependent program.

    Each driven centre keeps its static detuning from ``base`` and couples
    to the cavity through `build_interaction_hamiltonian`.  Second-order
    exchange through the cavity gives the pair ``(j, k)`` the coefficient
    ``-g_j g_k (1/delta_j + 1/delta_k)/2 e^{i(phi_k - phi_j)}``, so at
    each instant the laser phases come from `solve_laser_program` on the
    conjugated, sign-corrected targets.  Amplitudes follow a spanning tree
    of the program rooted at its lowest centre: the root couples with
    ``g`` and every child gets the coupling that makes its exchange with
    the parent match the target.

    Pairs off the tree come out as the cavity makes them, and the
    exchange of two centres at different detunings rotates at
    ``delta_j - delta_k`` and averages away.  The worst gap between the
    exchange the lasers produce at equal detunings and the program is
    kept in ``max_program_error``.  Programmed level shifts are applied
    directly; the vacuum Stark shifts ``-g_j^2/delta_j`` of the lasers
    are cancelled unless ``include_stark`` is set.
    """

    def __init__(self, ops: RegisterOperators, base: NvDriveConfig) -> None:
        if not ops.has_cavity:
            raise LayoutError("A laser drive needs a cavity factor")
        self._ops = ops
        self._base = base
        self.max_program_error = 0.0
        self.max_ratio = 0.0
        self._warned = False
        self._logger = structlog.get_logger(ROOT_LOGGER)

    def _weight(self, j: int, k: int) -> float:
        return 0.5 * (
            1 / self._base.detuning(j) + 1 / self._base.detuning(k)
        )

    def _check_driven(self, prog: PairCouplingProgram) -> None:
        for (j, k), c in prog.unordered():
            for q in (j, k):
                if abs(c) and self._base.deltas[q - 1] is None:
                    raise LayoutError(f"Centre {q} has no laser detuning")

    def _amplitudes(self, prog: PairCouplingProgram) -> dict[int, float]:
        neighbours: dict[int, list[tuple[int, float]]] = {}
        for (j, k), c in prog.unordered():
            if abs(c) == 0:
                continue
            neighbours.setdefault(j, []).append((k, abs(c)))
            neighbours.setdefault(k, []).append((j, abs(c)))
        amplitudes: dict[int, float] = {}
        for root in sorted(neighbours):
            if root in amplitudes:
                continue
            amplitudes[root] = self._base.g
            queue = deque([root])
            while queue:
                j = queue.popleft()
                for k, magnitude in neighbours[j]:
                    if k in amplitudes:
                        continue
                    weight = abs(self._weight(j, k))
                    amplitudes[k] = (
                        magnitude / (amplitudes[j] * weight)
                        if amplitudes[j] and weight
                        else 0.0
                    )
                    queue.append(k)
        return amplitudes

    def config(self, prog: PairCouplingProgram) -> NvDriveConfig:
        """Laser settings realising ``prog`` at this instant."""
        base = self._base
        self._check_driven(prog)
        laser = PairCouplingProgram.from_coefficients(
            {
                (j, k): complex(-np.conj(c) * np.sign(self._weight(j, k)))
                for (j, k), c in prog.unordered()
                if abs(c)
            }
        )
        solution = solve_laser_program(
            laser,
            base.g,
            n_centers=base.n_centers,
            fock_cutoff=base.fock_cutoff,
        )
        amplitudes = self._amplitudes(prog)
        cfg = NvDriveConfig(
            n_centers=base.n_centers,
            g=base.g,
            deltas=tuple(
                base.deltas[j - 1] if amplitudes.get(j) else None
                for j in range(1, base.n_centers + 1)
            ),
            phases=solution.phases,
            fock_cutoff=base.fock_cutoff,
            include_stark=base.include_stark,
            dispersive_guard=False,
            couplings=tuple(
                amplitudes.get(j, 0.0) for j in range(1, base.n_centers + 1)
            ),
        )
        self._track(prog, cfg)
        return cfg

    def _track(self, prog: PairCouplingProgram, cfg: NvDriveConfig) -> None:
        for j in cfg.driven:
            self.max_ratio = max(
                self.max_ratio, cfg.coupling(j) / abs(cfg.detuning(j))
            )
        centres = sorted(prog.centers | set(cfg.driven))
        for j, k in itertools.combinations(centres, 2):
            realised = 0j
            if (
                j in cfg.driven
                and k in cfg.driven
                and np.isclose(cfg.detuning(j), cfg.detuning(k), rtol=1e-12)
            ):
                realised = (
                    -cfg.coupling(j)
                    * cfg.coupling(k)
                    * self._weight(j, k)
                    * np.exp(1j * (cfg.phases[k - 1] - cfg.phases[j - 1]))
                )
            error = abs(realised - prog.coefficient(j, k))
            self.max_program_error = max(self.max_program_error, error)
        if (
            self._base.dispersive_guard
            and self.max_ratio * DISPERSIVE_RATIO > 1
            and not self._warned
        ):
            self._warned = True
            self._logger.warning(
                f"Laser drive leaves the dispersive regime: g/delta ="
                f" {self.max_ratio:.3g}"
            )

    def matrix(self, prog: PairCouplingProgram, t: float) -> np.ndarray:
        """Hamiltonian of the drive realising ``prog`` at time ``t``."""
        ops = self._ops
        cfg = self.config(prog)
        h = np.array(build_interaction_hamiltonian(cfg, t, ops=ops).matrix)
        for j, shift in prog.shifts.items():
            h += shift * ops.number(j)
        if not cfg.include_stark:
            for j in cfg.driven:
                h += (cfg.coupling(j) ** 2 / cfg.detuning(j)) * ops.number(j)
        return h


def collective_spin_ops(ops: RegisterOperators) -> tuple[Op, Op]:
    """Return (S^-, S^z) on ``ops``' basis."""
    layout = ops.reduced_layout
    return (
        Op(layout=layout, matrix=ops.collective_lower()),
        Op(layout=layout, matrix=ops.collective_z(), hermitian=True),
    )
