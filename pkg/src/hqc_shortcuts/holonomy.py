"""DFS encodings, target Hamiltonians, pulse schedules and holonomies.

Three gate families live on decoherence-free subspaces of NV registers:

bitphase
    ``U_y = exp(i beta sigma_y)`` on C1, with the logical
    ``sigma_y = i(|0><1| - |1><0|)``.
phase
    ``U_z = exp(i beta |1><1|)`` on C1.
cp
    ``U_cz = exp(i beta |11><11|)`` on C2.

Each target Hamiltonian keeps a zero-energy dark subspace.  A closed loop
of the control angles (theta, phi) moves that subspace around and the
path-ordered exponential of its connection is the gate.
"""

from __future__ import annotations

import bisect
import itertools
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from types import MappingProxyType

import numpy as np
import scipy.integrate
import scipy.linalg

from .constants import (
    FD_STEP_FRACTION,
    HOLONOMY_UNITARITY_TOL,
    LOOP_CLOSURE_TOL,
)
from .exceptions import (
    EncodingError,
    LoopClosureError,
    ScheduleError,
    ValidationError,
)
from .qcore import HilbertLayout, Ket, Op
from .tqda import (
    C1_LAYOUT,
    C2_LAYOUT,
    ControlPoint,
    ParamHamiltonian,
    cd_bitphase_closed_form,
    cd_cp_closed_form,
    cd_phase_closed_form,
    counterdiabatic_hamiltonian,
)

__all__ = [
    "C1",
    "C2",
    "CdMethod",
    "DfsEncoding",
    "GateKind",
    "HolonomyResult",
    "PulseSchedule",
    "Ramp",
    "Segment",
    "build_h0",
    "close_loop",
    "cp_encoding_for",
    "dark_states",
    "default_encoding",
    "embed_logical",
    "gate_hamiltonian",
    "ideal_gate",
    "make_schedule",
    "solid_angle_phase",
    "wilson_loop",
]

_CONTINUITY_TOL = 1e-12


class GateKind(StrEnum):
    """Holonomic gate families."""

    BITPHASE = "bitphase"
    PHASE = "phase"
    CP = "cp"


class Ramp(StrEnum):
    """Shape of an angle ramp inside one segment."""

    COSINE = "cosine"
    LINEAR = "linear"


class CdMethod(StrEnum):
    """How the counterdiabatic term is produced."""

    CLOSED_FORM = "closed_form"
    NUMERIC = "numeric"
    NONE = "none"


@dataclass(frozen=True)
class DfsEncoding:
    """Logical labels of a DFS and the register qubits each one excites.

    Qubits are numbered from 1, qubit 1 being the leftmost (most
    significant) bit of the register.
    """

    name: str
    logical_labels: tuple[str, ...]
    excitations: Mapping[str, tuple[int, ...]]
    n_qubits: int
    computational_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if set(self.excitations) != set(self.logical_labels):
            raise EncodingError("Every logical label needs its excitations")
        for label, qubits in self.excitations.items():
            if any(not 1 <= q <= self.n_qubits for q in qubits):
                raise EncodingError(
                    f"State {label} excites a qubit outside the register"
                )
        object.__setattr__(
            self, "excitations", MappingProxyType(dict(self.excitations))
        )

    @property
    def layout(self) -> HilbertLayout:
        return C1_LAYOUT if self.name == "C1" else C2_LAYOUT

    @property
    def physical_index(self) -> dict[str, int]:
        """Computational-basis index of each logical label."""
        return {
            label: sum(2 ** (self.n_qubits - q) for q in qubits)
            for label, qubits in self.excitations.items()
        }

    def position(self, label: str) -> int:
        try:
            return self.logical_labels.index(label)
        except ValueError:
            raise EncodingError(
                f"No label '{label}' in {self.name}"
            ) from None

    def isometry(self, layout: HilbertLayout) -> np.ndarray:
        """Columns embed each DFS label into ``layout``.

        The layout must start with the register qubits ``q1`` .. ``qN``;
        any further factor (the cavity) is put in its ground state.
        """
        if layout.labels[: self.n_qubits] != tuple(
            f"q{j}" for j in range(1, self.n_qubits + 1)
        ):
            raise EncodingError(
                f"Layout {layout.labels} does not hold a {self.n_qubits}"
                " qubit register"
            )
        extra = len(layout.factors) - self.n_qubits
        iso = np.zeros((layout.total_dim, len(self.logical_labels)))
        for col, label in enumerate(self.logical_labels):
            digits = [0] * self.n_qubits + [0] * extra
            for q in self.excitations[label]:
                digits[q - 1] = 1
            iso[layout.basis_index(digits), col] = 1.0
        return iso

    def logical_ket(self, amplitudes: Sequence[complex]) -> Ket:
        """Lift computational-basis amplitudes onto the DFS layout."""
        if len(amplitudes) != len(self.computational_labels):
            raise EncodingError(
                f"{self.name} has {len(self.computational_labels)}"
                f" computational states, got {len(amplitudes)} amplitudes"
            )
        amps = np.zeros(len(self.logical_labels), dtype=complex)
        for label, value in zip(
            self.computational_labels, amplitudes, strict=True
        ):
            amps[self.position(label)] = value
        return Ket(layout=self.layout, amplitudes=amps)

    def computational_isometry(self) -> np.ndarray:
        """Columns embed the computational states into the DFS layout."""
        iso = np.zeros((len(self.logical_labels), self.logical_dim))
        for col, label in enumerate(self.computational_labels):
            iso[self.position(label), col] = 1.0
        return iso

    @property
    def logical_dim(self) -> int:
        return len(self.computational_labels)


C1 = DfsEncoding(
    name="C1",
    logical_labels=("a1", "0L", "1L", "a2"),
    excitations={"a1": (1,), "0L": (4,), "1L": (3,), "a2": (2,)},
    n_qubits=4,
    computational_labels=("0L", "1L"),
)

_C2_CANONICAL = {
    "a3": (1, 7),
    "00L": (4, 8),
    "01L": (4, 7),
    "10L": (3, 8),
    "11L": (3, 7),
    "a4": (2, 7),
}

C2 = DfsEncoding(
    name="C2",
    logical_labels=("a3", "00L", "01L", "10L", "11L", "a4"),
    excitations=_C2_CANONICAL,
    n_qubits=8,
    computational_labels=("00L", "01L", "10L", "11L"),
)


def default_encoding(kind: GateKind) -> DfsEncoding:
    return C2 if kind == GateKind.CP else C1


def cp_encoding_for(m: int, n: int, total_logical: int) -> DfsEncoding:
    """C2 relabelled onto logical qubits ``m`` and ``n`` of a register.

    Logical qubit ``k`` occupies physical qubits ``4k-3`` .. ``4k``.
    """
    if not 1 <= m < n <= total_logical:
        raise EncodingError(
            f"Need 1 <= m < n <= {total_logical}, got m={m}, n={n}"
        )

    def relabel(q: int) -> int:
        return 4 * (m - 1) + q if q <= 4 else 4 * (n - 1) + (q - 4)

    return DfsEncoding(
        name="C2",
        logical_labels=C2.logical_labels,
        excitations={
            label: tuple(relabel(q) for q in qubits)
            for label, qubits in _C2_CANONICAL.items()
        },
        n_qubits=4 * total_logical,
        computational_labels=C2.computational_labels,
    )


def _check_kind(kind: GateKind, enc: DfsEncoding) -> None:
    expected = "C2" if kind == GateKind.CP else "C1"
    if enc.name != expected:
        raise EncodingError(
            f"Gate kind {kind} needs encoding {expected}, not {enc.name}"
        )


def build_h0(
    kind: GateKind, p: ControlPoint, enc: DfsEncoding | None = None
) -> Op:
    """Return the target Hamiltonian of ``kind`` on its DFS."""
    enc = enc or default_encoding(kind)
    _check_kind(kind, enc)
    lam = p.lambda_prime
    dim = len(enc.logical_labels)
    h = np.zeros((dim, dim), dtype=complex)

    def couple(bra: str, ket: str, value: complex) -> None:
        i, j = enc.position(bra), enc.position(ket)
        h[i, j] += value
        h[j, i] += np.conj(value)

    if kind == GateKind.BITPHASE:
        st, ct = np.sin(p.theta), np.cos(p.theta)
        couple("a1", "0L", lam * st * np.cos(p.phi))
        couple("a1", "1L", lam * st * np.sin(p.phi))
        couple("a1", "a2", lam * ct)
    else:
        half_s, half_c = np.sin(p.theta / 2), np.cos(p.theta / 2)
        anc, target, dark = _phase_labels(kind)
        couple(anc, target, lam * half_s * np.exp(1j * p.phi))
        couple(anc, dark, lam * half_c)
    return Op(layout=enc.layout, matrix=h, hermitian=True)


def dark_states(
    kind: GateKind, p: ControlPoint, enc: DfsEncoding | None = None
) -> list[Ket]:
    """Return the orthonormal zero-energy states of `build_h0`.

    For the bit-phase Hamiltonian the first state is
    ``cos(theta)cos(phi)|0> + cos(theta)sin(phi)|1> - sin(theta)|a2>``,
    which is unit norm as written; it is normalized anyway.
    """
    enc = enc or default_encoding(kind)
    _check_kind(kind, enc)
    dim = len(enc.logical_labels)

    def ket(parts: Mapping[str, complex]) -> Ket:
        amps = np.zeros(dim, dtype=complex)
        for label, value in parts.items():
            amps[enc.position(label)] = value
        return Ket(layout=enc.layout, amplitudes=amps)

    th, ph = p.theta, p.phi
    if kind == GateKind.BITPHASE:
        first = ket(
            {
                "0L": np.cos(th) * np.cos(ph),
                "1L": np.cos(th) * np.sin(ph),
                "a2": -np.sin(th),
            }
        ).normalized()
        second = ket({"0L": -np.sin(ph), "1L": np.cos(ph)})
        return [first, second]
    _, target, dark = _phase_labels(kind)
    rotating = {
        target: np.cos(th / 2),
        dark: -np.sin(th / 2) * np.exp(1j * ph),
    }
    fixed = ["0L"] if kind == GateKind.PHASE else ["00L", "01L", "10L"]
    return [ket({label: 1.0}) for label in fixed] + [ket(rotating)]


def _phase_labels(kind: GateKind) -> tuple[str, str, str]:
    """Return (ancilla, target, dark partner) for the phase-type gates."""
    if kind == GateKind.PHASE:
        return "a1", "1L", "a2"
    return "a3", "11L", "a4"


def _dark_frame(
    kind: GateKind, p: ControlPoint, enc: DfsEncoding
) -> np.ndarray:
    return np.column_stack([d.amplitudes for d in dark_states(kind, p, enc)])


def _dark_labels(kind: GateKind) -> tuple[str, ...]:
    match kind:
        case GateKind.BITPHASE:
            return ("D'0", "D'1")
        case GateKind.PHASE:
            return ("D0", "D1")
        case GateKind.CP:
            return ("D''0", "D''1", "D''2", "D''3")


@dataclass(frozen=True, slots=True)
class Segment:
    """One leg of a control loop, ramping both angles over ``duration``."""

    theta_start: float
    theta_end: float
    phi_start: float
    phi_end: float
    duration: float
    ramp: Ramp = Ramp.COSINE

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ScheduleError(
                f"Segment duration must be positive, got {self.duration}"
            )

    def _shape(self, u: float) -> tuple[float, float]:
        if self.ramp == Ramp.LINEAR:
            return u, 1.0
        value = 0.5 * (1 - np.cos(np.pi * u))
        return value, 0.5 * np.pi * np.sin(np.pi * u)

    def evaluate(self, tau: float) -> tuple[float, float, float, float]:
        """Return (theta, phi, theta_dot, phi_dot) at local time ``tau``."""
        u = min(max(tau / self.duration, 0.0), 1.0)
        r, r_du = self._shape(u)
        d_theta = self.theta_end - self.theta_start
        d_phi = self.phi_end - self.phi_start
        rate = r_du / self.duration
        return (
            self.theta_start + d_theta * r,
            self.phi_start + d_phi * r,
            d_theta * rate,
            d_phi * rate,
        )


@dataclass(frozen=True)
class PulseSchedule:
    """Piecewise control-angle trajectory.

    A schedule without segments is the identity operation of duration 0.
    """

    segments: tuple[Segment, ...]
    lambda_prime: float
    kind: GateKind | None = None
    knots: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.lambda_prime < 0:
            raise ScheduleError("lambda_prime must not be negative")
        for before, after in itertools.pairwise(self.segments):
            if (
                abs(before.theta_end - after.theta_start) > _CONTINUITY_TOL
                or abs(before.phi_end - after.phi_start) > _CONTINUITY_TOL
            ):
                raise ScheduleError(
                    "Control angles jump between consecutive segments"
                )
        knots = [0.0]
        for seg in self.segments:
            knots.append(knots[-1] + seg.duration)
        object.__setattr__(self, "knots", tuple(knots))

    @property
    def duration(self) -> float:
        return self.knots[-1]

    @property
    def shortest_segment(self) -> float:
        return min((s.duration for s in self.segments), default=0.0)

    def control_point(self, t: float) -> ControlPoint:
        """Return the control point at ``t``, held constant outside."""
        if not self.segments:
            return ControlPoint(
                theta=0.0, phi=0.0, lambda_prime=self.lambda_prime
            )
        t = min(max(t, 0.0), self.duration)
        idx = min(
            bisect.bisect_right(self.knots, t) - 1, len(self.segments) - 1
        )
        seg = self.segments[idx]
        theta, phi, theta_dot, phi_dot = seg.evaluate(t - self.knots[idx])
        return ControlPoint.wrapped(
            theta, phi, theta_dot, phi_dot, self.lambda_prime
        )

    @property
    def schedule_id(self) -> str:
        kind = self.kind.value if self.kind else "custom"
        if not self.segments:
            return f"{kind}:identity"
        ramps = "+".join(sorted({s.ramp.value for s in self.segments}))
        phi_max = max(max(s.phi_start, s.phi_end) for s in self.segments)
        return (
            f"{kind}:legs={len(self.segments)}:phi_c={phi_max:.6g}"
            f":T={self.duration:.6g}:{ramps}"
        )


def close_loop(
    schedule: PulseSchedule, duration: float | None = None
) -> PulseSchedule:
    """Append a leg returning phi to its start at the final theta.

    Schedules that already end where they started are returned unchanged.
    """
    if not schedule.segments:
        return schedule
    first, last = schedule.segments[0], schedule.segments[-1]
    if abs(last.phi_end - first.phi_start) <= _CONTINUITY_TOL:
        return schedule
    if abs(last.theta_end - first.theta_start) > _CONTINUITY_TOL:
        raise ScheduleError("Cannot close a loop that ends at another theta")
    closing = Segment(
        theta_start=last.theta_end,
        theta_end=last.theta_end,
        phi_start=last.phi_end,
        phi_end=first.phi_start,
        duration=duration if duration is not None else last.duration,
        ramp=last.ramp,
    )
    return PulseSchedule(
        segments=(*schedule.segments, closing),
        lambda_prime=schedule.lambda_prime,
        kind=schedule.kind,
    )


def make_schedule(
    kind: GateKind,
    phi_c: float,
    durations: Sequence[float],
    ramp: Ramp = Ramp.COSINE,
    *,
    lambda_prime: float = 1.0,
    closed: bool = True,
) -> PulseSchedule:
    """Build the three-step loop of ``kind``.

    The bit-phase loop climbs to theta = pi/2, the phase and cp loops to
    theta = pi; phi then moves to ``phi_c`` and theta returns to 0 with phi
    held.  With ``closed`` the bit-phase loop gets a fourth leg bringing
    phi back to 0 at theta = 0.  Its duration is the fourth entry of
    ``durations`` or, if only three are given, the second.
    """
    if not 0.0 < phi_c < 2 * np.pi:
        raise ScheduleError(f"phi_c={phi_c} must lie in (0, 2pi)")
    legs = 4 if kind == GateKind.BITPHASE and closed else 3
    if len(durations) not in (3, legs):
        raise ScheduleError(
            f"{kind} schedule takes {legs} durations, got {len(durations)}"
        )
    top = np.pi / 2 if kind == GateKind.BITPHASE else np.pi
    d1, d2, d3 = durations[:3]
    segments = (
        Segment(0.0, top, 0.0, 0.0, d1, ramp),
        Segment(top, top, 0.0, phi_c, d2, ramp),
        Segment(top, 0.0, phi_c, phi_c, d3, ramp),
    )
    schedule = PulseSchedule(
        segments=segments, lambda_prime=lambda_prime, kind=kind
    )
    if legs == 4:
        closing = durations[3] if len(durations) == 4 else d2
        schedule = close_loop(schedule, closing)
    return schedule


def split_total_time(
    kind: GateKind, total_time: float, *, closed: bool = True
) -> list[float]:
    """Share ``total_time`` equally between the legs of a loop."""
    legs = 4 if kind == GateKind.BITPHASE and closed else 3
    return [total_time / legs] * legs


@dataclass(frozen=True)
class HolonomyResult:
    """Holonomy of a closed loop on the dark subspace."""

    dark_basis_labels: tuple[str, ...]
    unitary: Op
    berry_phase: float | None = None

    def __post_init__(self) -> None:
        u = self.unitary.matrix
        error = np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))
        if error > HOLONOMY_UNITARITY_TOL:
            raise ValidationError(f"Holonomy is not unitary ({error:.3e})")


def wilson_loop(
    kind: GateKind,
    schedule: PulseSchedule,
    steps: int = 400,
    enc: DfsEncoding | None = None,
) -> HolonomyResult:
    """Path-ordered exponential of the dark-subspace connection.

    Each segment is cut into ``steps`` intervals and the transport across
    an interval is the unitary part of the overlap of neighbouring dark
    frames, which is ``exp(i A h)`` for the connection
    ``A_kl = i <D_k|dD_l/dt>``.  The result converges as ``1/steps**2``
    and a pure phase is transported exactly.

    For the phase and cp loops ``berry_phase`` is the accumulated phase of
    the moving dark state, unwrapped.  For the bit-phase loop it is the
    rotation angle of the holonomy.
    """
    enc = enc or default_encoding(kind)
    _check_kind(kind, enc)
    labels = _dark_labels(kind)
    layout = HilbertLayout.single("dark", len(labels))
    if steps < 1:
        raise ValidationError("wilson_loop needs at least one step")
    frame_start = _dark_frame(kind, schedule.control_point(0.0), enc)
    frame_end = _dark_frame(
        kind, schedule.control_point(schedule.duration), enc
    )
    mismatch = float(np.max(np.abs(frame_end - frame_start)))
    if mismatch > LOOP_CLOSURE_TOL:
        raise LoopClosureError(
            f"Dark frame does not close ({mismatch:.3e}); append a closing"
            " leg"
        )
    holonomy = np.eye(len(labels), dtype=complex)
    accumulated = 0.0
    legs = zip(schedule.knots[:-1], schedule.segments, strict=True)
    for start, seg in legs:
        h = seg.duration / steps
        f_a = _dark_frame(kind, schedule.control_point(start), enc)
        for i in range(steps):
            f_b = _dark_frame(
                kind, schedule.control_point(start + (i + 1) * h), enc
            )
            # <D_k(t+h)|D_l(t)> = exp(i A h) to second order in h.
            overlap = f_b.conj().T @ f_a
            left, _, right = np.linalg.svd(overlap)
            holonomy = (left @ right) @ holonomy
            accumulated += float(np.angle(overlap[-1, -1]))
            f_a = f_b
    if kind == GateKind.BITPHASE:
        berry = float(np.arctan2(holonomy[1, 0].real, holonomy[0, 0].real))
    else:
        berry = accumulated
    return HolonomyResult(
        dark_basis_labels=labels,
        unitary=Op(layout=layout, matrix=holonomy),
        berry_phase=berry,
    )


def solid_angle_phase(schedule: PulseSchedule) -> float:
    """Return ``-integral sin^2(theta/2) dphi`` along the schedule."""

    def integrand(t: float) -> float:
        p = schedule.control_point(t)
        return -np.sin(p.theta / 2) ** 2 * p.phi_dot

    total = 0.0
    legs = zip(schedule.knots[:-1], schedule.segments, strict=True)
    for start, seg in legs:
        value, _ = scipy.integrate.quad(
            integrand, start, start + seg.duration, epsabs=1e-12
        )
        total += value
    return total


_SIGMA_Y_LOGICAL = np.array([[0, 1j], [-1j, 0]])
"""``i(|0><1| - |1><0|)``, the logical sigma_y."""


def ideal_gate(kind: GateKind, angle: float) -> Op:
    """Return the ideal logical gate for a holonomy ``angle``."""
    match kind:
        case GateKind.BITPHASE:
            matrix = scipy.linalg.expm(1j * angle * _SIGMA_Y_LOGICAL)
        case GateKind.PHASE:
            matrix = np.diag([1.0, np.exp(1j * angle)])
        case GateKind.CP:
            matrix = np.diag([1.0, 1.0, 1.0, np.exp(1j * angle)])
    return Op(
        layout=HilbertLayout.single("logical", matrix.shape[0]),
        matrix=matrix,
    )


def embed_logical(
    enc: DfsEncoding, obj: Op | Ket, layout: HilbertLayout
) -> np.ndarray:
    """Map a DFS operator or ket into a physical register layout."""
    iso = enc.isometry(layout)
    if obj.layout != enc.layout:
        raise EncodingError(f"Expected an object on {enc.layout.labels}")
    if isinstance(obj, Ket):
        return iso @ obj.amplitudes
    return iso @ obj.matrix @ iso.T


def _control(p: ControlPoint | None, t: float) -> ControlPoint:
    if p is None:
        raise ValidationError(
            f"Gate Hamiltonian evaluated without a control point at t={t}"
        )
    return p


def gate_hamiltonian(
    kind: GateKind,
    schedule: PulseSchedule,
    enc: DfsEncoding | None = None,
    cd_method: CdMethod = CdMethod.CLOSED_FORM,
    fd_step: float | None = None,
) -> ParamHamiltonian:
    """Target Hamiltonian plus counterdiabatic term along ``schedule``."""
    enc = enc or default_encoding(kind)
    _check_kind(kind, enc)

    def target(t: float, p: ControlPoint | None) -> np.ndarray:
        return np.array(build_h0(kind, _control(p, t), enc).matrix)

    h0 = ParamHamiltonian(
        layout=enc.layout, generator=target, control=schedule.control_point
    )
    if cd_method == CdMethod.NONE or not schedule.segments:
        return h0
    if cd_method == CdMethod.NUMERIC:
        step = fd_step or FD_STEP_FRACTION * schedule.shortest_segment
        return h0 + counterdiabatic_hamiltonian(h0, step)
    closed_form = {
        GateKind.BITPHASE: cd_bitphase_closed_form,
        GateKind.PHASE: cd_phase_closed_form,
        GateKind.CP: cd_cp_closed_form,
    }[kind]

    def total(t: float, p: ControlPoint | None) -> np.ndarray:
        p = _control(p, t)
        return np.array(build_h0(kind, p, enc).matrix) + np.array(
            closed_form(p).matrix.matrix
        )

    return ParamHamiltonian(
        layout=enc.layout, generator=total, control=schedule.control_point
    )

