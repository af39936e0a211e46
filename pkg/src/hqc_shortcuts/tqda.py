"""Counterdiabatic (transitionless driving) Hamiltonians.

The numeric construction works for any parametrized Hamiltonian from its
spectral projectors,

    H1 = (i/2) sum_n [dP_n/dt, P_n],

with the time derivative taken by central finite differences.  This is
the gauge-invariant form of ``i sum_n |dn/dt><n|`` and it already has the
intra-eigenspace connection removed, so the dark subspace is carried by
parallel transport.  The closed forms for the three gate families are
kept as cross-checks of the numeric construction.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from .constants import CD_HERMITIAN_TOL, DEGENERACY_TOL, TWO_PI
from .exceptions import HermiticityError, LevelCrossingError, ValidationError
from .qcore import HilbertLayout, Op, eig_hermitian, hermiticity_error

__all__ = [
    "C1_LAYOUT",
    "C2_LAYOUT",
    "CdTerm",
    "ControlPoint",
    "Gauge",
    "ParamHamiltonian",
    "cd_bitphase_closed_form",
    "cd_cp_closed_form",
    "cd_phase_closed_form",
    "counterdiabatic_hamiltonian",
    "counterdiabatic_numeric",
]

C1_LAYOUT = HilbertLayout.single("dfs_c1", 4)
"""DFS C1 in the order a1, 0L, 1L, a2."""
C2_LAYOUT = HilbertLayout.single("dfs_c2", 6)
"""DFS C2 in the order a3, 00L, 01L, 10L, 11L, a4."""

_ANGLE_SLACK = 1e-12


@dataclass(frozen=True, slots=True)
class ControlPoint:
    """Instantaneous control angles, their rates, and the Rabi scale."""

    theta: float
    phi: float
    theta_dot: float = 0.0
    phi_dot: float = 0.0
    lambda_prime: float = 1.0

    def __post_init__(self) -> None:
        if not -_ANGLE_SLACK <= self.theta <= np.pi + _ANGLE_SLACK:
            raise ValidationError(f"theta={self.theta} is outside [0, pi]")
        if not 0.0 <= self.phi < TWO_PI:
            raise ValidationError(f"phi={self.phi} is outside [0, 2pi)")
        if self.lambda_prime < 0:
            raise ValidationError(
                f"lambda_prime={self.lambda_prime} must not be negative"
            )

    @classmethod
    def wrapped(
        cls,
        theta: float,
        phi: float,
        theta_dot: float = 0.0,
        phi_dot: float = 0.0,
        lambda_prime: float = 1.0,
    ) -> ControlPoint:
        """Clip theta to [0, pi] and reduce phi modulo 2pi."""
        return cls(
            theta=float(np.clip(theta, 0.0, np.pi)),
            phi=float(phi % TWO_PI) % TWO_PI,
            theta_dot=theta_dot,
            phi_dot=phi_dot,
            lambda_prime=lambda_prime,
        )


Generator = Callable[[float, ControlPoint | None], np.ndarray]


@dataclass(frozen=True)
class ParamHamiltonian:
    """A time-dependent Hermitian operator on a fixed layout.

    ``generator`` receives the time and, when ``control`` is set, the
    control point at that time.  With ``validate`` on, every generated
    matrix is checked for Hermiticity.
    """

    layout: HilbertLayout
    generator: Generator
    control: Callable[[float], ControlPoint] | None = None
    validate: bool = False

    @classmethod
    def constant(cls, op: Op) -> ParamHamiltonian:
        matrix = np.array(op.matrix)
        return cls(layout=op.layout, generator=lambda t, p: matrix)

    def control_at(self, t: float) -> ControlPoint | None:
        return None if self.control is None else self.control(t)

    def matrix(self, t: float) -> np.ndarray:
        matrix = self.generator(t, self.control_at(t))
        if self.validate:
            error = hermiticity_error(matrix)
            scale = max(1.0, float(np.max(np.abs(matrix))))
            if error > 1e-12 * scale:
                raise HermiticityError(
                    f"Generator is not Hermitian at t={t} ({error:.3e})"
                )
        return matrix

    def at(self, t: float) -> Op:
        return Op(layout=self.layout, matrix=self.matrix(t), hermitian=True)

    def __add__(self, other: ParamHamiltonian) -> ParamHamiltonian:
        if other.layout != self.layout:
            raise ValidationError("Cannot add Hamiltonians on other layouts")

        def generator(t: float, p: ControlPoint | None) -> np.ndarray:
            return self.matrix(t) + other.matrix(t)

        return ParamHamiltonian(
            layout=self.layout,
            generator=generator,
            control=self.control or other.control,
        )


class Gauge(StrEnum):
    """Gauge of a counterdiabatic term."""

    PARALLEL_TRANSPORT = "parallel_transport"


@dataclass(frozen=True)
class CdTerm:
    """A counterdiabatic Hamiltonian."""

    matrix: Op
    gauge: Gauge = Gauge.PARALLEL_TRANSPORT

    def __post_init__(self) -> None:
        matrix = self.matrix.matrix
        scale = max(1.0, float(np.max(np.abs(matrix))))
        if hermiticity_error(matrix) > CD_HERMITIAN_TOL * scale:
            raise HermiticityError("Counterdiabatic term is not Hermitian")


def counterdiabatic_numeric(
    h0: ParamHamiltonian,
    t: float,
    fd_step: float,
    degeneracy_tol: float = DEGENERACY_TOL,
    *,
    rng: np.random.Generator | None = None,
) -> CdTerm:
    """Build the counterdiabatic term of ``h0`` at time ``t``.

    Parameters
    ----------
    h0
        Hamiltonian to accelerate.
    t
        Evaluation time.
    fd_step
        Half-width of the central difference stencil.
    degeneracy_tol
        Relative tolerance for grouping degenerate eigenvalues.
    rng
        If given, each degenerate eigenbasis is rotated by a random
        unitary before the projectors are assembled.  The result must not
        change; this is how gauge invariance is exercised.

    Raises
    ------
    LevelCrossingError
        The eigenvalue grouping differs across the stencil.
    """
    if fd_step <= 0:
        raise ValidationError(f"fd_step must be positive, got {fd_step}")
    stencil = [
        eig_hermitian(h0.at(when), degeneracy_tol)
        for when in (t - fd_step, t, t + fd_step)
    ]
    shapes = [tuple(s.multiplicity for s in spaces) for spaces in stencil]
    if len(set(shapes)) != 1:
        raise LevelCrossingError(
            f"Eigenvalue groups change around t={t}: {shapes}"
        )
    if rng is not None:
        stencil = [[s.remix(rng) for s in spaces] for spaces in stencil]
    dim = h0.layout.total_dim
    h1 = np.zeros((dim, dim), dtype=complex)
    centers = []
    for minus, center, plus in zip(*stencil, strict=True):
        proj = center.projector()
        d_proj = (plus.projector() - minus.projector()) / (2.0 * fd_step)
        h1 += 0.5j * (d_proj @ proj - proj @ d_proj)
        centers.append(proj)
    # Remove the O(fd_step^2) residue inside each eigenspace.
    for proj in centers:
        h1 -= proj @ h1 @ proj
    h1 = 0.5 * (h1 + h1.conj().T)
    return CdTerm(matrix=Op(layout=h0.layout, matrix=h1, hermitian=True))


def counterdiabatic_hamiltonian(
    h0: ParamHamiltonian,
    fd_step: float,
    degeneracy_tol: float = DEGENERACY_TOL,
) -> ParamHamiltonian:
    """Wrap `counterdiabatic_numeric` as a time-dependent Hamiltonian."""

    def generator(t: float, p: ControlPoint | None) -> np.ndarray:
        term = counterdiabatic_numeric(h0, t, fd_step, degeneracy_tol)
        return np.array(term.matrix.matrix)

    return ParamHamiltonian(
        layout=h0.layout, generator=generator, control=h0.control
    )


def _phase_block(p: ControlPoint) -> np.ndarray:
    """Return the 3x3 counterdiabatic block on (ancilla, target, ancilla)."""
    th, ph = p.theta, p.phi
    th_dot, ph_dot = p.theta_dot, p.phi_dot
    s2 = np.sin(th / 2) ** 2
    c2 = np.cos(th / 2) ** 2
    sin_th = np.sin(th)
    e_plus = np.exp(1j * ph)
    e_minus = np.exp(-1j * ph)
    bright = (ph_dot / 2) * s2 * np.array(
        [
            [-1, 0, 0],
            [0, 3 * c2 - 1, -1.5 * sin_th * e_minus],
            [0, -1.5 * sin_th * e_plus, 3 * s2 - 1],
        ],
        dtype=complex,
    )
    upper = 0.5 * e_minus * (1j * th_dot + sin_th * ph_dot)
    lower = 0.5 * e_plus * (-1j * th_dot + sin_th * ph_dot)
    dark = np.array(
        [[0, 0, 0], [0, s2 * ph_dot, upper], [0, lower, -s2 * ph_dot]],
        dtype=complex,
    )
    return bright + dark


def cd_bitphase_closed_form(p: ControlPoint) -> CdTerm:
    """Counterdiabatic term of the bit-phase Hamiltonian on C1."""
    th, ph = p.theta, p.phi
    th_dot, ph_dot = p.theta_dot, p.phi_dot
    ct, st = np.cos(th), np.sin(th)
    cp, sp = np.cos(ph), np.sin(ph)
    rotation = (
        1j
        * ct
        * ph_dot
        * np.array(
            [
                [0, 0, 0, 0],
                [0, 0, ct, -st * sp],
                [0, -ct, 0, st * cp],
                [0, st * sp, -st * cp, 0],
            ],
            dtype=complex,
        )
    )
    tilt = 1j * np.array(
        [
            [0, 0, 0, 0],
            [0, 0, -ph_dot, cp * th_dot],
            [0, ph_dot, 0, sp * th_dot],
            [0, -cp * th_dot, -sp * th_dot, 0],
        ],
        dtype=complex,
    )
    return CdTerm(
        matrix=Op(layout=C1_LAYOUT, matrix=rotation + tilt, hermitian=True)
    )


def cd_phase_closed_form(p: ControlPoint) -> CdTerm:
    """Counterdiabatic term of the phase Hamiltonian on C1.

    The block acts on (a1, 1L, a2); the row and column of 0L are zero.
    """
    matrix = np.zeros((4, 4), dtype=complex)
    matrix[np.ix_([0, 2, 3], [0, 2, 3])] = _phase_block(p)
    return CdTerm(matrix=Op(layout=C1_LAYOUT, matrix=matrix, hermitian=True))


def cd_cp_closed_form(p: ControlPoint) -> CdTerm:
    """Counterdiabatic term of the controlled-phase Hamiltonian on C2.

    The phase-gate block is carried over to (a3, 11L, a4); 00L, 01L and
    10L stay decoupled.
    """
    matrix = np.zeros((6, 6), dtype=complex)
    matrix[np.ix_([0, 4, 5], [0, 4, 5])] = _phase_block(p)
    return CdTerm(matrix=Op(layout=C2_LAYOUT, matrix=matrix, hermitian=True))
