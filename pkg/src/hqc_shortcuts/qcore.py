"""Dense linear algebra and state bookkeeping for composite Hilbert spaces.

Every space is described by a `HilbertLayout`, an ordered list of labelled
factors.  Tensor products keep the leftmost factor as the slowest-varying
index, so qubit 1 of a register is the most significant bit.
"""

from __future__ import annotations

import functools
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .constants import (
    DEGENERACY_TOL,
    FIDELITY_IMAG_TOL,
    HERMITIAN_TOL,
    NORMALIZATION_TOL,
)
from .exceptions import HermiticityError, LayoutError

__all__ = [
    "DensityMatrix",
    "Eigenspace",
    "HilbertLayout",
    "Ket",
    "Op",
    "annihilation",
    "eig_hermitian",
    "embed_local",
    "excitation_number",
    "excitation_subspace",
    "partial_trace",
    "propagator_step",
    "sigma_minus",
    "sigma_plus",
    "sigma_x",
    "sigma_y",
    "sigma_z",
    "state_fidelity",
    "tensor_product",
]


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=complex)
    out.flags.writeable = False
    return out


def hermiticity_error(matrix: np.ndarray) -> float:
    """Return the max-norm of ``A - A^dagger``."""
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(matrix - matrix.conj().T)))


def _max_abs(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(matrix))) if matrix.size else 0.0


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered tensor factors of a Hilbert space."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        if not self.factors:
            raise LayoutError("A Hilbert layout needs at least one factor")
        labels = [label for label, _ in self.factors]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"Factor labels must be unique: {labels}")
        for label, dim in self.factors:
            if int(dim) != dim or dim < 1:
                raise LayoutError(
                    f"Factor '{label}' has invalid dimension {dim}"
                )

    @classmethod
    def single(cls, label: str, dim: int) -> HilbertLayout:
        return cls(factors=((label, dim),))

    @classmethod
    def qubits(
        cls, n: int, *, cavity_cutoff: int | None = None
    ) -> HilbertLayout:
        """Build an ``n``-qubit register, optionally followed by a cavity.

        Qubits are labelled ``q1`` .. ``qn``.  The cavity factor is
        labelled ``cavity`` and has dimension ``cavity_cutoff + 1``.
        """
        factors = [(f"q{j}", 2) for j in range(1, n + 1)]
        if cavity_cutoff is not None:
            if cavity_cutoff < 1:
                raise LayoutError("Fock cutoff must be at least 1")
            factors.append(("cavity", cavity_cutoff + 1))
        return cls(factors=tuple(factors))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.factors)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"Unknown factor label '{label}'") from None

    def subset(self, keep: Iterable[str]) -> HilbertLayout:
        wanted = set(keep)
        return HilbertLayout(
            factors=tuple(f for f in self.factors if f[0] in wanted)
        )

    def basis_index(self, digits: Sequence[int]) -> int:
        """Return the flat index of a product basis state."""
        if len(digits) != len(self.factors):
            raise LayoutError(
                f"Expected {len(self.factors)} digits, got {len(digits)}"
            )
        return int(np.ravel_multi_index(tuple(digits), self.dims))


@dataclass(frozen=True)
class Ket:
    """A state vector on a layout."""

    layout: HilbertLayout
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        amps = _frozen(np.ravel(self.amplitudes))
        if amps.shape[0] != self.layout.total_dim:
            raise LayoutError(
                f"Ket has {amps.shape[0]} amplitudes for a layout of"
                f" dimension {self.layout.total_dim}"
            )
        if not np.all(np.isfinite(amps)):
            raise LayoutError("Ket amplitudes must be finite")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, layout: HilbertLayout, index: int) -> Ket:
        amps = np.zeros(layout.total_dim, dtype=complex)
        amps[index] = 1.0
        return cls(layout=layout, amplitudes=amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def is_normalized(self, tol: float = NORMALIZATION_TOL) -> bool:
        return abs(self.norm - 1.0) <= tol

    def normalized(self) -> Ket:
        norm = self.norm
        if norm == 0.0:
            raise LayoutError("Cannot normalize the zero vector")
        return Ket(layout=self.layout, amplitudes=self.amplitudes / norm)

    def overlap(self, other: Ket) -> complex:
        """Return ``<self|other>``."""
        _check_same_layout(self.layout, other.layout)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def to_density(self) -> DensityMatrix:
        return DensityMatrix(
            layout=self.layout,
            matrix=np.outer(self.amplitudes, self.amplitudes.conj()),
        )


@dataclass(frozen=True)
class Op:
    """A square operator on a layout.

    When ``hermitian`` is set the matrix is checked on construction, with
    the tolerance scaled by the largest entry for matrices above unit size.
    """

    layout: HilbertLayout
    matrix: np.ndarray = field(repr=False)
    hermitian: bool = False

    def __post_init__(self) -> None:
        matrix = _frozen(self.matrix)
        dim = self.layout.total_dim
        if matrix.shape != (dim, dim):
            raise LayoutError(
                f"Operator of shape {matrix.shape} does not fit a layout of"
                f" dimension {dim}"
            )
        if self.hermitian:
            scale = max(1.0, _max_abs(matrix))
            error = hermiticity_error(matrix)
            if error > HERMITIAN_TOL * scale:
                raise HermiticityError(
                    f"Operator is not Hermitian (max |A - A^dagger| ="
                    f" {error:.3e})"
                )
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls, layout: HilbertLayout) -> Op:
        return cls(
            layout=layout, matrix=np.eye(layout.total_dim), hermitian=True
        )

    def dagger(self) -> Op:
        return Op(
            layout=self.layout,
            matrix=self.matrix.conj().T,
            hermitian=self.hermitian,
        )

    def apply(self, ket: Ket) -> Ket:
        _check_same_layout(self.layout, ket.layout)
        return Ket(
            layout=self.layout, amplitudes=self.matrix @ ket.amplitudes
        )

    def __add__(self, other: Op) -> Op:
        _check_same_layout(self.layout, other.layout)
        return Op(
            layout=self.layout,
            matrix=self.matrix + other.matrix,
            hermitian=self.hermitian and other.hermitian,
        )

    def __matmul__(self, other: Op) -> Op:
        _check_same_layout(self.layout, other.layout)
        return Op(layout=self.layout, matrix=self.matrix @ other.matrix)


@dataclass(frozen=True)
class DensityMatrix:
    """A density operator.  Validity is diagnosed, not enforced."""

    layout: HilbertLayout
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        matrix = _frozen(self.matrix)
        dim = self.layout.total_dim
        if matrix.shape != (dim, dim):
            raise LayoutError(
                f"Density matrix of shape {matrix.shape} does not fit a"
                f" layout of dimension {dim}"
            )
        object.__setattr__(self, "matrix", matrix)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def diagnostics(self) -> dict[str, float]:
        """Return trace error, Hermiticity error and smallest eigenvalue."""
        sym = 0.5 * (self.matrix + self.matrix.conj().T)
        return {
            "trace_error": abs(self.trace - 1.0),
            "hermiticity_error": hermiticity_error(self.matrix),
            "min_eigenvalue": float(np.min(np.linalg.eigvalsh(sym))),
        }

    def population(self, ket: Ket) -> float:
        _check_same_layout(self.layout, ket.layout)
        amps = ket.amplitudes
        return float(np.real(np.vdot(amps, self.matrix @ amps)))


def _check_same_layout(a: HilbertLayout, b: HilbertLayout) -> None:
    if a != b:
        raise LayoutError(f"Layout mismatch: {a.labels} vs {b.labels}")


def tensor_product(factors: Sequence[Op] | Sequence[Ket]) -> Op | Ket:
    """Kronecker product with the leftmost factor slowest-varying."""
    if not factors:
        raise LayoutError("tensor_product needs at least one factor")
    layout = HilbertLayout(
        factors=tuple(f for item in factors for f in item.layout.factors)
    )
    if all(isinstance(item, Op) for item in factors):
        ops: list[Op] = [item for item in factors if isinstance(item, Op)]
        matrix = functools.reduce(np.kron, [op.matrix for op in ops])
        return Op(
            layout=layout,
            matrix=matrix,
            hermitian=all(op.hermitian for op in ops),
        )
    if all(isinstance(item, Ket) for item in factors):
        kets = [item for item in factors if isinstance(item, Ket)]
        amps = functools.reduce(np.kron, [ket.amplitudes for ket in kets])
        return Ket(layout=layout, amplitudes=amps)
    raise LayoutError("tensor_product factors must all be Op or all Ket")


@dataclass(frozen=True)
class Eigenspace:
    """One (possibly degenerate) eigenvalue with an orthonormal basis.

    ``vectors`` holds the basis as columns.
    """

    layout: HilbertLayout
    value: float
    vectors: np.ndarray = field(repr=False)

    @property
    def multiplicity(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def kets(self) -> tuple[Ket, ...]:
        return tuple(
            Ket(layout=self.layout, amplitudes=self.vectors[:, k])
            for k in range(self.multiplicity)
        )

    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T

    def remix(self, rng: np.random.Generator) -> Eigenspace:
        """Return the same eigenspace in a random orthonormal basis."""
        k = self.multiplicity
        z = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
        q, r = np.linalg.qr(z)
        q = q * (np.diag(r) / np.abs(np.diag(r)))
        return Eigenspace(
            layout=self.layout, value=self.value, vectors=self.vectors @ q
        )


def eig_hermitian(
    h: Op, degeneracy_tol: float = DEGENERACY_TOL
) -> list[Eigenspace]:
    """Diagonalize a Hermitian operator and group degenerate eigenvalues.

    Eigenvalues come back ascending.  Neighbouring eigenvalues closer than
    ``degeneracy_tol`` times the spectral range share one eigenspace.
    """
    if not h.hermitian:
        scale = max(1.0, _max_abs(h.matrix))
        if hermiticity_error(h.matrix) > HERMITIAN_TOL * scale:
            raise HermiticityError("eig_hermitian needs a Hermitian operator")
    values, vectors = scipy.linalg.eigh(h.matrix)
    spread = float(values[-1] - values[0]) if values.size else 0.0
    threshold = degeneracy_tol * spread
    groups: list[list[int]] = [[0]]
    for idx in range(1, len(values)):
        if values[idx] - values[idx - 1] <= threshold:
            groups[-1].append(idx)
        else:
            groups.append([idx])
    return [
        Eigenspace(
            layout=h.layout,
            value=float(np.mean(values[group])),
            vectors=vectors[:, group],
        )
        for group in groups
    ]


def propagator_step(h: Op, dt: float) -> Op:
    """Return ``exp(-i h dt)`` for a constant Hamiltonian."""
    return Op(layout=h.layout, matrix=scipy.linalg.expm(-1j * dt * h.matrix))


def state_fidelity(rho: DensityMatrix, psi: Ket) -> float:
    """Return ``<psi|rho|psi>`` clamped to [0, 1]."""
    _check_same_layout(rho.layout, psi.layout)
    value = np.vdot(psi.amplitudes, rho.matrix @ psi.amplitudes)
    if abs(value.imag) > FIDELITY_IMAG_TOL:
        raise HermiticityError(
            f"Fidelity has imaginary part {value.imag:.3e}; rho is not"
            " Hermitian"
        )
    return float(np.clip(value.real, 0.0, 1.0))


def partial_trace(rho: DensityMatrix, keep: Iterable[str]) -> DensityMatrix:
    """Trace out every factor whose label is not in ``keep``."""
    wanted = set(keep)
    if not wanted:
        raise LayoutError("partial_trace needs at least one factor to keep")
    for label in wanted:
        rho.layout.index_of(label)
    dims = rho.layout.dims
    kept = [i for i, label in enumerate(rho.layout.labels) if label in wanted]
    traced = [i for i in range(len(dims)) if i not in kept]
    n = len(dims)
    d_keep = int(np.prod([dims[i] for i in kept]))
    d_trace = int(np.prod([dims[i] for i in traced]))
    tensor = rho.matrix.reshape(dims + dims)
    order = kept + traced + [n + i for i in kept] + [n + i for i in traced]
    tensor = tensor.transpose(order).reshape(d_keep, d_trace, d_keep, d_trace)
    reduced = np.einsum("ijkj->ik", tensor)
    return DensityMatrix(layout=rho.layout.subset(wanted), matrix=reduced)


def sigma_plus() -> np.ndarray:
    """Raising operator ``|1><0|``."""
    return np.array([[0, 0], [1, 0]], dtype=complex)


def sigma_minus() -> np.ndarray:
    """Lowering operator ``|0><1|``."""
    return np.array([[0, 1], [0, 0]], dtype=complex)


def sigma_x() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=complex)


def sigma_y() -> np.ndarray:
    return np.array([[0, -1j], [1j, 0]], dtype=complex)


def sigma_z() -> np.ndarray:
    """``|0><0| - |1><1|``."""
    return np.array([[1, 0], [0, -1]], dtype=complex)


def annihilation(cutoff: int) -> np.ndarray:
    """Truncated cavity lowering operator on Fock states 0..cutoff."""
    return np.diag(np.sqrt(np.arange(1, cutoff + 1)), k=1).astype(complex)


def embed_local(
    local: np.ndarray, label: str, layout: HilbertLayout
) -> np.ndarray:
    """Place a single-factor operator at ``label``; identity elsewhere."""
    position = layout.index_of(label)
    if local.shape != (layout.dims[position],) * 2:
        raise LayoutError(
            f"Local operator of shape {local.shape} does not fit factor"
            f" '{label}'"
        )
    pieces = [
        local if i == position else np.eye(dim)
        for i, dim in enumerate(layout.dims)
    ]
    return functools.reduce(np.kron, pieces)


def _excitation_counts(layout: HilbertLayout) -> np.ndarray:
    grids = np.indices(layout.dims).reshape(len(layout.dims), -1)
    return grids.sum(axis=0)


def excitation_number(layout: HilbertLayout) -> np.ndarray:
    """Diagonal total excitation number (qubit 1-states plus photons)."""
    return np.diag(_excitation_counts(layout)).astype(complex)


def excitation_subspace(
    layout: HilbertLayout, max_excitations: int
) -> np.ndarray:
    """Return an isometry onto product states with few excitations.

    Columns are the basis states whose total excitation number is at most
    ``max_excitations``, in increasing flat-index order.
    """
    counts = _excitation_counts(layout)
    (selected,) = np.nonzero(counts <= max_excitations)
    isometry = np.zeros((layout.total_dim, selected.size))
    isometry[selected, np.arange(selected.size)] = 1.0
    return isometry
