"""One- and two-qubit density matrices, trace distance and concurrence.

Basis convention: index 0 is |H>, index 1 is |V>. Two-qubit matrices use
the ordering |HH>, |HV>, |VH>, |VV>. On the Bloch sphere z = +1 is |H> and
x = +1 is |+> = (|H> + |V>)/sqrt(2).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .errors import InvalidStateError

TOL = 1e-12

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SX, SY, SZ)
SYSY = np.kron(SY, SY)


def check_density_matrix(matrix: np.ndarray, dim: int, atol: float = TOL) -> None:
    """Raise InvalidStateError unless `matrix` is a dim x dim density matrix."""
    if matrix.shape != (dim, dim):
        raise InvalidStateError(f"expected a {dim}x{dim} matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidStateError("matrix has non-finite entries")
    herm = np.max(np.abs(matrix - matrix.conj().T))
    if herm > atol:
        raise InvalidStateError(f"matrix is not Hermitian (deviation {herm:.3g})")
    tr = np.trace(matrix).real
    if abs(tr - 1.0) > atol:
        raise InvalidStateError(f"trace is {tr!r}, expected 1")
    lowest = np.linalg.eigvalsh(matrix)[0]
    if lowest < -atol:
        raise InvalidStateError(f"matrix has negative eigenvalue {lowest:.3g}")


class _DensityMatrix:
    DIM: ClassVar[int]
    matrix: np.ndarray

    def _validate(self, atol: float) -> None:
        m = np.array(self.matrix, dtype=complex)
        check_density_matrix(m, self.DIM, atol)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_ket(cls, ket):
        psi = np.asarray(ket, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    def to_record(self) -> list[float]:
        """Real and imaginary parts of every entry, row-major."""
        flat = self.matrix.ravel()
        return [float(v) for pair in zip(flat.real, flat.imag) for v in pair]

    @classmethod
    def from_record(cls, record, atol: float = TOL):
        vals = np.asarray(record, dtype=float)
        if vals.size != 2 * cls.DIM**2:
            raise InvalidStateError(f"expected {2 * cls.DIM**2} numbers, got {vals.size}")
        m = (vals[0::2] + 1j * vals[1::2]).reshape(cls.DIM, cls.DIM)
        return cls(m, atol=atol)

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def from_json(cls, text: str, atol: float = TOL):
        return cls.from_record(json.loads(text), atol=atol)

    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash((type(self).__name__, self.matrix.tobytes()))


@dataclass(frozen=True, eq=False)
class QubitState(_DensityMatrix):
    """Polarization state of one photon.

    `atol` is the slack used when checking the invariants; raise it for
    states coming out of noisy reconstruction.
    """

    DIM: ClassVar[int] = 2
    matrix: np.ndarray
    atol: float = TOL

    def __post_init__(self):
        self._validate(self.atol)

    @property
    def populations(self) -> tuple[float, float]:
        return float(self.matrix[0, 0].real), float(self.matrix[1, 1].real)

    @property
    def coherence(self) -> complex:
        """The |H><V| coefficient."""
        return complex(self.matrix[0, 1])


@dataclass(frozen=True, eq=False)
class TwoQubitState(_DensityMatrix):
    """Joint state of system and ancilla photons."""

    DIM: ClassVar[int] = 4
    matrix: np.ndarray
    atol: float = TOL

    def __post_init__(self):
        self._validate(self.atol)


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(np.isfinite((self.x, self.y, self.z))):
            raise InvalidStateError("Bloch vector has non-finite components")
        if self.norm > 1.0 + TOL:
            raise InvalidStateError(f"Bloch vector length {self.norm!r} exceeds 1")

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.x**2 + self.y**2 + self.z**2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_angles(cls, polar: float, azimuth: float) -> "BlochVector":
        return cls(
            float(np.sin(polar) * np.cos(azimuth)),
            float(np.sin(polar) * np.sin(azimuth)),
            float(np.cos(polar)),
        )


def bloch_matrix(vectors: np.ndarray) -> np.ndarray:
    """Density matrices 1/2 (I + r.sigma) for an array of Bloch vectors (..., 3)."""
    r = np.asarray(vectors, dtype=float)
    out = np.empty(r.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = 0.5 * (1 + r[..., 2])
    out[..., 1, 1] = 0.5 * (1 - r[..., 2])
    out[..., 0, 1] = 0.5 * (r[..., 0] - 1j * r[..., 1])
    out[..., 1, 0] = 0.5 * (r[..., 0] + 1j * r[..., 1])
    return out


def bloch_to_state(v: BlochVector) -> QubitState:
    return QubitState(bloch_matrix(v.as_array()))


def state_to_bloch(rho: QubitState) -> BlochVector:
    m = rho.matrix
    # clamp rounding that pushes pure states a hair outside the ball
    r = np.array([2 * m[0, 1].real, -2 * m[0, 1].imag, (m[0, 0] - m[1, 1]).real])
    n = np.linalg.norm(r)
    if n > 1.0:
        r = r / n
    return BlochVector(*map(float, r))


def trace_distance_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Half the trace norm of a - b for stacks of Hermitian matrices."""
    w = np.linalg.eigvalsh(np.asarray(a) - np.asarray(b))
    return 0.5 * np.abs(w).sum(axis=-1)


def trace_distance(rho1, rho2) -> float:
    """D(rho1, rho2) = 1/2 tr|rho1 - rho2|."""
    for r in (rho1, rho2):
        if not isinstance(r, _DensityMatrix):
            raise TypeError(f"expected a validated state, got {type(r).__name__}")
    if rho1.DIM != rho2.DIM:
        raise InvalidStateError("states live in different dimensions")
    return float(trace_distance_array(rho1.matrix, rho2.matrix))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    # eigenvalues at rounding level are zeros; their sqrt would inject ~1e-8 noise
    floor = 8 * np.finfo(float).eps * np.max(np.abs(w), axis=-1, keepdims=True)
    w = np.where(w > floor, w, 0.0)
    return (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def concurrence_array(rho: np.ndarray) -> np.ndarray:
    """Wootters concurrence for a stack of 4x4 density matrices.

    The lambdas are taken as singular values of sqrt(rho) Y sqrt(rho)*, with
    Y = sigma_y x sigma_y. That matrix M satisfies M M^dag = sqrt(rho) rho~ sqrt(rho),
    so this is the textbook spectrum of rho rho~ without square-rooting
    eigenvalues that sit at rounding level.
    """
    s = _psd_sqrt(np.asarray(rho, dtype=complex))
    lam = np.linalg.svd(s @ SYSY @ s.conj(), compute_uv=False)
    c = lam[..., 0] - lam[..., 1] - lam[..., 2] - lam[..., 3]
    return np.clip(c, 0.0, 1.0)


def concurrence(rho: TwoQubitState) -> float:
    if not isinstance(rho, TwoQubitState):
        raise TypeError(f"concurrence needs a TwoQubitState, got {type(rho).__name__}")
    return float(concurrence_array(rho.matrix))


def bell_state() -> TwoQubitState:
    """(|HH> + |VV>)/sqrt(2)."""
    return TwoQubitState.from_ket([1, 0, 0, 1])
