"""Dense operator kernels, Bloch utilities and the SME superoperators.

Operators are plain complex ``numpy`` arrays of shape ``(d, d)``.  Density
matrices travel inside :class:`DensityState`, which carries the bookkeeping
needed by the unnormalized (likelihood) evolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

Ordering = Literal["paper_FFdag", "standard_FdagF"]

ORDERINGS = ("paper_FFdag", "standard_FdagF")

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8
BLOCH_TOL = 1e-9


class InvalidStateError(ValueError):
    """Raised when a matrix cannot represent a (possibly unnormalized) state."""


class DimensionError(ValueError):
    pass


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli(axis: str) -> np.ndarray:
    """Return a fresh copy of the 2x2 Pauli matrix for ``axis`` in {x, y, z}."""
    try:
        return _PAULI[axis].copy()
    except KeyError:
        raise ValueError(f"unknown Pauli axis {axis!r}; expected 'x', 'y' or 'z'") from None


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dagger(a))


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= tol)


def build_hamiltonian(omega: float, delta: float) -> np.ndarray:
    """Qubit Hamiltonian ``(omega/2) sx + (delta/2) sz`` in units of gamma."""
    if not (math.isfinite(omega) and math.isfinite(delta)):
        raise ValueError(f"Hamiltonian parameters must be finite, got omega={omega}, delta={delta}")
    return 0.5 * omega * _PAULI["x"] + 0.5 * delta * _PAULI["z"]


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def norm(self) -> float:
        return math.sqrt(self.x**2 + self.y**2 + self.z**2)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True, eq=False)
class DensityState:
    """A density matrix, normalized or carrying an accumulated log-trace.

    For unnormalized evolution ``op`` is kept at unit trace and the true trace
    of the linear-SME state is ``exp(log_trace)``.
    """

    op: np.ndarray
    normalized: bool = True
    log_trace: float = 0.0

    def __post_init__(self):
        op = np.asarray(self.op, dtype=complex)
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise DimensionError(f"density matrix must be square, got shape {op.shape}")
        object.__setattr__(self, "op", op)

    @property
    def dim(self) -> int:
        return self.op.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.op).real)

    def check(self) -> None:
        """Raise :class:`InvalidStateError` if any state invariant is violated."""
        if not is_hermitian(self.op):
            raise InvalidStateError("density matrix is not Hermitian")
        if self.normalized and abs(self.trace() - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"normalized state has trace {self.trace()!r}")
        lam = np.linalg.eigvalsh(self.op).min()
        if lam < -POSITIVITY_TOL:
            raise InvalidStateError(f"density matrix has negative eigenvalue {lam:.3e}")


def bloch_to_density(b: BlochVector) -> DensityState:
    if b.norm() > 1.0 + BLOCH_TOL:
        raise InvalidStateError(f"Bloch vector {b.as_tuple()} lies outside the unit ball")
    op = 0.5 * (np.eye(2, dtype=complex) + b.x * _PAULI["x"] + b.y * _PAULI["y"] + b.z * _PAULI["z"])
    return DensityState(op)


def density_to_bloch(rho: DensityState | np.ndarray) -> BlochVector:
    op = rho.op if isinstance(rho, DensityState) else np.asarray(rho)
    if op.shape != (2, 2):
        raise DimensionError(f"Bloch coordinates need a 2x2 state, got {op.shape}")
    # Tr(rho s_k) written out to avoid three matrix products
    return BlochVector(
        x=float(2.0 * op[0, 1].real),
        y=float(-2.0 * op[0, 1].imag),
        z=float((op[0, 0] - op[1, 1]).real),
    )


def bloch_components(ops: np.ndarray) -> np.ndarray:
    """Vectorized Bloch coordinates for a stack of 2x2 matrices, shape (..., 3)."""
    ops = np.asarray(ops)
    return np.stack(
        [2.0 * ops[..., 0, 1].real, -2.0 * ops[..., 0, 1].imag, (ops[..., 0, 0] - ops[..., 1, 1]).real],
        axis=-1,
    )


def _unwrap(rho) -> np.ndarray:
    return rho.op if isinstance(rho, DensityState) else np.asarray(rho, dtype=complex)


def _check_dims(F: np.ndarray, rho: np.ndarray) -> None:
    if F.shape != rho.shape:
        raise DimensionError(f"operator shape {F.shape} does not match state shape {rho.shape}")


def dissipator(F: np.ndarray, rho, ordering: Ordering = "paper_FFdag") -> np.ndarray:
    """Lindblad dissipator ``F rho F^+ - {K, rho}/2``.

    ``K`` is ``F F^+`` for ``paper_FFdag`` and ``F^+ F`` for ``standard_FdagF``;
    the two coincide for Hermitian ``F``.
    """
    r = _unwrap(rho)
    F = np.asarray(F, dtype=complex)
    _check_dims(F, r)
    Fd = dagger(F)
    if ordering == "paper_FFdag":
        K = F @ Fd
    elif ordering == "standard_FdagF":
        K = Fd @ F
    else:
        raise ValueError(f"unknown ordering {ordering!r}")
    return F @ r @ Fd - 0.5 * (K @ r + r @ K)


def msuperop(F: np.ndarray, rho) -> tuple[np.ndarray, float]:
    """Return ``(F rho + rho F^+, Tr(F rho + rho F^+))``."""
    r = _unwrap(rho)
    F = np.asarray(F, dtype=complex)
    _check_dims(F, r)
    m = F @ r + r @ dagger(F)
    return m, float(np.trace(m).real)


def innovation(F: np.ndarray, rho) -> np.ndarray:
    """Trace-free back-action term ``M[F]rho - Tr(M[F]rho) rho``."""
    if isinstance(rho, DensityState) and not rho.normalized:
        raise InvalidStateError("innovation is defined for normalized states only")
    r = _unwrap(rho)
    m, tr = msuperop(F, r)
    return m - tr * r


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


class Spectrum(NamedTuple):
    min_eig: float
    max_eig: float


def spectrum(op: np.ndarray) -> Spectrum:
    w = np.linalg.eigvalsh(hermitize(op))
    return Spectrum(float(w[0]), float(w[-1]))
