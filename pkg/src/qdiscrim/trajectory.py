"""Euler-Maruyama integration of the conditioned qubit dynamics.

Three evolutions share one set of compiled kernels:

* the normalized SME driven by Wiener increments (truth simulation),
* the same equation driven by a record's innovations (likelihood filter),
* the linear SME whose trace is the record likelihood (oracle).

Time is measured in units of 1/gamma and frequencies in units of gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from . import _kernels as K
from .qmath import (
    ORDERINGS,
    DensityState,
    DimensionError,
    InvalidStateError,
    build_hamiltonian,
    dagger,
    is_hermitian,
    pauli,
)

LoglikMode = Literal["ito_corrected", "paper_literal"]
DissipatorScaling = Literal["eta_scaled", "unit"]

LOGLIK_MODES = ("ito_corrected", "paper_literal")
DISSIPATOR_SCALINGS = ("eta_scaled", "unit")


class IntegrationError(RuntimeError):
    """An SME step produced an unusable state."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (at step {step})")
        self.step = step


class DivergedError(IntegrationError):
    pass


class StepSizeError(IntegrationError):
    pass


@dataclass(frozen=True, eq=False)
class ModelSpec:
    hamiltonian: np.ndarray
    F: np.ndarray
    eta: float
    dissipator_scaling: DissipatorScaling = "eta_scaled"
    ordering: str = "paper_FFdag"

    def __post_init__(self):
        H = np.asarray(self.hamiltonian, dtype=complex)
        F = np.asarray(self.F, dtype=complex)
        object.__setattr__(self, "hamiltonian", H)
        object.__setattr__(self, "F", F)
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if H.shape != F.shape or H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise DimensionError(f"Hamiltonian {H.shape} and measurement operator {F.shape} must be equal square shapes")
        if not is_hermitian(H):
            raise ValueError("Hamiltonian must be Hermitian")
        if self.dissipator_scaling not in DISSIPATOR_SCALINGS:
            raise ValueError(f"unknown dissipator_scaling {self.dissipator_scaling!r}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}")

    @classmethod
    def qubit(cls, omega, delta, kappa=1.0, eta=0.5, dissipator_scaling="eta_scaled", ordering="paper_FFdag"):
        """Driven qubit measured along z: ``H = omega/2 sx + delta/2 sz``, ``F = sqrt(kappa) sz``."""
        if kappa < 0:
            raise ValueError(f"kappa must be non-negative, got {kappa}")
        return cls(build_hamiltonian(omega, delta), math.sqrt(kappa) * pauli("z"), eta, dissipator_scaling, ordering)

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    @property
    def dissipator_weight(self) -> float:
        return self.eta if self.dissipator_scaling == "eta_scaled" else 1.0

    @cached_property
    def _superops(self):
        Fd = dagger(self.F)
        anti = self.F @ Fd if self.ordering == "paper_FFdag" else Fd @ self.F
        return K.superoperators(self.hamiltonian, self.F, anti, float(self.dissipator_weight))

    def kernel_args(self):
        """(drift superoperator, measurement superoperator, dim, sqrt(eta)) for the compiled loops."""
        lsup, msup = self._superops
        return lsup, msup, self.dim, math.sqrt(self.eta)

    def repair_limit(self, dt: float) -> float:
        """Most negative eigenvalue the positivity guard will still project away.

        A pure state overshoots the PSD cone by about eta*|F|^2*(dW^2 - dt) per
        Euler step, so the limit scales with dt; 50*dt is a ~7 sigma increment.
        """
        fnorm2 = float(np.linalg.norm(self.F, 2) ** 2)
        return max(1e-3, 50.0 * self.eta * fnorm2 * dt)


@dataclass(frozen=True)
class SimGrid:
    dt: float
    t_max: float

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if self.dt > self.t_max:
            raise ValueError(f"dt={self.dt} exceeds t_max={self.t_max}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        i = int(round(t / self.dt))
        if not 0 <= i <= self.n_steps:
            raise ValueError(f"time {t} lies outside the grid [0, {self.t_max}]")
        return i


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Record increments ``dY[i]`` over ``[t_i, t_i + dt)``.

    ``dt`` and ``dY`` fully describe the record; an empty record is allowed
    and means no data yet.
    """

    dt: float
    dY: np.ndarray

    def __post_init__(self):
        dY = np.ascontiguousarray(self.dY, dtype=float)
        if dY.ndim != 1:
            raise ValueError("record increments must be one-dimensional")
        if not np.all(np.isfinite(dY)):
            raise ValueError("record contains non-finite increments")
        object.__setattr__(self, "dY", dY)

    @property
    def n_steps(self) -> int:
        return self.dY.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def coarsen(self, factor: int) -> "MeasurementRecord":
        """Same signal on a grid ``factor`` times coarser (increments summed)."""
        n = self.n_steps // factor
        return MeasurementRecord(self.dt * factor, self.dY[: n * factor].reshape(n, factor).sum(axis=1))


@dataclass(frozen=True, eq=False)
class FilterPath:
    states: np.ndarray
    loglik: np.ndarray
    mode: str
    repairs: int = 0

    def state(self, i: int) -> DensityState:
        return DensityState(self.states[i])

    @property
    def final_state(self) -> DensityState:
        return self.state(-1)


@dataclass(frozen=True, eq=False)
class TruthPath:
    """Trajectory of the simulated system; ``states[i]`` is the state at grid point i."""

    states: np.ndarray
    repairs: int = 0
    dW: np.ndarray = field(default=None, repr=False)


def _require_normalized(rho: DensityState, what: str) -> None:
    if not rho.normalized:
        raise InvalidStateError(f"{what} requires a normalized state")
    if abs(rho.trace() - 1.0) > 1e-9:
        raise InvalidStateError(f"{what} requires unit trace, got {rho.trace()!r}")


def _raise_status(status: int, step: int, dt: float) -> None:
    if status == K.DIVERGED:
        raise DivergedError("state left the positive cone beyond repair; reduce dt", step)
    if status == K.BAD_TRACE:
        raise StepSizeError(f"trace became non-positive; dt={dt} is too large", step)
    if status == K.NONFINITE:
        raise IntegrationError("non-finite noise or record increment", step)


def _flat(op: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(op, dtype=complex).reshape(-1).copy()


def step_normalized(rho: DensityState, model: ModelSpec, dt: float, dW: float) -> DensityState:
    """Advance a normalized state by one Euler-Maruyama step with Wiener increment ``dW``."""
    _require_normalized(rho, "step_normalized")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not math.isfinite(dW):
        raise IntegrationError(f"non-finite Wiener increment {dW!r}")
    lsup, msup, d, sqeta = model.kernel_args()
    r = _flat(rho.op)
    out = np.empty_like(r)
    mr = np.empty_like(r)
    lr = np.empty_like(r)
    m = K.measure(r, msup, d, mr)
    _, status = K.step_norm(r, out, lsup, d, sqeta, dt, dW, model.repair_limit(dt), mr, m, lr)
    _raise_status(status, 0, dt)
    return DensityState(out.reshape(d, d))


def step_unnormalized(rho_tilde: DensityState, model: ModelSpec, dt: float, dY: float) -> DensityState:
    """Advance the linear SME by one step.

    The returned operator has unit trace; the accumulated trace of the linear
    evolution lives in ``log_trace``.
    """
    tr = rho_tilde.trace()
    if not tr > 0:
        raise InvalidStateError(f"unnormalized state needs positive trace, got {tr!r}")
    if not math.isfinite(dY):
        raise IntegrationError(f"non-finite record increment {dY!r}")
    lsup, msup, d, sqeta = model.kernel_args()
    r = _flat(rho_tilde.op) / tr
    out = np.empty_like(r)
    dl, _, status = K.step_unnorm(
        r, out, lsup, msup, d, sqeta, dt, dY, model.repair_limit(dt), np.empty_like(r), np.empty_like(r)
    )
    _raise_status(status, 0, dt)
    return DensityState(out.reshape(d, d), normalized=False, log_trace=rho_tilde.log_trace + math.log(tr) + dl)


def _noise(noise, n: int, dt: float) -> np.ndarray:
    if noise is None:
        return np.zeros(n)
    if isinstance(noise, np.random.Generator):
        return noise.standard_normal(n) * math.sqrt(dt)
    dW = np.ascontiguousarray(noise, dtype=float)
    if dW.shape != (n,):
        raise ValueError(f"expected {n} Wiener increments, got shape {dW.shape}")
    return dW


def _state_buffer(rho0: DensityState, rows: int) -> np.ndarray:
    buf = np.empty((rows, rho0.dim * rho0.dim), dtype=complex)
    buf[0] = rho0.op.reshape(-1)
    return buf


def simulate_record(model: ModelSpec, rho0: DensityState, grid: SimGrid, noise=None):
    """Simulate the measured system and the signal it emits.

    ``noise`` is a ``numpy.random.Generator``, an explicit array of Wiener
    increments, or ``None`` for the noiseless test hook.  Returns
    ``(TruthPath, MeasurementRecord)``.
    """
    _require_normalized(rho0, "simulate_record")
    n = grid.n_steps
    dW = _noise(noise, n, grid.dt)
    lsup, msup, d, sqeta = model.kernel_args()
    states = _state_buffer(rho0, n + 1)
    dY = np.empty(n)
    repairs, status, step = K.simulate_loop(dW, states, lsup, msup, d, sqeta, grid.dt, model.repair_limit(grid.dt), dY)
    _raise_status(status, step, grid.dt)
    return TruthPath(states.reshape(n + 1, d, d), repairs, dW), MeasurementRecord(grid.dt, dY)


def filter_record(
    record: MeasurementRecord,
    model: ModelSpec,
    rho0: DensityState,
    mode: LoglikMode = "ito_corrected",
    grid: SimGrid | None = None,
) -> FilterPath:
    """Run the normalized filter of ``model`` along ``record`` and accumulate its log-likelihood.

    The filter rebuilds its own innovations from the record, so it never sees
    the truth's noise.
    """
    if mode not in LOGLIK_MODES:
        raise ValueError(f"unknown loglik mode {mode!r}")
    _require_normalized(rho0, "filter_record")
    if grid is not None and (grid.n_steps != record.n_steps or not math.isclose(grid.dt, record.dt)):
        raise ValueError(
            f"record grid (n={record.n_steps}, dt={record.dt}) does not match requested grid "
            f"(n={grid.n_steps}, dt={grid.dt})"
        )
    n = record.n_steps
    lsup, msup, d, sqeta = model.kernel_args()
    states = _state_buffer(rho0, n + 1)
    loglik = np.empty(n + 1)
    repairs, status, step = K.filter_loop(
        record.dY, states, lsup, msup, d, sqeta, record.dt, model.repair_limit(record.dt), mode == "ito_corrected", loglik
    )
    _raise_status(status, step, record.dt)
    return FilterPath(states.reshape(n + 1, d, d), loglik, mode, repairs)


def trace_likelihood(record: MeasurementRecord, model: ModelSpec, rho0: DensityState) -> np.ndarray:
    """Log-likelihood oracle: ``log Tr(rho~_t)`` of the linear SME at every grid point."""
    _require_normalized(rho0, "trace_likelihood")
    n = record.n_steps
    lsup, msup, d, sqeta = model.kernel_args()
    logtr = np.empty(n + 1)
    _, status, step = K.trace_loop(
        record.dY, _state_buffer(rho0, 2), lsup, msup, d, sqeta, record.dt, model.repair_limit(record.dt), logtr
    )
    _raise_status(status, step, record.dt)
    return logtr
