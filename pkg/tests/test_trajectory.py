import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdiscrim.qmath import BlochVector, DensityState, InvalidStateError, bloch_to_density, density_to_bloch, pauli
from qdiscrim.trajectory import (
    DivergedError,
    IntegrationError,
    MeasurementRecord,
    ModelSpec,
    SimGrid,
    filter_record,
    simulate_record,
    step_normalized,
    step_unnormalized,
    trace_likelihood,
)

from conftest import DELTA, ETA, OMEGA0, random_state

SZ = pauli("z")
DARK = bloch_to_density(BlochVector(0, 0, 1))
MIXED = bloch_to_density(BlochVector(0, 0, 0))
MEASURE_ONLY = ModelSpec.qubit(0.0, 0.0, kappa=1.0, eta=0.5)

# Bloch z after one normalized step from I/2 with dW=0.01 (second implementation below)
Z_AFTER_ONE_STEP = 0.0141421


def _brute_step(rho, H, F, eta, s, dt, dW):
    """Term-by-term Euler step written with explicit index loops."""
    d = len(rho)
    Fd = [[F[j][i].conjugate() for j in range(d)] for i in range(d)]

    def mul(A, B):
        return [[sum(A[i][k] * B[k][j] for k in range(d)) for j in range(d)] for i in range(d)]

    Hr, rH = mul(H, rho), mul(rho, H)
    Fr, rFd = mul(F, rho), mul(rho, Fd)
    FrFd = mul(Fr, Fd)
    FFd = mul(F, Fd)
    anti = [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(mul(FFd, rho), mul(rho, FFd))]
    tr = sum(Fr[i][i] + rFd[i][i] for i in range(d)).real
    out = np.empty((d, d), dtype=complex)
    for i in range(d):
        for j in range(d):
            drift = -1j * (Hr[i][j] - rH[i][j]) + s * (FrFd[i][j] - 0.5 * anti[i][j])
            noise = Fr[i][j] + rFd[i][j] - tr * rho[i][j]
            out[i, j] = rho[i][j] + drift * dt + math.sqrt(eta) * noise * dW
    return out


class TestModelSpec:
    def test_qubit_operators(self):
        m = ModelSpec.qubit(2.0, 1.43, kappa=4.0)
        assert np.allclose(m.hamiltonian, 0.5 * (2.0 * pauli("x") + 1.43 * SZ))
        assert np.allclose(m.F, 2 * SZ)
        assert m.dim == 2

    @pytest.mark.parametrize("eta", [0.0, -0.1, 1.5])
    def test_eta_range(self, eta):
        with pytest.raises(ValueError):
            ModelSpec.qubit(1, 1, eta=eta)

    def test_unit_efficiency_allowed(self):
        ModelSpec.qubit(1, 1, eta=1.0)

    def test_non_hermitian_hamiltonian(self):
        with pytest.raises(ValueError):
            ModelSpec(np.array([[0, 1], [0, 0]]), SZ, 0.5)

    def test_dissipator_weight(self):
        assert ModelSpec.qubit(1, 1, eta=0.3).dissipator_weight == 0.3
        assert ModelSpec.qubit(1, 1, eta=0.3, dissipator_scaling="unit").dissipator_weight == 1.0

    def test_unknown_flags(self):
        with pytest.raises(ValueError):
            ModelSpec.qubit(1, 1, dissipator_scaling="half")
        with pytest.raises(ValueError):
            ModelSpec.qubit(1, 1, ordering="reversed")


class TestGrid:
    def test_counts(self):
        g = SimGrid(1e-3, 30.0)
        assert g.n_steps == 30000
        assert g.times[-1] == pytest.approx(30.0)
        assert g.index_of(5.0) == 5000

    def test_bad(self):
        with pytest.raises(ValueError):
            SimGrid(0.0, 1.0)
        with pytest.raises(ValueError):
            SimGrid(2.0, 1.0)

    def test_coarsen_sums(self):
        rec = MeasurementRecord(0.1, np.arange(6.0))
        c = rec.coarsen(2)
        assert c.dt == pytest.approx(0.2)
        assert np.array_equal(c.dY, [1.0, 5.0, 9.0])

    def test_record_rejects_nan(self):
        with pytest.raises(ValueError):
            MeasurementRecord(0.1, [0.0, math.nan])


class TestStepNormalized:
    @pytest.mark.parametrize("dW", [-0.3, 0.0, 0.02, 1.0])
    def test_dark_state_fixed_point(self, dW):
        out = step_normalized(DARK, MEASURE_ONLY, 1e-3, dW)
        assert np.allclose(out.op, DARK.op, atol=1e-12, rtol=0)

    def test_mixed_state_without_noise(self):
        out = step_normalized(MIXED, MEASURE_ONLY, 1e-3, 0.0)
        assert np.allclose(out.op, MIXED.op, atol=1e-15, rtol=0)

    def test_one_step_z(self):
        out = step_normalized(MIXED, MEASURE_ONLY, 1e-3, 0.01)
        brute = _brute_step(MIXED.op.tolist(), np.zeros((2, 2)).tolist(), SZ.astype(complex).tolist(), 0.5, 0.5, 1e-3, 0.01)
        z_brute = (brute[0, 0] - brute[1, 1]).real
        assert z_brute == pytest.approx(Z_AFTER_ONE_STEP, abs=1e-7)
        assert density_to_bloch(out).z == pytest.approx(Z_AFTER_ONE_STEP, abs=1e-7)

    @given(st.integers(0, 2**32 - 1), st.sampled_from(["eta_scaled", "unit"]))
    @settings(max_examples=60)
    def test_matches_brute_force(self, seed, scaling):
        rng = np.random.default_rng(seed)
        m = ModelSpec.qubit(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2), rng.uniform(0.05, 1), scaling)
        rho = random_state(rng)
        dt, dW = 1e-3, rng.normal() * math.sqrt(1e-3)
        ref = _brute_step(rho.tolist(), m.hamiltonian.tolist(), m.F.tolist(), m.eta, m.dissipator_weight, dt, dW)
        ref = 0.5 * (ref + ref.conj().T)
        ref /= np.trace(ref).real
        if np.linalg.eigvalsh(ref).min() < 0:
            return  # guarded branch, covered elsewhere
        out = step_normalized(DensityState(rho), m, dt, dW)
        assert np.abs(out.op - ref).max() <= 1e-12

    def test_output_is_a_state(self):
        rng = np.random.default_rng(5)
        out = step_normalized(DensityState(random_state(rng)), ModelSpec.qubit(1, 1.43), 1e-3, 0.05)
        out.check()

    def test_overshoot_is_repaired(self):
        # a pure state off the measurement axis with a large kick leaves the cone slightly
        plus = bloch_to_density(BlochVector(1, 0, 0))
        m = ModelSpec.qubit(0, 0)
        out = step_normalized(plus, m, 1e-3, 0.1)
        assert np.linalg.eigvalsh(out.op).min() >= -1e-12
        assert np.trace(out.op).real == pytest.approx(1.0, abs=1e-12)

    def test_unrepairable_step_diverges(self):
        plus = bloch_to_density(BlochVector(1, 0, 0))
        with pytest.raises(DivergedError):
            step_normalized(plus, ModelSpec.qubit(0, 0), 1e-3, 1.0)

    def test_non_finite_dW(self):
        with pytest.raises(IntegrationError):
            step_normalized(MIXED, MEASURE_ONLY, 1e-3, math.inf)

    def test_rejects_unnormalized(self):
        with pytest.raises(InvalidStateError):
            step_normalized(DensityState(np.eye(2)), MEASURE_ONLY, 1e-3, 0.0)


class TestStepUnnormalized:
    def test_dark_state_unchanged(self):
        out = step_unnormalized(DensityState(DARK.op, normalized=False), MEASURE_ONLY, 1e-3, 0.0)
        assert np.allclose(out.op, DARK.op, atol=1e-12, rtol=0)
        assert out.log_trace == pytest.approx(0.0, abs=1e-15)

    @given(st.integers(0, 2**32 - 1), st.floats(-0.2, 0.2))
    @settings(max_examples=50)
    def test_trace_factor(self, seed, dY):
        rng = np.random.default_rng(seed)
        rho = random_state(rng)
        m = ModelSpec.qubit(1.0, DELTA, 1.0, ETA)
        signal = np.trace(m.F @ rho + rho @ m.F.conj().T).real
        factor = 1 + math.sqrt(ETA) * signal * dY
        if factor <= 0:
            return
        out = step_unnormalized(DensityState(rho, normalized=False), m, 1e-3, dY)
        assert out.log_trace == pytest.approx(math.log(factor), abs=1e-12)
        assert np.trace(out.op).real == pytest.approx(1.0, abs=1e-12)

    def test_accumulates_log_trace(self):
        rho = DensityState(2.0 * DARK.op, normalized=False, log_trace=1.5)
        out = step_unnormalized(rho, MEASURE_ONLY, 1e-3, 0.0)
        assert out.log_trace == pytest.approx(1.5 + math.log(2.0), abs=1e-14)

    def test_non_positive_trace(self):
        with pytest.raises(InvalidStateError):
            step_unnormalized(DensityState(np.zeros((2, 2)), normalized=False), MEASURE_ONLY, 1e-3, 0.0)


class TestSimulate:
    def test_zero_noise_signal(self):
        _, rec = simulate_record(MEASURE_ONLY, DARK, SimGrid(1e-3, 0.5), None)
        assert rec.n_steps == 500
        assert np.allclose(rec.dY, math.sqrt(2) * 1e-3, rtol=0, atol=1e-15)

    def test_signal_mean_at_mixed_state(self):
        n = 10_000
        rng = np.random.default_rng(99)
        grid = SimGrid(1e-3, 1e-3)
        ys = np.array([simulate_record(MEASURE_ONLY, MIXED, grid, rng)[1].dY[0] for _ in range(n)]) / grid.dt
        assert abs(ys.mean()) <= 3 * ys.std(ddof=1) / math.sqrt(n)

    def test_deterministic(self):
        m = ModelSpec.qubit(OMEGA0, DELTA)
        grid = SimGrid(1e-3, 2.0)
        a = simulate_record(m, DARK, grid, np.random.default_rng(3))
        b = simulate_record(m, DARK, grid, np.random.default_rng(3))
        assert np.array_equal(a[1].dY, b[1].dY)
        assert np.array_equal(a[0].states, b[0].states)

    def test_record_is_signal_plus_noise(self):
        m = ModelSpec.qubit(OMEGA0, DELTA)
        path, rec = simulate_record(m, DARK, SimGrid(1e-3, 1.0), np.random.default_rng(4))
        z = np.trace(path.states[:-1] @ SZ, axis1=1, axis2=2).real
        expect = math.sqrt(m.eta) * 2 * z * 1e-3 + path.dW
        assert np.allclose(rec.dY, expect, atol=1e-14, rtol=0)

    def test_states_stay_physical(self):
        path, _ = simulate_record(ModelSpec.qubit(OMEGA0, DELTA), DARK, SimGrid(1e-3, 5.0), np.random.default_rng(8))
        s = path.states
        assert np.abs(s - np.conj(np.swapaxes(s, 1, 2))).max() <= 1e-12
        assert np.abs(np.trace(s, axis1=1, axis2=2) - 1).max() <= 1e-9
        assert np.linalg.eigvalsh(s).min() >= -1e-8

    def test_explicit_noise_shape(self):
        with pytest.raises(ValueError):
            simulate_record(MEASURE_ONLY, DARK, SimGrid(1e-3, 0.01), np.zeros(3))

    def test_explicit_noise_matches_generator(self):
        grid = SimGrid(1e-3, 0.2)
        m = ModelSpec.qubit(OMEGA0, DELTA)
        dW = np.random.default_rng(1).standard_normal(grid.n_steps) * math.sqrt(grid.dt)
        a = simulate_record(m, DARK, grid, dW)[1].dY
        b = simulate_record(m, DARK, grid, np.random.default_rng(1))[1].dY
        assert np.array_equal(a, b)


class TestFilter:
    def test_closed_form_loglik(self):
        grid = SimGrid(1e-3, 2.0)
        _, rec = simulate_record(MEASURE_ONLY, DARK, grid, None)
        fp = filter_record(rec, MEASURE_ONLY, DARK)
        # dl = 1/2 eta m^2 dt with m = 2 sqrt(kappa) = 2
        expect = 0.5 * 0.5 * 4.0 * grid.times
        assert np.allclose(fp.loglik, expect, rtol=1e-12, atol=1e-15)
        steps = np.cumsum(np.full(grid.n_steps, 0.5 * 0.5 * 4.0 * grid.dt))
        assert np.allclose(fp.loglik[1:], steps, rtol=1e-12)

    def test_paper_literal_drops_correction(self):
        _, rec = simulate_record(MEASURE_ONLY, DARK, SimGrid(1e-3, 1.0), None)
        fp = filter_record(rec, MEASURE_ONLY, DARK, mode="paper_literal")
        assert fp.loglik[-1] == pytest.approx(0.5 * 4.0 * 1.0, rel=1e-12)

    def test_empty_record(self):
        rec = MeasurementRecord(1e-3, np.empty(0))
        assert np.array_equal(filter_record(rec, MEASURE_ONLY, DARK).loglik, [0.0])
        assert np.array_equal(trace_likelihood(rec, MEASURE_ONLY, DARK), [0.0])

    def test_grid_mismatch(self):
        rec = MeasurementRecord(1e-3, np.zeros(10))
        with pytest.raises(ValueError):
            filter_record(rec, MEASURE_ONLY, DARK, grid=SimGrid(1e-3, 0.02))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            filter_record(MeasurementRecord(1e-3, np.zeros(2)), MEASURE_ONLY, DARK, mode="exact")

    def test_true_model_recovers_truth_state(self):
        m = ModelSpec.qubit(OMEGA0, DELTA)
        path, rec = simulate_record(m, DARK, SimGrid(1e-3, 3.0), np.random.default_rng(12))
        fp = filter_record(rec, m, DARK)
        assert np.abs(fp.states - path.states).max() <= 1e-9

    def test_filter_path_step_by_step(self):
        m = ModelSpec.qubit(OMEGA0, DELTA)
        _, rec = simulate_record(m, DARK, SimGrid(1e-3, 0.2), np.random.default_rng(2))
        other = ModelSpec.qubit(2.0, DELTA)
        fp = filter_record(rec, other, DARK)
        rho, l = DARK, 0.0
        for i, dy in enumerate(rec.dY):
            mm = np.trace(other.F @ rho.op + rho.op @ other.F.conj().T).real
            dW = dy - math.sqrt(ETA) * mm * rec.dt
            l += math.sqrt(ETA) * mm * dy - 0.5 * ETA * mm**2 * rec.dt
            rho = step_normalized(rho, other, rec.dt, dW)
            assert fp.loglik[i + 1] == pytest.approx(l, abs=1e-12)
        assert np.abs(fp.states[-1] - rho.op).max() <= 1e-12


class TestTraceLikelihood:
    def test_telescoping_matches_step_loop(self):
        m = ModelSpec.qubit(2.0, DELTA)
        _, rec = simulate_record(ModelSpec.qubit(OMEGA0, DELTA), DARK, SimGrid(1e-3, 0.5), np.random.default_rng(6))
        logtr = trace_likelihood(rec, m, DARK)
        state = DensityState(DARK.op, normalized=False)
        for i, dy in enumerate(rec.dY):
            state = step_unnormalized(state, m, rec.dt, dy)
            assert state.log_trace == pytest.approx(logtr[i + 1], abs=1e-12)

    def test_tracks_filter_loglik(self):
        m = ModelSpec.qubit(OMEGA0, DELTA)
        _, rec = simulate_record(m, DARK, SimGrid(1e-3, 2.0), np.random.default_rng(21))
        diff = trace_likelihood(rec, m, DARK) - filter_record(rec, m, DARK).loglik
        assert np.abs(diff).max() < 0.2

    def test_zero_noise_exact_factor(self):
        grid = SimGrid(1e-3, 1.0)
        _, rec = simulate_record(MEASURE_ONLY, DARK, grid, None)
        logtr = trace_likelihood(rec, MEASURE_ONLY, DARK)
        # each step multiplies the trace by 1 + sqrt(eta) * 2 * sqrt(2) dt
        per_step = math.log1p(math.sqrt(0.5) * 2 * math.sqrt(2) * grid.dt)
        assert np.allclose(logtr, per_step * np.arange(grid.n_steps + 1), rtol=1e-12)
