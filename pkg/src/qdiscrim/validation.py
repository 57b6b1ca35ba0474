"""Self-check suite run by ``qdiscrim validate``.

Each check is a small, fast property test against the installed build.  The
suite uses its own fixed seeds so its verdict is reproducible.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import qmath
from .inference import HypothesisPair, decide, map_accepts_h0, posteriors
from .montecarlo import ExperimentConfig, estimate_qe_posterior, run_trial
from .qmath import BlochVector, DensityState, bloch_to_density, density_to_bloch
from .trajectory import ModelSpec, SimGrid, filter_record, simulate_record, step_normalized

CHECKS: list[tuple[str, Callable[[], tuple[bool, str]]]] = []


def check(name: str):
    def register(fn):
        CHECKS.append((name, fn))
        return fn

    return register


def _rng():
    return np.random.default_rng(20240601)


def _random_state(rng, d: int) -> np.ndarray:
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def _random_op(rng, d: int, hermitian: bool = False) -> np.ndarray:
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return qmath.hermitize(a) if hermitian else a


def _example_pair() -> HypothesisPair:
    return HypothesisPair(ModelSpec.qubit(1.0, 1.43), ModelSpec.qubit(2.0, 1.43))


def _example_cfg(**kw) -> ExperimentConfig:
    base = dict(pair=_example_pair(), grid=SimGrid(1e-3, 3.0), rho0=bloch_to_density(BlochVector(0, 0, 1)), base_seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


@check("state guards along a trajectory")
def _trajectory_guards():
    cfg = _example_cfg()
    path, record = simulate_record(cfg.pair.model0, cfg.rho0, SimGrid(1e-3, 5.0), np.random.default_rng(1))
    fp = filter_record(record, cfg.pair.model1, cfg.rho0)
    worst_h = worst_t = 0.0
    worst_eig = math.inf
    for states in (path.states, fp.states):
        worst_h = max(worst_h, float(np.abs(states - np.conj(np.swapaxes(states, 1, 2))).max()))
        worst_t = max(worst_t, float(np.abs(np.trace(states, axis1=1, axis2=2) - 1).max()))
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(states).min()))
    ok = worst_h <= 1e-12 and worst_t <= 1e-9 and worst_eig >= -1e-8
    return ok, f"max|A-A+|={worst_h:.1e}, max|Tr-1|={worst_t:.1e}, min eig={worst_eig:.1e}"


@check("superoperator trace annihilation and Hermiticity")
def _superops():
    rng = _rng()
    worst_tr = worst_h = 0.0
    for d in (2, 3, 4):
        for _ in range(50):
            rho = _random_state(rng, d)
            F = _random_op(rng, d)
            D = qmath.dissipator(F, rho, "standard_FdagF")
            inn = qmath.innovation(F, rho)
            worst_tr = max(worst_tr, abs(np.trace(D)), abs(np.trace(inn)))
            M, _ = qmath.msuperop(F, rho)
            for X in (D, inn, M, qmath.dissipator(F, rho, "paper_FFdag")):
                worst_h = max(worst_h, float(np.abs(X - X.conj().T).max()))
    return worst_tr <= 1e-12 and worst_h <= 1e-12, f"max|Tr|={worst_tr:.1e}, max|X-X+|={worst_h:.1e}"


@check("dissipator orderings agree for Hermitian F")
def _orderings():
    rng = _rng()
    worst = 0.0
    for _ in range(100):
        rho = _random_state(rng, 2)
        F = _random_op(rng, 2, hermitian=True)
        worst = max(worst, float(np.abs(qmath.dissipator(F, rho, "paper_FFdag") - qmath.dissipator(F, rho, "standard_FdagF")).max()))
    return worst <= 1e-12, f"max difference {worst:.1e}"


@check("Bloch round trip")
def _bloch():
    rng = _rng()
    worst = 0.0
    for _ in range(200):
        v = rng.normal(size=3)
        v *= rng.uniform() / np.linalg.norm(v)
        b = density_to_bloch(bloch_to_density(BlochVector(*v)))
        worst = max(worst, float(np.abs(np.array(b.as_tuple()) - v).max()))
    return worst <= 1e-12, f"max error {worst:.1e}"


@check("posterior normalization")
def _normalization():
    rng = _rng()
    pair = HypothesisPair(_example_pair().model0, _example_pair().model1, 0.3, 0.7)
    l0 = rng.normal(scale=1e3, size=20000)
    l1 = rng.normal(scale=1e3, size=20000)
    post = posteriors(l0, l1, pair)
    worst = float(np.abs(post.p0 + post.p1 - 1).max())
    in_range = bool(np.all((post.p0 >= 0) & (post.p0 <= 1)))
    return worst <= 1e-12 and in_range, f"max|p0+p1-1|={worst:.1e}"


@check("shift invariance of posteriors and decisions")
def _shift():
    rng = _rng()
    pair = _example_pair()
    # dyadic values keep the shifted sums exact
    l0 = np.round(rng.normal(scale=20, size=5000) * 2**20) / 2**20
    l1 = np.round(rng.normal(scale=20, size=5000) * 2**20) / 2**20
    c = np.round(rng.normal(scale=100, size=5000))
    a = posteriors(l0, l1, pair)
    b = posteriors(l0 + c, l1 + c, pair)
    same_post = np.array_equal(a.p0, b.p0) and np.array_equal(a.p1, b.p1)
    same_dec = all(decide(x, y, pair).accepted == decide(x + s, y + s, pair).accepted for x, y, s in zip(l0, l1, c))
    return same_post and same_dec, f"posteriors identical={same_post}, decisions identical={same_dec}"


@check("Bayes criterion equals MAP for zero-one cost and equal priors")
def _bayes_map():
    rng = _rng()
    pair = _example_pair()
    l0 = rng.normal(scale=10, size=20000)
    l1 = rng.normal(scale=10, size=20000)
    l1[::10] = l0[::10]
    bayes = np.array([decide(x, y, pair).accepted == "H0" for x, y in zip(l0, l1)])
    mapd = map_accepts_h0(posteriors(l0, l1, pair))
    agree = int(np.sum(bayes == mapd))
    return agree == len(l0), f"{agree}/{len(l0)} agree"


@check("normalized step matches direct matrix arithmetic")
def _step_reference():
    rng = _rng()
    worst = 0.0
    for scaling in ("eta_scaled", "unit"):
        m = ModelSpec.qubit(1.3, -0.4, kappa=0.8, eta=0.7, dissipator_scaling=scaling)
        for _ in range(50):
            rho = _random_state(rng, 2)
            dW = rng.normal() * 0.03
            dt = 1e-3
            s = m.eta if scaling == "eta_scaled" else 1.0
            H, F = m.hamiltonian, m.F
            ref = rho + (-1j * qmath.commutator(H, rho) + s * qmath.dissipator(F, rho)) * dt + math.sqrt(m.eta) * qmath.innovation(F, rho) * dW
            ref = qmath.hermitize(ref)
            ref /= np.trace(ref).real
            got = step_normalized(DensityState(rho), m, dt, dW).op
            worst = max(worst, float(np.abs(got - ref).max()))
    return worst <= 1e-12, f"max difference {worst:.1e}"


@check("determinism of seeded trials")
def _determinism():
    cfg = _example_cfg()
    a = run_trial(cfg, 3)
    b = run_trial(cfg, 3)
    same = np.array_equal(a.loglik0, b.loglik0) and np.array_equal(a.loglik1, b.loglik1) and np.array_equal(a.states0, b.states0)
    return same and a.true_hypothesis == b.true_hypothesis, f"bitwise identical={same}"


@check("decision consistency of trial results")
def _decision_consistency():
    cfg = _example_cfg()
    bad = 0
    for i in range(10):
        r = run_trial(cfg, i)
        again = decide(r.loglik0[-1], r.loglik1[-1], cfg.pair)
        bad += again != r.final_decision or again.accepted != r.decision(-1).accepted
    return bad == 0, f"{10 - bad}/10 consistent"


@check("parallel and sequential ensembles are bit-identical")
def _parallel():
    cfg = _example_cfg(n_trials=12, grid=SimGrid(1e-3, 2.0))
    seq = estimate_qe_posterior(cfg)
    par = estimate_qe_posterior(cfg.with_(workers=4))
    same = np.array_equal(seq.qe, par.qe) and np.array_equal(seq.stderr, par.stderr)
    return same, f"bitwise identical={same}"


def run_checks() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
