"""Discrimination trials, Qe(t) estimators and the running-time benchmark.

Every trial owns a random stream derived from ``(base_seed, trial_index)``,
so results do not depend on execution order or on the number of workers.
Ensemble reductions fold per-trial paths in trial-index order.
"""

from __future__ import annotations

import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Literal, Sequence

import numpy as np

from . import _kernels as K
from .inference import (
    Decision,
    HypothesisPair,
    PosteriorPair,
    bayes_threshold,
    conditional_error,
    decide,
    map_accepts_h0,
    posteriors,
)
from .qmath import DensityState
from .trajectory import (
    IntegrationError,
    ModelSpec,
    SimGrid,
    _raise_status,
    filter_record,
    simulate_record,
    trace_likelihood,
)

log = logging.getLogger(__name__)

Estimator = Literal["posterior", "counting"]
TruthSampling = Literal["from_prior", "fixed_H0", "fixed_H1"]

ESTIMATORS = ("posterior", "counting")
TRUTH_SAMPLINGS = ("from_prior", "fixed_H0", "fixed_H1")

_CHUNK = 64


class TrialError(IntegrationError):
    def __init__(self, trial_index: int, cause: IntegrationError):
        RuntimeError.__init__(self, f"trial {trial_index}: {cause}")
        self.trial_index = trial_index
        self.step = cause.step


class UndefinedEstimateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    pair: HypothesisPair
    grid: SimGrid
    rho0: DensityState
    beta: float = 0.01
    n_trials: int = 1
    base_seed: int = 0
    estimator: Estimator = "posterior"
    truth_sampling: TruthSampling = "from_prior"
    loglik_mode: str = "ito_corrected"
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.n_trials < 1:
            raise ValueError(f"n_trials must be at least 1, got {self.n_trials}")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError(f"base_seed must be an unsigned 64-bit integer, got {self.base_seed}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.truth_sampling not in TRUTH_SAMPLINGS:
            raise ValueError(f"unknown truth_sampling {self.truth_sampling!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class TrialResult:
    """Per-grid-point outputs of one discrimination run.

    Paths are arrays over the grid; :meth:`decision` rebuilds the
    :class:`Decision` at any grid index.
    """

    trial_index: int
    true_hypothesis: str
    times: np.ndarray
    loglik0: np.ndarray
    loglik1: np.ndarray
    posterior_path: PosteriorPair
    conditional_error_path: np.ndarray
    accept_h0: np.ndarray
    log_threshold: float
    final_decision: Decision
    stop_time: float | None
    repair_count: int
    states0: np.ndarray = field(repr=False, default=None)
    states1: np.ndarray = field(repr=False, default=None)

    @property
    def log_ratio(self) -> np.ndarray:
        return self.loglik0 - self.loglik1

    def decision(self, i: int) -> Decision:
        lr = float(self.loglik0[i] - self.loglik1[i])
        return Decision("H0" if self.accept_h0[i] else "H1", lr, self.log_threshold)

    @property
    def decision_path(self) -> list[Decision]:
        return [self.decision(i) for i in range(len(self.times))]


@dataclass(frozen=True, eq=False)
class QeCurve:
    times: np.ndarray
    qe: np.ndarray
    stderr: np.ndarray
    n_trials: int
    estimator: str

    def at(self, t: float) -> tuple[float, float]:
        i = int(round(t / (self.times[1] - self.times[0]))) if len(self.times) > 1 else 0
        return float(self.qe[i]), float(self.stderr[i])


@dataclass(frozen=True, eq=False)
class ErrorCounts:
    """Error tallies at each grid time: ``n_10`` accepted H1 under H0, ``n_01`` the reverse."""

    n_10: np.ndarray
    n_01: np.ndarray
    n_trials_0: int
    n_trials_1: int


@dataclass(frozen=True)
class BenchRow:
    n_trials: int
    estimator: str
    first_passage_time: float | None
    wall_clock_seconds: float
    seed: int


BenchTable = list[BenchRow]


def trial_rng(base_seed: int, trial_index: int) -> np.random.Generator:
    """Counter-based stream for one trial, independent of every other index."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(base_seed, spawn_key=(trial_index,))))


def _sample_truth(cfg: ExperimentConfig, rng: np.random.Generator) -> str:
    if cfg.truth_sampling == "fixed_H0":
        return "H0"
    if cfg.truth_sampling == "fixed_H1":
        return "H1"
    return "H0" if rng.random() < cfg.pair.prior0 else "H1"


def _true_model(cfg: ExperimentConfig, truth: str) -> ModelSpec:
    return cfg.pair.model0 if truth == "H0" else cfg.pair.model1


def _record_for_trial(cfg: ExperimentConfig, trial_index: int, truth: str | None = None):
    rng = trial_rng(cfg.base_seed, trial_index)
    sampled = _sample_truth(cfg, rng)
    truth = truth or sampled
    truth_path, record = simulate_record(_true_model(cfg, truth), cfg.rho0, cfg.grid, rng)
    return truth, truth_path, record


def first_passage(curve: QeCurve, beta: float) -> float | None:
    """Earliest grid time with ``qe <= beta``, or ``None`` if the curve never gets there."""
    hits = np.flatnonzero(np.asarray(curve.qe) <= beta)
    return float(curve.times[hits[0]]) if hits.size else None


def run_trial(cfg: ExperimentConfig, trial_index: int) -> TrialResult:
    """One pass of the discrimination loop on a freshly simulated record.

    Both hypothesis filters consume the same record; posteriors, decisions
    and the conditional error are evaluated at every grid point.
    """
    pair = cfg.pair
    try:
        truth, truth_path, record = _record_for_trial(cfg, trial_index)
        f0 = filter_record(record, pair.model0, cfg.rho0, cfg.loglik_mode)
        f1 = filter_record(record, pair.model1, cfg.rho0, cfg.loglik_mode)
    except IntegrationError as exc:
        raise TrialError(trial_index, exc) from exc
    post = posteriors(f0.loglik, f1.loglik, pair)
    cond = conditional_error(post)
    thr = bayes_threshold(pair)
    accept = (f0.loglik - f1.loglik) > thr
    hits = np.flatnonzero(cond <= cfg.beta)
    times = cfg.grid.times
    return TrialResult(
        trial_index=trial_index,
        true_hypothesis=truth,
        times=times,
        loglik0=f0.loglik,
        loglik1=f1.loglik,
        posterior_path=post,
        conditional_error_path=cond,
        accept_h0=accept,
        log_threshold=thr,
        final_decision=decide(f0.loglik[-1], f1.loglik[-1], pair),
        stop_time=float(times[hits[0]]) if hits.size else None,
        repair_count=truth_path.repairs + f0.repairs + f1.repairs,
        states0=f0.states,
        states1=f1.states,
    )


class RunningMoments:
    """Pointwise mean and variance of equal-length paths (Welford), folded in call order."""

    def __init__(self):
        self.count = 0
        self.mean = None
        self._m2 = None

    def add(self, path) -> None:
        x = np.asarray(path, dtype=float)
        if self.mean is None:
            self.mean = x.copy()
            self._m2 = np.zeros_like(x)
            self.count = 1
            return
        if x.shape != self.mean.shape:
            raise ValueError(f"path length {x.shape} does not match {self.mean.shape}")
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)

    def stderr(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self._m2 / (self.count - 1) / self.count)


def aggregate(partials: Iterable, times=None, estimator: str = "posterior") -> QeCurve:
    """Pointwise mean and standard error of per-trial paths, folded in the given order."""
    acc = RunningMoments()
    for p in partials:
        acc.add(p)
    if acc.count == 0:
        raise ValueError("aggregate needs at least one path")
    if times is None:
        times = np.arange(acc.mean.shape[0], dtype=float)
    return QeCurve(np.asarray(times), acc.mean, acc.stderr(), acc.count, estimator)


def _ordered_map(fn: Callable[[int], object], indices: Sequence[int], workers: int) -> Iterator:
    """Yield ``fn(i)`` in index order; with workers > 1 trials run on a thread pool."""
    if workers <= 1:
        for i in indices:
            yield fn(i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, len(indices), _CHUNK):
            yield from pool.map(fn, indices[start : start + _CHUNK])


def mean_path(cfg: ExperimentConfig, extract: Callable[[TrialResult], np.ndarray], estimator="mean") -> QeCurve:
    """Trial average of any per-trial path, e.g. ``lambda r: r.posterior_path.p0``."""
    paths = _ordered_map(lambda i: extract(run_trial(cfg, i)), range(cfg.n_trials), cfg.workers)
    return aggregate(paths, cfg.grid.times, estimator)


def estimate_qe_posterior(cfg: ExperimentConfig) -> QeCurve:
    """Average error probability as the trial mean of min(p0, p1).

    Valid for a single trial; needs truths drawn from the prior to be unbiased.
    """
    if cfg.truth_sampling != "from_prior":
        raise UndefinedEstimateError("the posterior estimator needs truth_sampling='from_prior'")
    return mean_path(cfg, lambda r: r.conditional_error_path, "posterior")


def _counting_trial(cfg: ExperimentConfig, trial_index: int, truth: str | None = None):
    pair = cfg.pair
    try:
        truth, _, record = _record_for_trial(cfg, trial_index, truth)
        l0 = trace_likelihood(record, pair.model0, cfg.rho0)
        l1 = trace_likelihood(record, pair.model1, cfg.rho0)
    except IntegrationError as exc:
        raise TrialError(trial_index, exc) from exc
    return truth, map_accepts_h0(posteriors(l0, l1, pair))


def _assemble_counts(cfg: ExperimentConfig, outcomes) -> tuple[QeCurve, ErrorCounts]:
    n_points = cfg.grid.n_steps + 1
    n_10 = np.zeros(n_points, dtype=np.int64)
    n_01 = np.zeros(n_points, dtype=np.int64)
    n0 = n1 = 0
    for truth, accept_h0 in outcomes:
        if truth == "H0":
            n0 += 1
            n_10 += ~accept_h0
        else:
            n1 += 1
            n_01 += accept_h0
    for name, n in (("H0", n0), ("H1", n1)):
        if n == 0:
            raise UndefinedEstimateError(f"no trials ran with {name} true; its error rate is undefined")
    pr0, pr1 = cfg.pair.prior0, cfg.pair.prior1
    p10 = n_10 / n0
    p01 = n_01 / n1
    qe = pr0 * p10 + pr1 * p01
    stderr = np.sqrt(pr0**2 * p10 * (1 - p10) / n0 + pr1**2 * p01 * (1 - p01) / n1)
    return (
        QeCurve(cfg.grid.times, qe, stderr, n0 + n1, "counting"),
        ErrorCounts(n_10, n_01, n0, n1),
    )


def estimate_qe_counting(cfg: ExperimentConfig, per_truth: bool = False) -> tuple[QeCurve, ErrorCounts]:
    """Error-counting baseline: tally wrong MAP decisions made from linear-SME likelihoods.

    With ``per_truth=False`` the ``n_trials`` truths are drawn from the prior
    and each conditional error rate uses its own denominator.  With
    ``per_truth=True`` ``n_trials`` experiments run under each hypothesis.
    """
    if per_truth:
        n = cfg.n_trials
        jobs = [(i, "H0") for i in range(n)] + [(n + i, "H1") for i in range(n)]
    else:
        jobs = [(i, None) for i in range(cfg.n_trials)]
    outcomes = _ordered_map(lambda job: _counting_trial(cfg, *job), jobs, cfg.workers)
    return _assemble_counts(cfg, outcomes)


def _ensemble_inputs(cfg: ExperimentConfig, jobs):
    """Noise matrix and truth flags for the lockstep kernels, drawn per trial stream."""
    n = cfg.grid.n_steps
    dW = np.empty((len(jobs), n))
    truth_h0 = np.empty(len(jobs), dtype=np.bool_)
    sq = math.sqrt(cfg.grid.dt)
    for row, (idx, forced) in enumerate(jobs):
        rng = trial_rng(cfg.base_seed, idx)
        sampled = _sample_truth(cfg, rng)
        truth_h0[row] = (forced or sampled) == "H0"
        dW[row] = rng.standard_normal(n) * sq
    models = (cfg.pair.model0, cfg.pair.model1)
    args = [m.kernel_args() for m in models]
    sup_l = np.stack([a[0] for a in args])
    sup_m = np.stack([a[1] for a in args])
    sqetas = np.array([a[3] for a in args])
    fails = np.array([m.repair_limit(cfg.grid.dt) for m in models])
    rho0 = np.ascontiguousarray(cfg.rho0.op).reshape(-1).copy()
    return dW, truth_h0, rho0, sup_l, sup_m, sqetas, fails, cfg.pair.model0.dim


def run_until_threshold(cfg: ExperimentConfig, estimator: str) -> tuple[float | None, float]:
    """Flowchart mode: advance every trial together and stop once Qe <= beta.

    Returns (first-passage time or None, Qe at stop).  The counting
    estimator runs ``n_trials`` experiments under each hypothesis.
    """
    if estimator == "posterior":
        jobs = [(i, None) for i in range(cfg.n_trials)]
    elif estimator == "counting":
        n = cfg.n_trials
        jobs = [(i, "H0") for i in range(n)] + [(n + i, "H1") for i in range(n)]
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    dW, truth_h0, rho0, sup_l, sup_m, sqetas, fails, d = _ensemble_inputs(cfg, jobs)
    pair = cfg.pair
    if estimator == "posterior":
        if not truth_h0.any() and not (~truth_h0).any():
            raise UndefinedEstimateError("no trials")
        steps, qe, status = K.ensemble_posterior_until(
            dW, truth_h0, rho0, sup_l, sup_m, sqetas, fails, d, cfg.grid.dt,
            cfg.loglik_mode == "ito_corrected", pair.prior0, pair.prior1, cfg.beta,
        )
    else:
        steps, qe, status = K.ensemble_counting_until(
            dW, truth_h0, rho0, sup_l, sup_m, sqetas, fails, d, cfg.grid.dt, pair.prior0, pair.prior1, cfg.beta
        )
    _raise_status(status, steps, cfg.grid.dt)
    if qe <= cfg.beta:
        return steps * cfg.grid.dt, qe
    return None, qe


def _linear_r2(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0


def bench(cfg: ExperimentConfig, n_list: Sequence[int], repeats: int = 3, early_stop: bool = True) -> BenchTable:
    """Wall-clock cost of reaching Qe <= beta with each estimator, per ensemble size.

    Each row is the median of ``repeats`` timed runs of the same seed.  The
    counting baseline has no single-trial estimate, so N=1 only gets a
    posterior row.  ``early_stop=False`` integrates the full grid and reads
    the first passage off the complete curve.
    """
    if not n_list:
        raise ValueError("n_list must not be empty")
    rows: BenchTable = []
    for n in n_list:
        sub = cfg.with_(n_trials=int(n), truth_sampling="from_prior")
        for est in ESTIMATORS:
            if est == "counting" and n < 2:
                continue
            times, fpt = [], None
            for _ in range(repeats):
                t0 = time.perf_counter()
                if early_stop:
                    fpt, _ = run_until_threshold(sub, est)
                elif est == "posterior":
                    fpt = first_passage(estimate_qe_posterior(sub), sub.beta)
                else:
                    fpt = first_passage(estimate_qe_counting(sub, per_truth=True)[0], sub.beta)
                times.append(time.perf_counter() - t0)
            log.info("bench N=%d %s: fpt=%s median %.3fs", n, est, fpt, statistics.median(times))
            rows.append(BenchRow(int(n), est, fpt, statistics.median(times), cfg.base_seed))
    return rows


def scaling_r2(table: BenchTable, estimator: str) -> float:
    """R^2 of a straight-line fit of wall clock against N for one estimator."""
    pts = [(r.n_trials, r.wall_clock_seconds) for r in table if r.estimator == estimator]
    return _linear_r2(*zip(*pts))
