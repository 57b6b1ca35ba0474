"""Compiled inner loops for SME integration.

States are flattened row-major into length ``d*d`` complex vectors and the
linear parts of the SME are applied as precomputed ``d^2 x d^2``
superoperators.  All loops are allocation-free per step and compiled with
``nogil`` so trials can run on worker threads.  Sums are written as explicit
loops so results never depend on BLAS dispatch or batch size.

Status codes: 0 ok, 1 positivity failure, 2 non-positive trace,
3 non-finite input.
"""

import math

import numpy as np
from numba import njit

OK = 0
DIVERGED = 1
BAD_TRACE = 2
NONFINITE = 3


def superoperators(H, F, anti, s):
    """Row-major superoperators for the drift and for ``F rho + rho F^+``.

    ``vec(A rho B) = kron(A, B.T) vec(rho)`` for row-major vectorization.
    """
    d = H.shape[0]
    eye = np.eye(d, dtype=np.complex128)
    comm = np.kron(H, eye) - np.kron(eye, H.T)
    diss = np.kron(F, F.conj()) - 0.5 * (np.kron(anti, eye) + np.kron(eye, anti.T))
    lsup = -1j * comm + s * diss
    msup = np.kron(F, eye) + np.kron(eye, F.conj())
    return np.ascontiguousarray(lsup), np.ascontiguousarray(msup)


@njit(cache=True, nogil=True)
def apply(S, v, out):
    n = v.shape[0]
    for a in range(n):
        acc = 0j
        for b in range(n):
            acc += S[a, b] * v[b]
        out[a] = acc


@njit(cache=True, nogil=True)
def trace_re(v, d):
    s = 0.0
    for i in range(d):
        s += v[i * d + i].real
    return s


@njit(cache=True, nogil=True)
def hermitize(v, d):
    for i in range(d):
        v[i * d + i] = v[i * d + i].real
        for j in range(i + 1, d):
            x = 0.5 * (v[i * d + j] + np.conj(v[j * d + i]))
            v[i * d + j] = x
            v[j * d + i] = np.conj(x)


@njit(cache=True, nogil=True)
def scale(v, c):
    for k in range(v.shape[0]):
        v[k] = v[k] * c


@njit(cache=True, nogil=True)
def min_eig(v, d):
    if d == 2:
        p = 0.5 * (v[0].real + v[3].real)
        q = 0.5 * (v[0].real - v[3].real)
        b = v[1]
        return p - math.sqrt(q * q + b.real * b.real + b.imag * b.imag)
    return np.linalg.eigvalsh(v.reshape((d, d)))[0]


@njit(cache=True, nogil=True)
def project_psd(v, d):
    """Clip negative eigenvalues and restore unit trace, in place."""
    w, u = np.linalg.eigh(v.reshape((d, d)).copy())
    tot = 0.0
    for k in range(d):
        if w[k] > 0.0:
            tot += w[k]
    for i in range(d):
        for j in range(d):
            acc = 0j
            for k in range(d):
                if w[k] > 0.0:
                    acc += w[k] * u[i, k] * np.conj(u[j, k])
            v[i * d + j] = acc / tot
    hermitize(v, d)


@njit(cache=True, nogil=True)
def guard(v, d, fail_below):
    """Positivity guard on a unit-trace vector. Returns (repaired, status)."""
    lam = min_eig(v, d)
    if lam >= 0.0:
        return 0, OK
    if not lam >= -fail_below:
        return 0, DIVERGED
    project_psd(v, d)
    return 1, OK


@njit(cache=True, nogil=True)
def measure(r, msup, d, mr):
    """Fill ``mr`` with M[F]rho and return its trace."""
    apply(msup, r, mr)
    return trace_re(mr, d)


@njit(cache=True, nogil=True)
def step_norm(r, out, lsup, d, sqeta, dt, dW, fail_below, mr, m, lr):
    """Normalized Euler-Maruyama step given precomputed ``mr``/``m`` for ``r``.

    Writes into ``out``; returns (repaired, status).
    """
    apply(lsup, r, lr)
    c = sqeta * dW
    for k in range(r.shape[0]):
        out[k] = r[k] + dt * lr[k] + c * (mr[k] - m * r[k])
    hermitize(out, d)
    tr = trace_re(out, d)
    if not (tr > 0.0 and math.isfinite(tr)):
        return 0, BAD_TRACE
    scale(out, 1.0 / tr)
    return guard(out, d, fail_below)


@njit(cache=True, nogil=True)
def step_unnorm(r, out, lsup, msup, d, sqeta, dt, dY, fail_below, mr, lr):
    """Linear-SME Euler step on a unit-trace representative.

    ``out`` is rescaled to unit trace; returns (log trace factor, repaired, status).
    """
    apply(lsup, r, lr)
    apply(msup, r, mr)
    c = sqeta * dY
    for k in range(r.shape[0]):
        out[k] = r[k] + dt * lr[k] + c * mr[k]
    hermitize(out, d)
    tr = trace_re(out, d)
    if not (tr > 0.0 and math.isfinite(tr)):
        return 0.0, 0, BAD_TRACE
    scale(out, 1.0 / tr)
    rep, status = guard(out, d, fail_below)
    return math.log(tr), rep, status


@njit(cache=True, nogil=True)
def simulate_loop(dW, states, lsup, msup, d, sqeta, dt, fail_below, dY):
    """Truth trajectory from ``states[0]``.

    ``states`` has n+1 rows (full path) or 2 rows (ping-pong, final state in
    row n % 2).  Fills ``dY``; returns (repairs, status, step).
    """
    n = dW.shape[0]
    full = states.shape[0] == n + 1
    nn = states.shape[1]
    mr = np.empty(nn, dtype=np.complex128)
    lr = np.empty(nn, dtype=np.complex128)
    repairs = 0
    for i in range(n):
        if not math.isfinite(dW[i]):
            return repairs, NONFINITE, i
        r = states[i] if full else states[i % 2]
        out = states[i + 1] if full else states[(i + 1) % 2]
        m = measure(r, msup, d, mr)
        dY[i] = sqeta * m * dt + dW[i]
        rep, status = step_norm(r, out, lsup, d, sqeta, dt, dW[i], fail_below, mr, m, lr)
        if status != OK:
            return repairs, status, i
        repairs += rep
    return repairs, OK, n


@njit(cache=True, nogil=True)
def filter_loop(dY, states, lsup, msup, d, sqeta, dt, fail_below, ito, loglik):
    """Likelihood filter along a record from ``states[0]``; fills ``loglik``.

    Row layout of ``states`` as in :func:`simulate_loop`.  Returns
    (repairs, status, step).
    """
    n = dY.shape[0]
    full = states.shape[0] == n + 1
    nn = states.shape[1]
    mr = np.empty(nn, dtype=np.complex128)
    lr = np.empty(nn, dtype=np.complex128)
    half_eta_dt = 0.5 * sqeta * sqeta * dt
    loglik[0] = 0.0
    acc = 0.0
    repairs = 0
    for i in range(n):
        if not math.isfinite(dY[i]):
            return repairs, NONFINITE, i
        r = states[i] if full else states[i % 2]
        out = states[i + 1] if full else states[(i + 1) % 2]
        m = measure(r, msup, d, mr)
        acc += sqeta * m * dY[i]
        if ito:
            acc -= half_eta_dt * m * m
        loglik[i + 1] = acc
        rep, status = step_norm(r, out, lsup, d, sqeta, dt, dY[i] - sqeta * m * dt, fail_below, mr, m, lr)
        if status != OK:
            return repairs, status, i
        repairs += rep
    return repairs, OK, n


@njit(cache=True, nogil=True)
def trace_loop(dY, states, lsup, msup, d, sqeta, dt, fail_below, logtr):
    """Linear SME along a record; fills ``logtr`` with log Tr(rho~). Returns (repairs, status, step)."""
    n = dY.shape[0]
    full = states.shape[0] == n + 1
    nn = states.shape[1]
    mr = np.empty(nn, dtype=np.complex128)
    lr = np.empty(nn, dtype=np.complex128)
    logtr[0] = 0.0
    acc = 0.0
    repairs = 0
    for i in range(n):
        if not math.isfinite(dY[i]):
            return repairs, NONFINITE, i
        r = states[i] if full else states[i % 2]
        out = states[i + 1] if full else states[(i + 1) % 2]
        dl, rep, status = step_unnorm(r, out, lsup, msup, d, sqeta, dt, dY[i], fail_below, mr, lr)
        if status != OK:
            return repairs, status, i
        acc += dl
        logtr[i + 1] = acc
        repairs += rep
    return repairs, OK, n


@njit(cache=True, nogil=True)
def posteriors(l0, l1, prior0, prior1):
    """Two-hypothesis posteriors from log-likelihoods, max-shifted."""
    mx = l0 if l0 > l1 else l1
    w0 = prior0 * math.exp(l0 - mx)
    w1 = prior1 * math.exp(l1 - mx)
    z = w0 + w1
    return w0 / z, w1 / z


@njit(cache=True, nogil=True)
def ensemble_posterior_until(
    dW, truth_h0, rho0, sup_l, sup_m, sqetas, fails, d, dt, ito, prior0, prior1, beta
):
    """Advance all trials together until the posterior-averaged Qe drops to ``beta``.

    ``sup_l``/``sup_m``/``sqetas``/``fails`` are indexed by hypothesis.
    Returns (steps taken, Qe at stop, status).  Steps equal ``n`` when the
    threshold was never reached.
    """
    N, n = dW.shape
    nn = d * d
    truth = np.empty((N, 2, nn), dtype=np.complex128)
    filt = np.empty((2, N, 2, nn), dtype=np.complex128)
    ll = np.zeros((2, N))
    for k in range(N):
        truth[k, 0] = rho0
        filt[0, k, 0] = rho0
        filt[1, k, 0] = rho0
    mr = np.empty(nn, dtype=np.complex128)
    lr = np.empty(nn, dtype=np.complex128)
    qe = prior0 if prior0 < prior1 else prior1
    if qe <= beta:
        return 0, qe, OK
    for i in range(n):
        a = i % 2
        b = (i + 1) % 2
        acc = 0.0
        for k in range(N):
            h = 0 if truth_h0[k] else 1
            r = truth[k, a]
            m = measure(r, sup_m[h], d, mr)
            dY = sqetas[h] * m * dt + dW[k, i]
            _, status = step_norm(r, truth[k, b], sup_l[h], d, sqetas[h], dt, dW[k, i], fails[h], mr, m, lr)
            if status != OK:
                return i, qe, status
            for j in range(2):
                r = filt[j, k, a]
                m = measure(r, sup_m[j], d, mr)
                ll[j, k] += sqetas[j] * m * dY
                if ito:
                    ll[j, k] -= 0.5 * sqetas[j] * sqetas[j] * dt * m * m
                innov = dY - sqetas[j] * m * dt
                _, status = step_norm(r, filt[j, k, b], sup_l[j], d, sqetas[j], dt, innov, fails[j], mr, m, lr)
                if status != OK:
                    return i, qe, status
            p0, p1 = posteriors(ll[0, k], ll[1, k], prior0, prior1)
            acc += p0 if p0 < p1 else p1
        qe = acc / N
        if qe <= beta:
            return i + 1, qe, OK
    return n, qe, OK


@njit(cache=True, nogil=True)
def ensemble_counting_until(dW, truth_h0, rho0, sup_l, sup_m, sqetas, fails, d, dt, prior0, prior1, beta):
    """Error-counting baseline advanced in lockstep until its Qe reaches ``beta``.

    Each hypothesis is tracked with the linear SME; a trial's decision is the
    MAP rule on the trace-likelihood posteriors.  Returns (steps, Qe, status).
    """
    N, n = dW.shape
    nn = d * d
    truth = np.empty((N, 2, nn), dtype=np.complex128)
    lin = np.empty((2, N, 2, nn), dtype=np.complex128)
    ll = np.zeros((2, N))
    n0 = 0
    for k in range(N):
        truth[k, 0] = rho0
        lin[0, k, 0] = rho0
        lin[1, k, 0] = rho0
        if truth_h0[k]:
            n0 += 1
    n1 = N - n0
    mr = np.empty(nn, dtype=np.complex128)
    lr = np.empty(nn, dtype=np.complex128)
    # before any data every trial decides from the priors alone
    if prior0 > prior1:
        qe = prior1 * 1.0
    else:
        qe = prior0 * 1.0
    if qe <= beta:
        return 0, qe, OK
    for i in range(n):
        a = i % 2
        b = (i + 1) % 2
        err10 = 0
        err01 = 0
        for k in range(N):
            h = 0 if truth_h0[k] else 1
            r = truth[k, a]
            m = measure(r, sup_m[h], d, mr)
            dY = sqetas[h] * m * dt + dW[k, i]
            _, status = step_norm(r, truth[k, b], sup_l[h], d, sqetas[h], dt, dW[k, i], fails[h], mr, m, lr)
            if status != OK:
                return i, qe, status
            for j in range(2):
                dl, _, status = step_unnorm(lin[j, k, a], lin[j, k, b], sup_l[j], sup_m[j], d, sqetas[j], dt, dY, fails[j], mr, lr)
                if status != OK:
                    return i, qe, status
                ll[j, k] += dl
            p0, p1 = posteriors(ll[0, k], ll[1, k], prior0, prior1)
            if truth_h0[k]:
                if not p0 > p1:
                    err10 += 1
            elif p0 > p1:
                err01 += 1
        qe = prior0 * err10 / n0 + prior1 * err01 / n1
        if qe <= beta:
            return i + 1, qe, OK
    return n, qe, OK
