"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names at the bottom dispatch on :data:`mrtkit._accel.USE_NUMBA`.
Both flavours perform the same floating-point operations in the same
order wherever that is practical, so switching backend changes results by
at most a few ulps (the reductions in :func:`ito_sum` differ in summation
order).
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# -- iterated Ito integrals ---------------------------------------------------


def _iterated_numpy(dW, g, n):
    P, M = dW.shape
    J = np.zeros((n + 1, P))
    J[0] = 1.0
    for m in range(M):
        inc = g[m] * dW[:, m]
        for k in range(n, 0, -1):
            J[k] = J[k] + J[k - 1] * inc
    return np.ascontiguousarray(J.T)


@njit
def _iterated_numba(dW, g, n):
    P, M = dW.shape
    out = np.zeros((P, n + 1))
    J = np.zeros(n + 1)
    for p in range(P):
        J[:] = 0.0
        J[0] = 1.0
        for m in range(M):
            inc = g[m] * dW[p, m]
            for k in range(n, 0, -1):
                J[k] = J[k] + J[k - 1] * inc
        out[p, :] = J
    return out


# -- jump-time snapping -------------------------------------------------------


def _snap_numpy(times, offsets, dt, M):
    n_jumps = times.shape[0]
    if n_jumps == 0:
        return np.zeros(0, dtype=np.int64)
    counts = np.diff(offsets)
    owner = np.repeat(np.arange(counts.shape[0]), counts)
    rank = np.arange(n_jumps) - offsets[owner]
    base = np.maximum(np.floor(times / dt + 0.5).astype(np.int64), 1)
    # a_j = max(b_j, a_{j-1} + 1)  <=>  a_j - j = running max of (b_j - j)
    shifted = base - rank
    span = int(shifted.max() - shifted.min()) + 1
    lifted = shifted + owner * span
    run = np.maximum.accumulate(lifted) - owner * span
    return np.minimum(run + rank, M)


@njit
def _snap_numba(times, offsets, dt, M):
    out = np.empty(times.shape[0], dtype=np.int64)
    for p in range(offsets.shape[0] - 1):
        prev = 0
        for j in range(offsets[p], offsets[p + 1]):
            k = np.int64(np.floor(times[j] / dt + 0.5))
            if k <= prev:
                k = prev + 1
            prev = k
            out[j] = k if k < M else M
    return out


# -- piecewise-constant channels from jump lists ------------------------------


def _jump_channel_numpy(idx, offsets, values, M):
    P = offsets.shape[0] - 1
    inc = np.zeros((P, M + 1))
    owner = np.repeat(np.arange(P), np.diff(offsets))
    np.add.at(inc, (owner, idx), values)
    return np.cumsum(inc, axis=1)


@njit
def _jump_channel_numba(idx, offsets, values, M):
    P = offsets.shape[0] - 1
    inc = np.zeros((P, M + 1))
    for p in range(P):
        for j in range(offsets[p], offsets[p + 1]):
            inc[p, idx[j]] += values[j]
    out = np.empty((P, M + 1))
    for p in range(P):
        acc = 0.0
        for k in range(M + 1):
            acc += inc[p, k]
            out[p, k] = acc
    return out


# -- stage compensator of a marked point process ------------------------------


def _stage_compensator_numpy(arrivals, stage_rates, times):
    P, K = arrivals.shape
    out = np.zeros((P, times.shape[0]))
    start = np.zeros(P)
    for i in range(K):
        span = arrivals[:, i] - start
        elapsed = np.clip(times[None, :] - start[:, None], 0.0, span[:, None])
        out = out + stage_rates[i] * elapsed
        start = arrivals[:, i]
    return out


@njit
def _stage_compensator_numba(arrivals, stage_rates, times):
    P, K = arrivals.shape
    out = np.zeros((P, times.shape[0]))
    for p in range(P):
        for k in range(times.shape[0]):
            t = times[k]
            acc = 0.0
            start = 0.0
            for i in range(K):
                span = arrivals[p, i] - start
                e = t - start
                if e < 0.0:
                    e = 0.0
                elif e > span:
                    e = span
                acc = acc + stage_rates[i] * e
                start = arrivals[p, i]
            out[p, k] = acc
    return out


# -- left-point stochastic sums -----------------------------------------------


def _ito_sum_numpy(integrand, dX):
    return np.einsum("pm,pm->p", integrand, dX)


@njit
def _ito_sum_numba(integrand, dX):
    P, M = dX.shape
    out = np.zeros(P)
    for p in range(P):
        acc = 0.0
        for m in range(M):
            acc += integrand[p, m] * dX[p, m]
        out[p] = acc
    return out


IMPLEMENTATIONS = {
    "iterated_integrals": (_iterated_numba, _iterated_numpy),
    "snap_jump_indices": (_snap_numba, _snap_numpy),
    "jump_channel": (_jump_channel_numba, _jump_channel_numpy),
    "stage_compensator": (_stage_compensator_numba, _stage_compensator_numpy),
    "ito_sum": (_ito_sum_numba, _ito_sum_numpy),
}


def _pick(name):
    fast, slow = IMPLEMENTATIONS[name]
    return fast if USE_NUMBA else slow


_iterated = _pick("iterated_integrals")
_snap = _pick("snap_jump_indices")
_jump_channel = _pick("jump_channel")
_stage_comp = _pick("stage_compensator")
_ito = _pick("ito_sum")


def iterated_integrals(dW, g, n):
    """Terminal values ``J_0..J_n`` of the left-point forward recursion, shape (P, n+1)."""
    return _iterated(np.ascontiguousarray(dW, dtype=np.float64),
                     np.ascontiguousarray(g, dtype=np.float64), int(n))


def snap_jump_indices(times, offsets, dt, M):
    """Grid index of every jump: nearest grid point, strictly after the previous snap, capped at M."""
    return _snap(np.ascontiguousarray(times, dtype=np.float64),
                 np.ascontiguousarray(offsets, dtype=np.int64), float(dt), int(M))


def jump_channel(idx, offsets, values, M):
    return _jump_channel(np.ascontiguousarray(idx, dtype=np.int64),
                         np.ascontiguousarray(offsets, dtype=np.int64),
                         np.ascontiguousarray(values, dtype=np.float64), int(M))


def stage_compensator(arrivals, stage_rates, times):
    return _stage_comp(np.ascontiguousarray(arrivals, dtype=np.float64),
                       np.ascontiguousarray(stage_rates, dtype=np.float64),
                       np.ascontiguousarray(times, dtype=np.float64))


def ito_sum(integrand, dX):
    """Per-path ``sum_m integrand[:, m] * dX[:, m]``."""
    return _ito(np.ascontiguousarray(integrand, dtype=np.float64),
                np.ascontiguousarray(dX, dtype=np.float64))
