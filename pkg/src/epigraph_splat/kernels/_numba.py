"""numba-compiled kernels; same contracts as the numpy backend."""

import numpy as np
from numba import config, njit, prange

# the system TBB is too old for numba; skip probing it
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

NAME = "numba"

CONVERGED = 0
MAX_ITER = 1
NON_FINITE = 2


@njit(cache=True, error_model="numpy")
def _objective(P, uv, X):
    total = 0.0
    for v in range(P.shape[0]):
        a = P[v, 0, 0] * X[0] + P[v, 0, 1] * X[1] + P[v, 0, 2] * X[2] + P[v, 0, 3]
        b = P[v, 1, 0] * X[0] + P[v, 1, 1] * X[1] + P[v, 1, 2] * X[2] + P[v, 1, 3]
        c = P[v, 2, 0] * X[0] + P[v, 2, 1] * X[1] + P[v, 2, 2] * X[2] + P[v, 2, 3]
        ru = a / c - uv[v, 0]
        rv = b / c - uv[v, 1]
        total += ru * ru + rv * rv
    return total


@njit(cache=True, error_model="numpy")
def _refine_one(P, uv, X0, max_iter, max_halvings, step_tol, decrease_tol, X, history):
    V = P.shape[0]
    for d in range(3):
        X[d] = X0[d]
    obj = _objective(P, uv, X)
    history[0] = obj
    if not np.isfinite(obj):
        return obj, 0, NON_FINITE
    r = np.empty(2 * V)
    J = np.empty((2 * V, 3))
    trial = np.empty(3)
    for it in range(max_iter):
        for v in range(V):
            a = P[v, 0, 0] * X[0] + P[v, 0, 1] * X[1] + P[v, 0, 2] * X[2] + P[v, 0, 3]
            b = P[v, 1, 0] * X[0] + P[v, 1, 1] * X[1] + P[v, 1, 2] * X[2] + P[v, 1, 3]
            c = P[v, 2, 0] * X[0] + P[v, 2, 1] * X[1] + P[v, 2, 2] * X[2] + P[v, 2, 3]
            pu = a / c
            pv = b / c
            r[2 * v] = pu - uv[v, 0]
            r[2 * v + 1] = pv - uv[v, 1]
            for d in range(3):
                J[2 * v, d] = (P[v, 0, d] - pu * P[v, 2, d]) / c
                J[2 * v + 1, d] = (P[v, 1, d] - pv * P[v, 2, d]) / c
        delta = -(np.linalg.pinv(J) @ r)
        alpha = 1.0
        accepted = False
        new_obj = obj
        for _ in range(max_halvings + 1):
            for d in range(3):
                trial[d] = X[d] + alpha * delta[d]
            o = _objective(P, uv, trial)
            if np.isfinite(o) and o <= obj:
                accepted = True
                new_obj = o
                break
            alpha *= 0.5
        if not accepted:
            return obj, it, CONVERGED
        step2 = 0.0
        for d in range(3):
            s = alpha * delta[d]
            X[d] += s
            step2 += s * s
        decrease = obj - new_obj
        obj = new_obj
        history[it + 1] = obj
        if np.sqrt(step2) < step_tol or decrease < decrease_tol:
            return obj, it + 1, CONVERGED
    return obj, max_iter, MAX_ITER


@njit(cache=True, parallel=True, error_model="numpy")
def _refine_batch(P, uv, X0, max_iter, max_halvings, step_tol, decrease_tol, X, obj, history, iterations, status):
    for n in prange(X0.shape[0]):
        o, it, st = _refine_one(
            P[n], uv[n], X0[n], max_iter, max_halvings, step_tol, decrease_tol, X[n], history[n]
        )
        obj[n] = o
        iterations[n] = it
        status[n] = st


def refine_batch(P, uv, X0, max_iter=50, max_halvings=10, step_tol=1e-10, decrease_tol=1e-14):
    P = np.ascontiguousarray(P, dtype=np.float64)
    uv = np.ascontiguousarray(uv, dtype=np.float64)
    X0 = np.ascontiguousarray(X0, dtype=np.float64)
    N = X0.shape[0]
    X = np.empty_like(X0)
    obj = np.zeros(N)
    history = np.full((N, max_iter + 1), np.nan)
    iterations = np.zeros(N, dtype=np.int64)
    status = np.zeros(N, dtype=np.int64)
    if N:
        _refine_batch(
            P, uv, X0, max_iter, max_halvings, step_tol, decrease_tol, X, obj, history, iterations, status
        )
    return X, obj, history, iterations, status


@njit(cache=True, parallel=True, error_model="numpy")
def _knn(pos, k, out):
    M = pos.shape[0]
    for i in prange(M):
        bd = np.full(k, np.inf)
        bi = np.full(k, -1, dtype=np.int64)
        for j in range(M):
            if j == i:
                continue
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            dz = pos[j, 2] - pos[i, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < bd[k - 1]:
                # j ascends, so strict comparison keeps earlier ties in front
                p = k - 1
                while p > 0 and d < bd[p - 1]:
                    bd[p] = bd[p - 1]
                    bi[p] = bi[p - 1]
                    p -= 1
                bd[p] = d
                bi[p] = j
        for q in range(k):
            out[i, q] = bi[q]


def knn_bruteforce(pos, k):
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    out = np.empty((pos.shape[0], k), dtype=np.int64)
    _knn(pos, k, out)
    return out


@njit(cache=True, parallel=True, error_model="numpy")
def _ncc(a, b, window, eps, out):
    oh, ow = out.shape
    n = float(window * window)
    for y in prange(oh):
        for x in range(ow):
            sa = 0.0
            sb = 0.0
            for dy in range(window):
                for dx in range(window):
                    sa += a[y + dy, x + dx]
                    sb += b[y + dy, x + dx]
            ma = sa / n
            mb = sb / n
            cov = 0.0
            va = 0.0
            vb = 0.0
            for dy in range(window):
                for dx in range(window):
                    da = a[y + dy, x + dx] - ma
                    db = b[y + dy, x + dx] - mb
                    cov += da * db
                    va += da * da
                    vb += db * db
            out[y, x] = (cov / n) / (np.sqrt(va / n) * np.sqrt(vb / n) + eps)


def ncc_map(a, b, window, eps):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty((a.shape[0] - window + 1, a.shape[1] - window + 1))
    _ncc(a, b, window, eps, out)
    return out


@njit(cache=True, error_model="numpy")
def _volume(s):
    total = 0.0
    for i in range(s.shape[0]):
        total += s[i, 0] * s[i, 1] * s[i, 2]
    return total


def volume_sum(scales):
    s = np.ascontiguousarray(scales, dtype=np.float64).reshape(-1, 3)
    return float(_volume(s))
