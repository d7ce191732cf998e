"""Pure-numpy kernels, vectorized across the batch axis."""

import numpy as np

NAME = "numpy"

# refine_batch status codes
CONVERGED = 0
MAX_ITER = 1
NON_FINITE = 2


def _objective(P, uv, X):
    # P (N,V,3,4), uv (N,V,2), X (N,3) -> (N,)
    p = np.einsum("nvij,nj->nvi", P[..., :3], X) + P[..., 3]
    r = p[..., :2] / p[..., 2:3] - uv
    return np.sum(np.sum(r * r, axis=-1), axis=-1)


def _residuals_and_jacobian(P, uv, X):
    p = np.einsum("nvij,nj->nvi", P[..., :3], X) + P[..., 3]
    c = p[..., 2:3]
    proj = p[..., :2] / c
    r = proj - uv
    # d(a/c)/dX = (P_row0 - (a/c) P_row2) / c
    J = (P[..., :2, :3] - proj[..., None] * P[..., 2:3, :3]) / c[..., None]
    N, V = uv.shape[:2]
    return r.reshape(N, 2 * V), J.reshape(N, 2 * V, 3)


@np.errstate(divide="ignore", invalid="ignore")
def refine_batch(P, uv, X0, max_iter=50, max_halvings=10, step_tol=1e-10, decrease_tol=1e-14):
    """Gauss-Newton with step halving on the summed squared reprojection error.

    Returns ``(X, objective, history, iterations, status)``.  ``history`` has
    shape ``(N, max_iter + 1)``: column 0 is the initial objective, column
    ``t`` the objective after the ``t``-th accepted step, NaN afterwards.
    """
    P = np.ascontiguousarray(P, dtype=np.float64)
    uv = np.ascontiguousarray(uv, dtype=np.float64)
    X = np.array(X0, dtype=np.float64, copy=True)
    N = X.shape[0]
    history = np.full((N, max_iter + 1), np.nan)
    iterations = np.zeros(N, dtype=np.int64)
    status = np.full(N, MAX_ITER, dtype=np.int64)
    if N == 0:
        return X, np.zeros(0), history, iterations, status

    obj = _objective(P, uv, X)
    history[:, 0] = obj
    bad = ~np.isfinite(obj)
    status[bad] = NON_FINITE
    active = ~bad

    for it in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r, J = _residuals_and_jacobian(P[idx], uv[idx], X[idx])
        delta = -np.einsum("nij,nj->ni", np.linalg.pinv(J), r)
        base = obj[idx]
        alpha = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        new_obj = base.copy()
        for _ in range(max_halvings + 1):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            trial = X[idx[todo]] + alpha[todo, None] * delta[todo]
            o = _objective(P[idx[todo]], uv[idx[todo]], trial)
            ok = np.isfinite(o) & (o <= base[todo])
            accepted[todo[ok]] = True
            new_obj[todo[ok]] = o[ok]
            alpha[todo[~ok]] *= 0.5

        # no acceptable step along the GN direction: we are at the minimum
        stalled = idx[~accepted]
        status[stalled] = CONVERGED
        active[stalled] = False

        acc = np.flatnonzero(accepted)
        gi = idx[acc]
        step = alpha[acc, None] * delta[acc]
        X[gi] = X[gi] + step
        decrease = base[acc] - new_obj[acc]
        obj[gi] = new_obj[acc]
        iterations[gi] = it + 1
        history[gi, it + 1] = new_obj[acc]
        done = (np.linalg.norm(step, axis=1) < step_tol) | (decrease < decrease_tol)
        status[gi[done]] = CONVERGED
        active[gi[done]] = False

    return X, obj, history, iterations, status


def knn_bruteforce(pos, k, chunk=256):
    """Exact k nearest neighbors, self excluded, ties by ascending index."""
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    M = pos.shape[0]
    out = np.empty((M, k), dtype=np.int64)
    for start in range(0, M, chunk):
        stop = min(start + chunk, M)
        dx = pos[None, :, 0] - pos[start:stop, None, 0]
        dy = pos[None, :, 1] - pos[start:stop, None, 1]
        dz = pos[None, :, 2] - pos[start:stop, None, 2]
        d = dx * dx + dy * dy + dz * dz
        rows = np.arange(stop - start)
        d[rows, rows + start] = np.inf
        out[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def ncc_map(a, b, window, eps, block=16):
    """Windowed normalized cross-correlation over valid window positions."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    H, W = a.shape
    oh, ow = H - window + 1, W - window + 1
    out = np.empty((oh, ow))
    n = float(window * window)
    wa = np.lib.stride_tricks.sliding_window_view(a, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(b, (window, window))
    for y0 in range(0, oh, block):
        y1 = min(y0 + block, oh)
        pa = wa[y0:y1]
        pb = wb[y0:y1]
        ma = pa.sum(axis=(-2, -1)) / n
        mb = pb.sum(axis=(-2, -1)) / n
        da = pa - ma[..., None, None]
        db = pb - mb[..., None, None]
        cov = (da * db).sum(axis=(-2, -1)) / n
        sa = np.sqrt((da * da).sum(axis=(-2, -1)) / n)
        sb = np.sqrt((db * db).sum(axis=(-2, -1)) / n)
        out[y0:y1] = cov / (sa * sb + eps)
    return out


def volume_sum(scales):
    """Sequential left-to-right sum of per-row scale products."""
    s = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
    if s.shape[0] == 0:
        return 0.0
    prod = s[:, 0] * s[:, 1] * s[:, 2]
    # cumsum accumulates in order, unlike the pairwise np.sum
    return float(np.cumsum(prod)[-1])
