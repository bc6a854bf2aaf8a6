"""Hot inner loops: the semi-Lagrangian Bellman sweep and the min-plus product.

Each kernel exists twice, a numba loop nest and a vectorised numpy version.
The public names dispatch on :data:`weakkam._accel.USE_NUMBA`; both variants
are importable directly so tests and the benchmark can compare them.

Reductions run over a fixed index order (velocity nodes ascending, inner
index ascending) and ties keep the first index, so results do not depend on
the backend beyond floating-point summation order in the interpolation.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

CAP = 1.0e9


# --- Bellman sweep ----------------------------------------------------


def _bellman_sweep_loops(cost, beta, idx, wts, u):
    n, m, q = idx.shape
    out = np.empty(n)
    policy = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        arg = 0
        for l in range(m):
            s = 0.0
            for k in range(q):
                s += wts[i, l, k] * u[idx[i, l, k]]
            val = cost[i, l] + beta * s
            if val < best:
                best = val
                arg = l
        out[i] = best
        policy[i] = arg
    return out, policy


def _value_iteration_loops(cost, beta, idx, wts, u0, tol, max_iter):
    n, m, q = idx.shape
    u = u0.copy()
    new = np.empty(n)
    policy = np.zeros(n, dtype=np.int64)
    residuals = np.empty(max_iter)
    it = 0
    converged = False
    while it < max_iter:
        r = 0.0
        for i in range(n):
            best = np.inf
            arg = 0
            for l in range(m):
                s = 0.0
                for k in range(q):
                    s += wts[i, l, k] * u[idx[i, l, k]]
                val = cost[i, l] + beta * s
                if val < best:
                    best = val
                    arg = l
            new[i] = best
            policy[i] = arg
            d = abs(best - u[i])
            if d > r:
                r = d
        for i in range(n):
            u[i] = new[i]
        residuals[it] = r
        it += 1
        if r <= tol:
            converged = True
            break
    return u, policy, residuals[:it], converged


_bellman_sweep_nb = njit(_bellman_sweep_loops)
_value_iteration_nb = njit(_value_iteration_loops)


def bellman_sweep_numpy(cost, beta, idx, wts, u):
    interp = (wts * u[idx]).sum(axis=2)
    vals = cost + beta * interp
    policy = np.argmin(vals, axis=1)
    return vals[np.arange(vals.shape[0]), policy], policy


def bellman_sweep_numba(cost, beta, idx, wts, u):
    return _bellman_sweep_nb(cost, float(beta), idx, wts, u)


def value_iteration_numpy(cost, beta, idx, wts, u0, tol, max_iter):
    u = np.array(u0, dtype=float)
    policy = np.zeros(u.shape[0], dtype=np.int64)
    residuals = []
    converged = False
    for _ in range(int(max_iter)):
        new, policy = bellman_sweep_numpy(cost, beta, idx, wts, u)
        r = float(np.max(np.abs(new - u)))
        u = new
        residuals.append(r)
        if r <= tol:
            converged = True
            break
    return u, policy, np.asarray(residuals), converged


def value_iteration_numba(cost, beta, idx, wts, u0, tol, max_iter):
    return _value_iteration_nb(
        np.ascontiguousarray(cost), float(beta), np.ascontiguousarray(idx),
        np.ascontiguousarray(wts), np.array(u0, dtype=float), float(tol), int(max_iter),
    )


# --- min-plus product -------------------------------------------------


def _minplus_loops(a, b, cap):
    n, p = a.shape
    m = b.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = cap
        for k in range(p):
            aik = a[i, k]
            if aik >= cap:
                continue
            for j in range(m):
                bkj = b[k, j]
                if bkj >= cap:
                    continue
                s = aik + bkj
                if s < out[i, j]:
                    out[i, j] = s
    return out


_minplus_nb = njit(_minplus_loops)


def minplus_numpy(a, b, cap=CAP, block=64):
    # entries at or above the cap are unreachable: +inf while reducing
    a = np.where(a >= cap, np.inf, a)
    b = np.where(b >= cap, np.inf, b)
    n = a.shape[0]
    out = np.empty((n, b.shape[1]))
    for s in range(0, n, block):
        chunk = a[s:s + block, :, None] + b[None, :, :]
        out[s:s + block] = chunk.min(axis=1)
    np.minimum(out, cap, out=out)
    return out


def minplus_numba(a, b, cap=CAP):
    return _minplus_nb(np.ascontiguousarray(a, dtype=float), np.ascontiguousarray(b, dtype=float), float(cap))


if USE_NUMBA:
    bellman_sweep = bellman_sweep_numba
    value_iteration = value_iteration_numba
    minplus = minplus_numba
else:
    bellman_sweep = bellman_sweep_numpy
    value_iteration = value_iteration_numpy
    minplus = minplus_numpy
