"""Sequential pairwise optimization of the epsilon-insensitive SVR dual.

Working in the signed coefficients beta_a = alpha_a - alpha_a^* (one per
training point), the dual is the convex box-constrained problem

    minimize  1/2 beta' K beta - y' beta + eps * |beta|_1
    s.t.      sum(beta) = 0,  -C <= beta_a <= C.

Each step picks the maximal violating pair (steepest feasible one-sided
derivatives), solves the one-dimensional piecewise-quadratic subproblem on
the pair exactly, and updates the cached smooth gradient in O(n). The loop
stops when the duality-style violation drops below the KKT tolerance.

Both paths (numba loop kernel / numpy fallback) share this module; the RBF
kernel matrix builder lives here too.
"""

import numpy as np

from ._accel import USE_NUMBA, maybe_njit

KKT_TOL = 1e-6
MAX_STEPS_FACTOR = 2000  # iteration cap = factor * n


def _rbf_matrix_loops(xa, xb, gamma):
    na = xa.shape[0]
    nb = xb.shape[0]
    d = xa.shape[1]
    out = np.empty((na, nb))
    for i in range(na):
        for j in range(nb):
            s = 0.0
            for m in range(d):
                dd = xa[i, m] - xb[j, m]
                s += dd * dd
            out[i, j] = np.exp(-gamma * s)
    return out


def _rbf_matrix_numpy(xa, xb, gamma):
    diff = xa[:, None, :] - xb[None, :, :]
    return np.exp(-gamma * np.einsum("ijk,ijk->ij", diff, diff))


def _pair_step(eta, dgrad, bi, bj, eps, t_max):
    """Exact minimizer over t in [0, t_max] of the pair's 1-D objective.

    phi(t) = 1/2 eta t^2 + dgrad * t + eps(|bi + t| - |bi|) + eps(|bj - t| - |bj|)
    phi is convex piecewise quadratic with breakpoints where bi + t or bj - t
    cross zero; walk the segments until the derivative turns non-negative.
    """
    # segment boundaries within (0, t_max)
    b1 = -bi if (bi < 0.0) and (-bi < t_max) else t_max
    b2 = bj if (bj > 0.0) and (bj < t_max) else t_max
    lo = 0.0
    for _ in range(3):
        hi = t_max
        if b1 > lo and b1 < hi:
            hi = b1
        if b2 > lo and b2 < hi:
            hi = b2
        mid = 0.5 * (lo + hi)
        s_i = 1.0 if bi + mid >= 0.0 else -1.0
        s_j = 1.0 if bj - mid > 0.0 else -1.0
        slope_lo = eta * lo + dgrad + eps * s_i - eps * s_j
        if slope_lo >= 0.0:
            return lo
        if eta > 0.0:
            t_star = -(dgrad + eps * s_i - eps * s_j) / eta
            if t_star <= hi:
                return max(t_star, lo)
        if hi >= t_max:
            return t_max
        lo = hi
    return t_max


def _smo_solve_impl(k, y, c_box, eps, tol, max_steps):
    n = y.shape[0]
    beta = np.zeros(n)
    grad = -y.copy()  # gradient of the smooth part: K beta - y
    steps = 0
    violation = np.inf
    while steps < max_steps:
        # maximal violating pair on the one-sided derivatives
        best_up = np.inf
        best_dn = -np.inf
        i = -1
        j = -1
        for a in range(n):
            ba = beta[a]
            if ba < c_box:
                g_up = grad[a] + (eps if ba >= 0.0 else -eps)
                if g_up < best_up:
                    best_up = g_up
                    i = a
            if ba > -c_box:
                g_dn = grad[a] + (eps if ba > 0.0 else -eps)
                if g_dn > best_dn:
                    best_dn = g_dn
                    j = a
        violation = best_dn - best_up
        if violation <= tol or i == j or i < 0 or j < 0:
            break
        eta = k[i, i] + k[j, j] - 2.0 * k[i, j]
        t_max = min(c_box - beta[i], beta[j] + c_box)
        t = _pair_step(max(eta, 0.0), grad[i] - grad[j], beta[i], beta[j], eps, t_max)
        if t <= 0.0:
            break
        beta[i] += t
        beta[j] -= t
        for a in range(n):
            grad[a] += t * (k[a, i] - k[a, j])
        steps += 1
    # multiplier interval midpoint gives the bias
    best_up = np.inf
    best_dn = -np.inf
    for a in range(n):
        ba = beta[a]
        if ba < c_box:
            g_up = grad[a] + (eps if ba >= 0.0 else -eps)
            if g_up < best_up:
                best_up = g_up
        if ba > -c_box:
            g_dn = grad[a] + (eps if ba > 0.0 else -eps)
            if g_dn > best_dn:
                best_dn = g_dn
    bias = -0.5 * (best_up + best_dn)
    return beta, bias, violation, steps


def _smo_solve_numpy(k, y, c_box, eps, tol, max_steps):
    n = y.shape[0]
    beta = np.zeros(n)
    grad = -y.copy()
    steps = 0
    violation = np.inf
    while steps < max_steps:
        g_up = grad + np.where(beta >= 0.0, eps, -eps)
        g_dn = grad + np.where(beta > 0.0, eps, -eps)
        g_up = np.where(beta < c_box, g_up, np.inf)
        g_dn = np.where(beta > -c_box, g_dn, -np.inf)
        i = int(np.argmin(g_up))
        j = int(np.argmax(g_dn))
        violation = g_dn[j] - g_up[i]
        if violation <= tol or i == j:
            break
        eta = k[i, i] + k[j, j] - 2.0 * k[i, j]
        t_max = min(c_box - beta[i], beta[j] + c_box)
        t = _pair_step(max(eta, 0.0), grad[i] - grad[j], beta[i], beta[j], eps, t_max)
        if t <= 0.0:
            break
        beta[i] += t
        beta[j] -= t
        grad += t * (k[:, i] - k[:, j])
        steps += 1
    g_up = grad + np.where(beta >= 0.0, eps, -eps)
    g_dn = grad + np.where(beta > 0.0, eps, -eps)
    bias = -0.5 * (float(np.min(np.where(beta < c_box, g_up, np.inf)))
                   + float(np.max(np.where(beta > -c_box, g_dn, -np.inf))))
    return beta, bias, violation, steps


# numba resolves the _pair_step global at compile time, so rebinding it to the
# compiled version first lets the same loop source serve both paths
_pair_step = maybe_njit(cache=True)(_pair_step)
_smo_solve_jit = maybe_njit(cache=True, nogil=True)(_smo_solve_impl)
_rbf_matrix_jit = maybe_njit(cache=True, nogil=True)(_rbf_matrix_loops)

rbf_matrix = _rbf_matrix_jit if USE_NUMBA else _rbf_matrix_numpy
smo_solve = _smo_solve_jit if USE_NUMBA else _smo_solve_numpy


def dual_objective(k, y, beta, eps):
    """1/2 beta' K beta - y' beta + eps |beta|_1 (the minimized dual)."""
    return float(0.5 * beta @ k @ beta - y @ beta + eps * np.abs(beta).sum())
