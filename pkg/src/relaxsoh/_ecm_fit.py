"""Levenberg-Marquardt fit of the two-branch RC relaxation model.

The rest-period terminal voltage is

    U(t) = OCV - I*R1*exp(-t/(R1*C1)) - I*R2*exp(-t/(R2*C2))

with I the (signed) CV cutoff current. Five parameters are fitted: OCV stays
unconstrained, R1, C1, R2, C2 are optimized in log-space to enforce
positivity. The solver parameter vector is therefore

    theta = [OCV, log R1, log C1, log R2, log C2].

``lm_fit`` is the hot kernel: one damped Gauss-Newton descent from one start,
self-contained so the identical source runs compiled (numba) or interpreted
(the numpy fallback); see ``_accel``. Multi-start orchestration lives in
:func:`fit_curve_params`.
"""

import numpy as np

from ._accel import USE_NUMBA, maybe_njit

# status codes returned by lm_fit
CONVERGED_RSS = 0  # relative RSS improvement below tolerance
STALLED = 1        # no damping level yields a downhill step (at a minimum or a float floor)
HIT_CAP = 2        # iteration cap reached while still improving

MAX_ITER = 500
REL_RSS_TOL = 1e-10
# Cap-hitting starts count as converged when the residual is nearly orthogonal
# to every jacobian column: |J'r|_inf <= rtol * sqrt(rss) * max col norm. The
# normalized quantity is a cosine, so rtol bounds the attainable relative RSS
# improvement by ~rtol^2; 1e-3 tolerates the flat tau-valleys of noisy fits
# whose slow branch is only weakly identified inside the sampling window.
GRAD_RTOL = 1e-3

N_RESTARTS = 5  # jittered restarts on top of the heuristic base start

# Observability box for the time constants, relative to the sampling window:
# beyond ~3x the last sample time an exponential deviates from affine drift by
# ~1% of its amplitude (sub-noise for realistic sensing), and below ~1/50 of
# the first sample time it has already died; unbounded fits creep forever
# along these unidentifiable rays and steal amplitude from the observed OCV.
TAU_MAX_WINDOWS = 3.0
TAU_MIN_FIRST_FRACTION = 1.0 / 50.0


def _lm_fit_impl(t, v, current_A, theta0, max_iter, rel_tol, tau_log_min,
                 tau_log_max):
    n = t.shape[0]
    theta = theta0.copy()
    jac = np.empty((n, 5))
    jac_try = np.empty((n, 5))

    # residuals and jacobian at the start
    ocv = theta[0]
    r1 = np.exp(theta[1])
    c1 = np.exp(theta[2])
    r2 = np.exp(theta[3])
    c2 = np.exp(theta[4])
    u1 = t / (r1 * c1)
    u2 = t / (r2 * c2)
    a1 = -current_A * r1 * np.exp(-u1)
    a2 = -current_A * r2 * np.exp(-u2)
    resid = (ocv + a1 + a2) - v
    jac[:, 0] = 1.0
    jac[:, 1] = a1 * (1.0 + u1)
    jac[:, 2] = a1 * u1
    jac[:, 3] = a2 * (1.0 + u2)
    jac[:, 4] = a2 * u2
    rss = np.dot(resid, resid)

    lam = 1e-3
    status = HIT_CAP
    for _ in range(max_iter):
        grad = np.dot(jac.T, resid)
        jtj = np.dot(jac.T, jac)
        damp = np.maximum(np.diag(jtj), 1e-12)
        stepped = False
        rss_new = rss
        for _ in range(35):
            a = jtj + lam * np.diag(damp)
            delta = np.linalg.solve(a, -grad)
            theta_try = theta + delta
            # keep logs exp-safe: 0*inf NaNs would otherwise poison the jacobian
            theta_try[0] = min(max(theta_try[0], -1e6), 1e6)
            for j in range(1, 5):
                theta_try[j] = min(max(theta_try[j], -60.0), 60.0)
            # project the time constants into the observability box; the
            # capacitance absorbs the bound so the branch amplitude is kept
            for j in (1, 3):
                tau_log = theta_try[j] + theta_try[j + 1]
                if tau_log > tau_log_max:
                    theta_try[j + 1] = tau_log_max - theta_try[j]
                elif tau_log < tau_log_min:
                    theta_try[j + 1] = tau_log_min - theta_try[j]

            ocv = theta_try[0]
            r1 = np.exp(theta_try[1])
            c1 = np.exp(theta_try[2])
            r2 = np.exp(theta_try[3])
            c2 = np.exp(theta_try[4])
            u1 = t / (r1 * c1)
            u2 = t / (r2 * c2)
            a1 = -current_A * r1 * np.exp(-u1)
            a2 = -current_A * r2 * np.exp(-u2)
            resid_try = (ocv + a1 + a2) - v
            rss_try = np.dot(resid_try, resid_try)

            if rss_try < rss:
                theta = theta_try
                resid = resid_try
                jac_try[:, 0] = 1.0
                jac_try[:, 1] = a1 * (1.0 + u1)
                jac_try[:, 2] = a1 * u1
                jac_try[:, 3] = a2 * (1.0 + u2)
                jac_try[:, 4] = a2 * u2
                jac, jac_try = jac_try, jac
                rss_new = rss_try
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                break
            lam = min(lam * 10.0, 1e14)
        if not stepped:
            status = STALLED
            break
        improvement = (rss - rss_new) / max(rss, 1e-300)
        rss = rss_new
        if improvement < rel_tol:
            status = CONVERGED_RSS
            break
    grad_inf = np.max(np.abs(np.dot(jac.T, resid)))
    grad_scale = np.sqrt(np.max(np.sum(jac * jac, axis=0)))
    return theta, rss, grad_inf, grad_scale, status


# Same source both ways: compiled when acceleration is on, plain numpy otherwise.
_lm_fit_jit = maybe_njit(cache=True, nogil=True)(_lm_fit_impl)
lm_fit = _lm_fit_jit if USE_NUMBA else _lm_fit_impl


def _tau_screen(t, v, current_A, n_tau=7):
    """Coarse screen over (tau1, tau2): best linear-in-amplitudes gridpoint.

    For fixed time constants the model is linear in (OCV, A1, A2) with
    A_i = -I*R_i, so each gridpoint costs one small least-squares solve. The
    winner seeds one LM start right inside the global basin. Amplitudes whose
    sign contradicts the current direction are floored.
    """
    t_last = float(t[-1])
    dt_first = float(t[1] - t[0]) if len(t) > 1 else float(t[0])
    tau1_grid = np.geomspace(max(dt_first / 10.0, 1e-3), t_last, n_tau)
    sign = 1.0 if current_A < 0 else -1.0  # expected amplitude sign
    ones = np.ones_like(t)
    best = None
    best_rss = np.inf
    for tau1 in tau1_grid:
        for tau2 in np.geomspace(2.0 * tau1, 3.0 * t_last, n_tau):
            if tau2 < 2.0 * tau1:
                continue
            m = np.column_stack((ones, np.exp(-t / tau1), np.exp(-t / tau2)))
            coef, _, _, _ = np.linalg.lstsq(m, v, rcond=None)
            resid = m @ coef - v
            rss = float(resid @ resid)
            if rss < best_rss:
                best_rss = rss
                best = (float(coef[0]), float(coef[1]), float(coef[2]), tau1, tau2)
    ocv, a1, a2, tau1, tau2 = best
    r1 = max(sign * a1, 1e-9) / abs(current_A)
    r2 = max(sign * a2, 1e-9) / abs(current_A)
    return np.array([ocv, np.log(r1), np.log(tau1 / r1), np.log(r2), np.log(tau2 / r2)])


def build_starts(t, v, current_A, seed, n_restarts=N_RESTARTS):
    """Solver-space start matrix: base heuristic, tau screen, jittered anchors.

    Start 0 is the plain heuristic: OCV at the last sample, the observed
    relaxation amplitude split evenly between branches, time constants at
    (t_last/10, t_last/2). Start 1 comes from the tau screen. The remaining
    restarts jitter amplitude split, OCV, and time constants around anchors
    spread down to a fraction of the first sampling interval, so fast branches
    stay reachable. Deterministic given the seed.
    """
    t_last = float(t[-1])
    dt_first = float(t[1] - t[0]) if len(t) > 1 else float(t[0])
    drop = float(v[0] - v[-1])  # positive for a charging (I < 0) rest
    total_r = -drop / current_A  # R1 + R2 consistent with the observed amplitude
    total_r = max(total_r, 1e-8)
    ocv0 = float(v[-1])

    anchors = [
        (0.5 * dt_first, t_last / 3.0),
        (dt_first, t_last),
        (t_last / 30.0, 0.2 * t_last),
        (t_last / 6.0, 0.9 * t_last),
        (0.25 * dt_first, 0.5 * t_last),
    ]
    n_starts = 2 + n_restarts
    while len(anchors) < n_starts - 2:
        anchors.extend(anchors)
    rng = np.random.default_rng(seed)
    starts = np.empty((n_starts, 5))

    starts[0, 0] = ocv0
    r_half = max(0.5 * total_r, 1e-9)
    starts[0, 1] = starts[0, 3] = np.log(r_half)
    starts[0, 2] = np.log(0.1 * t_last / r_half)
    starts[0, 4] = np.log(0.5 * t_last / r_half)

    starts[1] = _tau_screen(t, v, current_A)

    for k in range(2, n_starts):
        tau1, tau2 = anchors[k - 2]
        frac = rng.uniform(0.3, 0.7)
        ocv_jit = rng.normal(0.0, 0.1) * abs(drop)
        tau1 = max(tau1 * np.exp(rng.normal(0.0, 0.25)), 1e-3)
        tau2 = max(tau2 * np.exp(rng.normal(0.0, 0.25)), tau1 * 1.5)
        r1 = max(frac * total_r, 1e-9)
        r2 = max((1.0 - frac) * total_r, 1e-9)
        starts[k, 0] = ocv0 + ocv_jit
        starts[k, 1] = np.log(r1)
        starts[k, 2] = np.log(tau1 / r1)
        starts[k, 3] = np.log(r2)
        starts[k, 4] = np.log(tau2 / r2)
    return starts


def fit_curve_params(t, v, current_A, seed=0, n_restarts=N_RESTARTS,
                     max_iter=MAX_ITER, rel_tol=REL_RSS_TOL, grad_rtol=GRAD_RTOL):
    """Multi-start LM fit. Returns (theta_best, rss, n_converged, n_starts).

    A start counts as converged when it stops on the relative-RSS criterion,
    when it stalls (no damping level can descend, i.e. numerically
    stationary), or when it hits the cap with the gradient norm below the
    scale-aware tolerance. Only converged starts compete; lowest RSS wins.
    """
    t = np.ascontiguousarray(t, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    starts = build_starts(t, v, current_A, seed, n_restarts)
    tau_log_min = np.log(TAU_MIN_FIRST_FRACTION * max(t[0], 1e-12))
    tau_log_max = np.log(TAU_MAX_WINDOWS * t[-1])
    best_theta = None
    best_rss = np.inf
    n_converged = 0
    for k in range(starts.shape[0]):
        theta, rss, grad_inf, grad_scale, status = lm_fit(
            t, v, float(current_A), starts[k].copy(), max_iter, rel_tol,
            tau_log_min, tau_log_max)
        gtol = grad_rtol * np.sqrt(max(rss, 0.0)) * grad_scale + 1e-15
        ok = status in (CONVERGED_RSS, STALLED) or grad_inf <= gtol
        if not ok:
            continue
        n_converged += 1
        if rss < best_rss:
            best_rss = rss
            best_theta = theta
    return best_theta, best_rss, n_converged, starts.shape[0]
