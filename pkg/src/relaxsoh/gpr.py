"""Gaussian process regression with the ARD exponential kernel.

Exact inference: the posterior over a test point is obtained from the
Cholesky factorization of K(X, X) + sigma^2 I, and hyperparameters (noise
sigma, signal sigma, one length scale per feature) are selected by minimizing
the negative log marginal likelihood with analytic gradients from several
deterministic random starts. Inputs and targets are standardized by default,
which realizes the zero-mean prior; zero-variance input columns are dropped
(recorded in the model's feature mask) rather than rejected.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.optimize import minimize

from . import _ard
from ._accel import blas_single_thread
from .errors import (
    DataError,
    DataWarning,
    DimensionMismatch,
    NonFiniteInput,
    NotPositiveDefinite,
)
from .seeding import derive_seed

LOG_2PI = float(np.log(2.0 * np.pi))

# jitter ladder used when the factorization of K + sigma^2 I fails
JITTER_START = 1e-10
JITTER_MAX = 1e-4

# multi-start sampling boxes (standardized units)
START_LENGTH_SCALE = (0.1, 10.0)
START_SIGNAL_SIGMA = (0.1, 2.0)
START_NOISE_SIGMA = (1e-3, 0.5)


@dataclass(frozen=True)
class GprHyperparams:
    """Noise sigma, signal sigma, and one length scale per feature."""

    noise_sigma: float
    signal_sigma: float
    length_scales: np.ndarray

    def __post_init__(self):
        ls = np.asarray(self.length_scales, dtype=float)
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        if not (self.noise_sigma > 0 and self.signal_sigma > 0 and np.all(ls > 0)):
            raise DataError("hyperparameters must be strictly positive")

    def to_logvec(self):
        return np.concatenate(([np.log(self.noise_sigma), np.log(self.signal_sigma)],
                               np.log(self.length_scales)))

    @staticmethod
    def from_logvec(vec):
        vec = np.asarray(vec, dtype=float)
        return GprHyperparams(noise_sigma=float(np.exp(vec[0])),
                              signal_sigma=float(np.exp(vec[1])),
                              length_scales=np.exp(vec[2:]))


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.means, dtype=float))
        s = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if np.any(s <= 0):
            raise DataError("standardizer scales must be positive")
        m.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "scales", s)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.means) / self.scales

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scales + self.means

    @staticmethod
    def identity(d):
        return Standardizer(means=np.zeros(d), scales=np.ones(d))

    @staticmethod
    def fit(x):
        """Per-column standardizer; zero-spread columns get unit scale."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        means = x.mean(axis=0)
        scales = x.std(axis=0)
        scales = np.where(scales > 0, scales, 1.0)
        return Standardizer(means=means, scales=scales)


@dataclass(frozen=True)
class GprConfig:
    seed: int = 0
    n_starts: int = 8
    n_optimized_starts: int = 3  # starts kept after the initial-NLML screen
    standardize: bool = True
    include_noise_variance: bool = True  # predictive var = latent var + sigma^2
    fixed_hyper: GprHyperparams | None = None  # skip optimization when given
    noise_floor: float = 1e-6  # lower bound on noise sigma during optimization
    max_opt_iter: int = 60


@dataclass(frozen=True)
class GprModel:
    """Fitted model: standardizers, retained data, factorization, weights."""

    x_train: np.ndarray          # standardized, zero-variance columns removed
    y_train: np.ndarray          # standardized targets
    hyper: GprHyperparams
    chol_lower: np.ndarray
    alpha: np.ndarray
    in_std: Standardizer
    out_std: Standardizer
    feature_mask: np.ndarray     # boolean over the original feature columns
    include_noise_variance: bool = True
    jitter: float = 0.0
    start_nlmls: tuple = ()      # NLML at each optimizer start
    final_nlml: float = np.nan

    @property
    def n_train(self):
        return self.x_train.shape[0]


def kernel_ard_exp(xi, xj, h: GprHyperparams) -> float:
    """sf^2 * exp(-sqrt(sum_m ((xi_m - xj_m)/l_m)^2)) for two points."""
    xi = np.asarray(xi, dtype=float).ravel()
    xj = np.asarray(xj, dtype=float).ravel()
    if len(xi) != len(xj) or len(xi) != len(h.length_scales):
        raise DimensionMismatch(
            f"points of dim {len(xi)}/{len(xj)} vs {len(h.length_scales)} length scales")
    dd = (xi - xj) / h.length_scales
    return float(h.signal_sigma**2 * np.exp(-np.sqrt(np.dot(dd, dd))))


def _kernel_matrix(xa, xb, h: GprHyperparams):
    xa = np.ascontiguousarray(np.atleast_2d(xa), dtype=float)
    xb = np.ascontiguousarray(np.atleast_2d(xb), dtype=float)
    inv_ls = np.ascontiguousarray(1.0 / h.length_scales)
    return _ard.kernel_matrix(xa, xb, inv_ls, h.signal_sigma**2)


def _chol_with_jitter(k_noisy):
    """Lower Cholesky factor with an escalating diagonal jitter ladder."""
    try:
        return np.linalg.cholesky(k_noisy), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(k_noisy.shape[0])
    while jitter <= JITTER_MAX:
        try:
            return np.linalg.cholesky(k_noisy + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefinite(
        f"kernel matrix not positive definite even with jitter {JITTER_MAX}")


def _nlml_parts(x, y, h):
    """Factorization pieces shared by the NLML value and gradient."""
    k = _kernel_matrix(x, x, h)
    k_noisy = k + (h.noise_sigma**2) * np.eye(len(y))
    chol, jitter = _chol_with_jitter(k_noisy)
    alpha = solve_triangular(
        chol.T, solve_triangular(chol, y, lower=True, check_finite=False),
        lower=False, check_finite=False)
    value = (0.5 * float(np.dot(y, alpha))
             + float(np.sum(np.log(np.diag(chol))))
             + 0.5 * len(y) * LOG_2PI)
    return k, chol, alpha, jitter, value


def _inverse_from_cholesky(chol):
    """Full inverse of A from its lower Cholesky factor (LAPACK potri)."""
    inv, info = lapack.dpotri(chol, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"potri failed with info={info}")
    return inv + np.tril(inv, -1).T


def nlml(x, y, h: GprHyperparams) -> float:
    """Negative log marginal likelihood of the zero-mean GP."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != len(y) or len(y) < 1:
        raise DataError(f"{x.shape[0]} rows vs {len(y)} targets")
    return _nlml_parts(x, y, h)[4]


def nlml_and_grad(x, y, h: GprHyperparams):
    """NLML and its gradient w.r.t. [log sigma, log sigma_f, log l_1..d]."""
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    k, chol, alpha, _, value = _nlml_parts(x, y, h)
    k_inv = _inverse_from_cholesky(chol)
    w = k_inv - np.outer(alpha, alpha)
    inv_ls = np.ascontiguousarray(1.0 / h.length_scales)
    sum_wk, g_l = _ard.grad_pieces(x, inv_ls, k, w)
    g_noise = (h.noise_sigma**2) * float(np.trace(w))
    grad = np.concatenate(([g_noise, sum_wk], g_l))
    return value, grad


def _optimize_hyper(x, y, config):
    d = x.shape[1]
    rng = np.random.default_rng(derive_seed(config.seed, "gpr-starts"))
    lo = np.log([max(START_NOISE_SIGMA[0], config.noise_floor), START_SIGNAL_SIGMA[0]]
                + [START_LENGTH_SCALE[0]] * d)
    hi = np.log([max(START_NOISE_SIGMA[1], config.noise_floor), START_SIGNAL_SIGMA[1]]
                + [START_LENGTH_SCALE[1]] * d)
    starts = rng.uniform(lo, hi, size=(config.n_starts, d + 2))

    bounds = ([(np.log(max(config.noise_floor, 1e-8)), np.log(10.0)),
               (np.log(1e-4), np.log(1e3))]
              + [(np.log(1e-3), np.log(1e4))] * d)

    def objective(logvec):
        h = GprHyperparams.from_logvec(logvec)
        try:
            return nlml_and_grad(x, y, h)
        except NotPositiveDefinite:
            return 1e12, np.zeros_like(logvec)

    # screen all starts by their initial NLML, then fully optimize the best few
    start_vals = [objective(starts[k])[0] for k in range(config.n_starts)]
    order = np.argsort(start_vals, kind="stable")
    keep = order[:max(1, min(config.n_optimized_starts, config.n_starts))]

    best_vec = starts[order[0]]
    best_val = start_vals[order[0]]
    for k in keep:
        res = minimize(objective, starts[k], jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": config.max_opt_iter})
        val, vec = (res.fun, res.x) if res.fun <= start_vals[k] else (start_vals[k],
                                                                      starts[k])
        if val < best_val:
            best_val = val
            best_vec = vec
    return GprHyperparams.from_logvec(best_vec), tuple(start_vals), float(best_val)


def fit_gpr(x, y, config: GprConfig | None = None) -> GprModel:
    """Standardize, select hyperparameters by NLML, factorize, store weights."""
    config = config or GprConfig()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != len(y):
        raise DataError(f"{x.shape[0]} rows vs {len(y)} targets")
    if len(y) < 2:
        raise DataError("need at least 2 training points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("training data contains non-finite entries")

    spread = x.max(axis=0) - x.min(axis=0)
    feature_mask = spread > 0
    if not feature_mask.any():
        raise DataError("every feature column is constant")
    if not feature_mask.all():
        dropped = np.flatnonzero(~feature_mask)
        warnings.warn(f"dropping zero-variance feature column(s) {dropped.tolist()}",
                      DataWarning, stacklevel=2)
    xm = x[:, feature_mask]

    if config.standardize:
        in_std = Standardizer.fit(xm)
        out_std = Standardizer.fit(y.reshape(-1, 1))
    else:
        in_std = Standardizer.identity(xm.shape[1])
        out_std = Standardizer.identity(1)
    xs = in_std.transform(xm)
    ys = (y - out_std.means[0]) / out_std.scales[0]

    with blas_single_thread():
        if config.fixed_hyper is not None:
            hyper = config.fixed_hyper
            if len(hyper.length_scales) != xs.shape[1]:
                raise DimensionMismatch(
                    f"{len(hyper.length_scales)} length scales for {xs.shape[1]} features")
            start_nlmls = ()
            final = nlml(xs, ys, hyper)
        else:
            hyper, start_nlmls, final = _optimize_hyper(xs, ys, config)

        k = _kernel_matrix(xs, xs, hyper)
        chol, jitter = _chol_with_jitter(k + hyper.noise_sigma**2 * np.eye(len(ys)))
        alpha = solve_triangular(chol.T, solve_triangular(chol, ys, lower=True),
                                 lower=False)
    return GprModel(x_train=xs, y_train=ys, hyper=hyper, chol_lower=chol, alpha=alpha,
                    in_std=in_std, out_std=out_std, feature_mask=feature_mask,
                    include_noise_variance=config.include_noise_variance,
                    jitter=jitter, start_nlmls=start_nlmls, final_nlml=final)


def _standardize_query(m: GprModel, xstar):
    xstar = np.atleast_2d(np.asarray(xstar, dtype=float))
    if xstar.shape[1] != len(m.feature_mask):
        raise DimensionMismatch(
            f"query dim {xstar.shape[1]}, model expects {len(m.feature_mask)}")
    if not np.all(np.isfinite(xstar)):
        raise NonFiniteInput("query contains non-finite entries")
    return m.in_std.transform(xstar[:, m.feature_mask])


def predict_gpr_mean_batch(m: GprModel, xstar):
    """Posterior means only (no variance solves), in target units."""
    xq = _standardize_query(m, xstar)
    kstar = _kernel_matrix(xq, m.x_train, m.hyper)
    return m.out_std.means[0] + m.out_std.scales[0] * (kstar @ m.alpha)


def predict_gpr_batch(m: GprModel, xstar):
    """Posterior means and variances for a batch, in target units."""
    xq = _standardize_query(m, xstar)
    kstar = _kernel_matrix(xq, m.x_train, m.hyper)  # (q, n)
    mean_std = kstar @ m.alpha
    v = solve_triangular(m.chol_lower, kstar.T, lower=True)  # (n, q)
    var_std = m.hyper.signal_sigma**2 - np.einsum("ij,ij->j", v, v)
    if m.include_noise_variance:
        var_std = var_std + m.hyper.noise_sigma**2
    var_std = np.maximum(var_std, 0.0)
    scale = m.out_std.scales[0]
    return m.out_std.means[0] + scale * mean_std, (scale**2) * var_std


def predict_gpr(m: GprModel, xstar):
    """Posterior (mean, variance) at one point, in target units."""
    mean, var = predict_gpr_batch(m, np.atleast_2d(np.asarray(xstar, dtype=float)))
    return float(mean[0]), float(var[0])


def with_noise_floor(config: GprConfig, floor: float) -> GprConfig:
    """Copy of the config whose optimizer keeps noise sigma >= floor."""
    return replace(config, noise_floor=max(config.noise_floor, floor))
