"""Comparison regressors behind one interface.

Two baselines next to the GP: epsilon-insensitive support vector regression
with an RBF kernel (sequential pairwise dual optimization), and squared-loss
gradient-boosted regression trees. Both canonicalize the training row order
before fitting, so models are invariant to permutations of the input rows,
and both are deterministic given their seed (neither currently subsamples, so
the seed is reserved).

``LearnerSpec`` + :func:`fit_learner` / :func:`predict_batch` give the
experiment engine a learner-agnostic surface covering these two, the GP, and
a constant-mean debug learner.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _smo, _trees
from ._accel import blas_single_thread
from .errors import DataError, DimensionMismatch, NonFiniteInput
from .gpr import (
    GprConfig,
    GprModel,
    Standardizer,
    fit_gpr,
    predict_gpr_batch,
    predict_gpr_mean_batch,
)
from .seeding import derive_seed

SVR_DEFAULTS = {"C": 10.0, "epsilon": 0.01, "rbf_gamma": None}  # None -> 1/d
GBRT_DEFAULTS = {"n_trees": 300, "max_depth": 3, "learning_rate": 0.1,
                 "min_samples_leaf": 3}

LEARNER_NAMES = ("gpr", "svr", "gbrt", "constant")


@dataclass(frozen=True)
class SvrModel:
    support_vectors: np.ndarray  # standardized rows with nonzero coefficient
    dual_coeffs: np.ndarray      # same length as support_vectors
    bias: float
    rbf_gamma: float
    C: float
    epsilon: float
    in_std: Standardizer
    out_std: Standardizer
    kkt_violation: float = 0.0
    n_steps: int = 0

    def __post_init__(self):
        if np.any(np.abs(self.dual_coeffs) > self.C * (1 + 1e-12)):
            raise DataError("dual coefficients exceed the box constraint")


@dataclass(frozen=True)
class GbrtModel:
    trees: tuple                 # flat-array tuples (feat, thr, left, right, value)
    learning_rate: float
    base_prediction: float
    n_trees: int
    n_features: int = 1
    train_rmse_path: tuple = ()  # training RMSE after each boosting round

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise DataError("learning rate must lie in (0, 1]")


@dataclass(frozen=True)
class ConstantModel:
    """Debug learner: predicts the training-target mean everywhere."""

    mean: float
    n_features: int


def _validate_xy(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != len(y):
        raise DataError(f"{x.shape[0]} rows vs {len(y)} targets")
    if len(y) < 2:
        raise DataError("need at least 2 training points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("training data contains non-finite entries")
    return x, y


def _canonical_order(x, y):
    """Sort rows lexicographically by (features, target) for determinism."""
    keys = np.column_stack((x, y))
    order = np.lexsort(keys.T[::-1])
    return x[order], y[order]


def fit_svr(x, y, params: dict | None = None, seed: int = 0) -> SvrModel:
    """Solve the epsilon-insensitive dual by sequential pairwise optimization.

    Inputs and targets are standardized first; C, epsilon, and gamma apply in
    standardized units (gamma defaults to 1/d).
    """
    x, y = _validate_xy(x, y)
    x, y = _canonical_order(x, y)
    p = {**SVR_DEFAULTS, **(params or {})}
    c_box = float(p["C"])
    eps = float(p["epsilon"])
    if c_box <= 0 or eps < 0:
        raise DataError("need C > 0 and epsilon >= 0")

    in_std = Standardizer.fit(x)
    out_std = Standardizer.fit(y.reshape(-1, 1))
    xs = np.ascontiguousarray(in_std.transform(x))
    ys = (y - out_std.means[0]) / out_std.scales[0]
    gamma = float(p["rbf_gamma"]) if p["rbf_gamma"] else 1.0 / x.shape[1]

    with blas_single_thread():
        k = _smo.rbf_matrix(xs, xs, gamma)
        beta, bias, violation, steps = _smo.smo_solve(
            k, ys, c_box, eps, _smo.KKT_TOL, _smo.MAX_STEPS_FACTOR * len(ys))
    keep = np.abs(beta) > 0
    if not keep.any():  # keep one zero-weight row so prediction stays defined
        keep[0] = True
    return SvrModel(support_vectors=xs[keep], dual_coeffs=beta[keep], bias=float(bias),
                    rbf_gamma=gamma, C=c_box, epsilon=eps, in_std=in_std,
                    out_std=out_std, kkt_violation=float(violation), n_steps=int(steps))


def fit_gbrt(x, y, params: dict | None = None, seed: int = 0) -> GbrtModel:
    """Stagewise squared-loss boosting of depth-limited trees."""
    x, y = _validate_xy(x, y)
    x, y = _canonical_order(x, y)
    p = {**GBRT_DEFAULTS, **(params or {})}
    n_trees = int(p["n_trees"])
    max_depth = int(p["max_depth"])
    lr = float(p["learning_rate"])
    min_leaf = int(p["min_samples_leaf"])
    if n_trees < 0 or max_depth < 1 or min_leaf < 1:
        raise DataError("invalid boosting parameters")

    base = float(y.mean())
    pred = np.full(len(y), base)
    trees = []
    rmse_path = []
    xc = np.ascontiguousarray(x)
    for _ in range(n_trees):
        tree = _trees.build_tree(xc, y - pred, max_depth, min_leaf)
        pred = pred + lr * _trees.tree_predict(*tree, xc)
        trees.append(tree)
        rmse_path.append(float(np.sqrt(np.mean((y - pred) ** 2))))
    return GbrtModel(trees=tuple(trees), learning_rate=lr, base_prediction=base,
                     n_trees=n_trees, n_features=x.shape[1],
                     train_rmse_path=tuple(rmse_path))


def fit_constant(x, y, params: dict | None = None, seed: int = 0) -> ConstantModel:
    x, y = _validate_xy(x, y)
    return ConstantModel(mean=float(y.mean()), n_features=x.shape[1])


def _query_matrix(xstar, d, what):
    xq = np.atleast_2d(np.asarray(xstar, dtype=float))
    if xq.shape[1] != d:
        raise DimensionMismatch(f"query dim {xq.shape[1]}, {what} expects {d}")
    if not np.all(np.isfinite(xq)):
        raise NonFiniteInput("query contains non-finite entries")
    return xq


def predict_batch(model, xstar) -> np.ndarray:
    """Point predictions in target units for any fitted model type."""
    if isinstance(model, GprModel):
        return predict_gpr_mean_batch(model, xstar)
    if isinstance(model, SvrModel):
        xq = _query_matrix(xstar, model.in_std.means.shape[0], "SVR model")
        xqs = np.ascontiguousarray(model.in_std.transform(xq))
        k = _smo.rbf_matrix(xqs, np.ascontiguousarray(model.support_vectors),
                            model.rbf_gamma)
        raw = k @ model.dual_coeffs + model.bias
        return model.out_std.means[0] + model.out_std.scales[0] * raw
    if isinstance(model, GbrtModel):
        xq = _query_matrix(xstar, model.n_features, "GBRT model")
        out = np.full(xq.shape[0], model.base_prediction)
        xc = np.ascontiguousarray(xq)
        for tree in model.trees:
            out += model.learning_rate * _trees.tree_predict(*tree, xc)
        return out
    if isinstance(model, ConstantModel):
        xq = _query_matrix(xstar, model.n_features, "constant model")
        return np.full(xq.shape[0], model.mean)
    raise DataError(f"unknown model type {type(model).__name__}")


def predict(model, xstar) -> float:
    """Point prediction at a single query vector."""
    return float(predict_batch(model, np.atleast_2d(np.asarray(xstar, dtype=float)))[0])


def predict_std_batch(model, xstar):
    """Predictive standard deviations where available (GP only), else None."""
    if isinstance(model, GprModel):
        return np.sqrt(predict_gpr_batch(model, xstar)[1])
    return None


@dataclass(frozen=True)
class LearnerSpec:
    """Name + hyperparameters, the unit the experiment engine works with."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in LEARNER_NAMES:
            raise DataError(f"unknown learner {self.name!r}; pick from {LEARNER_NAMES}")


def fit_learner(spec: LearnerSpec, x, y, seed: int = 0):
    """Train the learner named by the spec; deterministic given the seed."""
    if spec.name == "gpr":
        allowed = ("n_starts", "n_optimized_starts", "include_noise_variance",
                   "noise_floor", "max_opt_iter", "standardize")
        unknown = set(spec.params) - set(allowed)
        if unknown:
            raise DataError(f"unknown gpr parameter(s): {sorted(unknown)}")
        cfg = GprConfig(seed=derive_seed(seed, "gpr"), **spec.params)
        return fit_gpr(x, y, cfg)
    if spec.name == "svr":
        return fit_svr(x, y, spec.params, seed)
    if spec.name == "gbrt":
        return fit_gbrt(x, y, spec.params, seed)
    return fit_constant(x, y, spec.params, seed)
