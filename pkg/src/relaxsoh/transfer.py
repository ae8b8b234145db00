"""Transfer learning between battery types.

Three schemes on top of a source-domain (SD) model plus the two baselines:

* ``tl1`` augmentation: one model trained on SD and TD data pooled together.
* ``tl2`` feature transfer: a per-feature affine map x' = w * x + b chosen to
  minimize the SD model's RMSE on the target data (derivative-free coordinate
  search from the identity; the identity is kept as a fallback, so the
  returned transform is never worse on the tuning data).
* ``tl3`` delta learning: a correction model of the same learner family is
  trained on the SD model's target-domain residuals; predictions add base
  and correction.
* ``zsl``: the SD model applied as-is. ``no_tl``: trained on the sparse
  target data only.

Target-domain training sets are built by :func:`construct_td`: a seeded
random choice of cells per condition, decimated to every ``cycle_stride``-th
cycle starting at cycle 1.
"""

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import DataError, DimensionMismatch, EmptyCondition
from .learners import LearnerSpec, fit_learner, predict_batch
from .seeding import derive_seed

TL_METHODS = ("zsl", "no_tl", "tl1", "tl2", "tl3")

TL2_MAX_SWEEPS = 200
TL2_REL_TOL = 1e-6
TL2_GOLDEN_ITERS = 24

# correction-model noise floor (standardized target units) for GP corrections
TL3_GPR_NOISE_FLOOR = 0.05


@dataclass(frozen=True)
class TdSpec:
    cycle_stride: int = 100
    cells_per_condition: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.cycle_stride < 1 or self.cells_per_condition < 1:
            raise DataError("stride and cells per condition must be >= 1")


@dataclass(frozen=True)
class FeatureTransform:
    """Per-feature affine map x' = w * x + b; (w=1, b=0) is the identity."""

    w: np.ndarray
    b: np.ndarray
    objective_trace: tuple = ()  # TD RMSE after each accepted improvement

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if w.shape != b.shape or w.ndim != 1:
            raise DimensionMismatch("w and b must be equal-length vectors")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    def apply(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.w):
            raise DimensionMismatch(f"{x.shape[1]} features vs transform of {len(self.w)}")
        return x * self.w + self.b

    @staticmethod
    def identity(d):
        return FeatureTransform(w=np.ones(d), b=np.zeros(d))


@dataclass(frozen=True)
class TransformedModel:
    """SD model consuming transformed features (the tl2 predictor)."""

    base: object
    transform: FeatureTransform


@dataclass(frozen=True)
class DeltaModel:
    """Base model plus residual correction (the tl3 predictor)."""

    base: object
    correction: object


def predict_any(model, x) -> np.ndarray:
    """Predictions for plain, transformed, and delta models alike."""
    if isinstance(model, TransformedModel):
        return predict_batch(model.base, model.transform.apply(x))
    if isinstance(model, DeltaModel):
        return predict_any(model.base, x) + predict_any(model.correction, x)
    return predict_batch(model, x)


def construct_td(target: Dataset, spec: TdSpec) -> Dataset:
    """Sparse target-domain training subset.

    Per condition (in sorted name order) a seeded uniform draw picks
    ``cells_per_condition`` cells (all of them if fewer exist); of each chosen
    cell only cycles 1, 1+stride, 1+2*stride, ... are kept.
    """
    if len(target) == 0:
        raise EmptyCondition("target dataset is empty")
    keys = []
    by_condition = target.cells_by_condition()
    for cond_idx, (cond, cells) in enumerate(by_condition.items()):
        rng = np.random.default_rng(derive_seed(spec.seed, "td", cond_idx))
        take = min(spec.cells_per_condition, len(cells))
        chosen = rng.choice(len(cells), size=take, replace=False)
        for ci in sorted(chosen):
            cell_id = cells[ci]
            for r in target.records_of_cell(cell_id):
                if (r.cycle_number - 1) % spec.cycle_stride == 0:
                    keys.append((cell_id, r.cycle_number))
    return target.subset_records(keys)


def zsl_predict(sd_model, x_target) -> np.ndarray:
    """Zero-shot: the SD-trained model applied to target features directly."""
    return predict_any(sd_model, x_target)


def no_tl(td_x, td_y, learner: LearnerSpec, seed: int = 0):
    """Baseline trained on the sparse target data alone."""
    return fit_learner(learner, td_x, td_y, seed=seed)


def tl1_augment(sd_x, sd_y, td_x, td_y, learner: LearnerSpec, seed: int = 0):
    """One model on the pooled SD + TD training data."""
    sd_x = np.atleast_2d(np.asarray(sd_x, dtype=float))
    td_x = np.atleast_2d(np.asarray(td_x, dtype=float))
    td_y = np.asarray(td_y, dtype=float).ravel()
    if len(td_y) == 0:
        return fit_learner(learner, sd_x, sd_y, seed=seed)
    if td_x.shape[1] != sd_x.shape[1]:
        raise DimensionMismatch(
            f"SD features have dim {sd_x.shape[1]}, TD features {td_x.shape[1]}")
    x = np.vstack([sd_x, td_x])
    y = np.concatenate([np.asarray(sd_y, dtype=float).ravel(), td_y])
    return fit_learner(learner, x, y, seed=seed)


def _td_rmse(sd_model, w, b, td_x, td_y):
    pred = predict_batch(sd_model, td_x * w + b)
    return float(np.sqrt(np.mean((td_y - pred) ** 2)))


def _golden_refine(fun, lo, hi, n_iters):
    """Golden-section minimization on [lo, hi]; returns (argmin, min)."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(n_iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def tl2_fit_transform(sd_model, td_x, td_y) -> FeatureTransform:
    """Affine feature map minimizing the SD model's RMSE on the target data.

    Coordinate-wise golden-section refinement over (w_j, b_j) starting from
    the identity, cycling until the TD-RMSE improvement of a full sweep drops
    below tolerance. Every coordinate update is accepted only if it improves,
    and the identity is returned if nothing does.
    """
    td_x = np.atleast_2d(np.asarray(td_x, dtype=float))
    td_y = np.asarray(td_y, dtype=float).ravel()
    if len(td_y) == 0:
        raise DataError("tl2 needs a non-empty target training set")
    d = td_x.shape[1]
    w = np.ones(d)
    b = np.zeros(d)
    # search window scale per feature: data spread, or 1 for constants
    span = np.std(td_x, axis=0)
    span = np.where(span > 0, span, 1.0)

    best = _td_rmse(sd_model, w, b, td_x, td_y)
    identity_rmse = best
    trace = [best]
    for _ in range(TL2_MAX_SWEEPS):
        sweep_start = best
        # shifts first with scales frozen, then scales: a pure shift is then
        # coordinate-separable and does not get absorbed into scale tweaks
        for which in ("b", "w"):
            for j in range(d):
                center = w[j] if which == "w" else b[j]
                half = 1.0 if which == "w" else span[j]

                def fun(val):
                    if which == "w":
                        w_try, b_try = w.copy(), b
                        w_try[j] = val
                    else:
                        w_try, b_try = w, b.copy()
                        b_try[j] = val
                    return _td_rmse(sd_model, w_try, b_try, td_x, td_y)

                arg, val = _golden_refine(fun, center - half, center + half,
                                          TL2_GOLDEN_ITERS)
                if val < best:
                    best = val
                    trace.append(best)
                    if which == "w":
                        w[j] = arg
                    else:
                        b[j] = arg
        if sweep_start - best < TL2_REL_TOL * max(sweep_start, 1e-12):
            break
    if best > identity_rmse:
        return FeatureTransform.identity(d)
    return FeatureTransform(w=w, b=b, objective_trace=tuple(trace))


def tl3_fit(sd_model, td_x, td_y, learner: LearnerSpec, seed: int = 0) -> DeltaModel:
    """Residual-correction model of the same learner family as the base."""
    td_x = np.atleast_2d(np.asarray(td_x, dtype=float))
    td_y = np.asarray(td_y, dtype=float).ravel()
    if len(td_y) == 0:
        raise DataError("tl3 needs a non-empty target training set")
    residuals = td_y - predict_any(sd_model, td_x)
    spec = learner
    if learner.name == "gpr":
        params = dict(learner.params)
        params["noise_floor"] = max(params.get("noise_floor", 0.0), TL3_GPR_NOISE_FLOOR)
        spec = LearnerSpec(name="gpr", params=params)
    correction = fit_learner(spec, td_x, residuals, seed=derive_seed(seed, "tl3"))
    return DeltaModel(base=sd_model, correction=correction)
