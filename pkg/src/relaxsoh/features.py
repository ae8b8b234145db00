"""Feature extraction from relaxation curves.

Three competing families:

* ``ORIGI`` - the sampled voltages verbatim,
* ``STATS`` - six moments of the voltages [Max, Mean, Min, Var, Ske, Kur],
* ``ECM``   - six circuit parameters [OCV, R0, R1, R2, C1, C2] identified by
  nonlinear least squares on the two-branch RC relaxation model.

Variance uses the n-1 denominator; skewness and excess kurtosis use the
plain 1/n moment ratios and are defined as 0 on (near-)constant input.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import _ecm_fit
from .dataset import RelaxationCurve
from .errors import (
    DataError,
    NegativeR0,
    NoConvergence,
    NonFiniteInput,
    TooFewSamples,
    ZeroCurrent,
)

FAMILIES = ("ECM", "STATS", "ORIGI")

ECM_FEATURE_NAMES = ("ocv_V", "r0_Ohm", "r1_Ohm", "r2_Ohm", "c1_F", "c2_F")
STATS_FEATURE_NAMES = ("max", "mean", "min", "var", "ske", "kur")

# |I * R_i| below this (volts) marks the branch as effectively absent
AMPLITUDE_EPSILON = 1e-5

# sample variance below this treats the series as constant for Ske/Kur
VAR_EPSILON = 1e-15


@dataclass(frozen=True)
class EcmParams:
    """Second-order RC parameters; branches stored with tau1 <= tau2."""

    ocv_V: float
    r0_Ohm: float
    r1_Ohm: float
    r2_Ohm: float
    c1_F: float
    c2_F: float
    fit_rss: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        if self.r0_Ohm < 0 or self.r1_Ohm < 0 or self.r2_Ohm < 0:
            raise DataError("resistances must be >= 0")
        if self.c1_F <= 0 or self.c2_F <= 0:
            raise DataError("capacitances must be > 0")
        if self.fit_rss < 0:
            raise DataError("fit_rss must be >= 0")
        if self.tau1_s > self.tau2_s:
            r1, c1, r2, c2 = self.r2_Ohm, self.c2_F, self.r1_Ohm, self.c1_F
            object.__setattr__(self, "r1_Ohm", r1)
            object.__setattr__(self, "c1_F", c1)
            object.__setattr__(self, "r2_Ohm", r2)
            object.__setattr__(self, "c2_F", c2)

    @property
    def tau1_s(self):
        return self.r1_Ohm * self.c1_F

    @property
    def tau2_s(self):
        return self.r2_Ohm * self.c2_F

    def as_feature_values(self):
        return np.array([self.ocv_V, self.r0_Ohm, self.r1_Ohm, self.r2_Ohm,
                         self.c1_F, self.c2_F])


@dataclass(frozen=True)
class FeatureVector:
    family: str
    values: np.ndarray
    relaxation_duration_s: float
    source: tuple = ("", 0)  # (cell_id, cycle_number)
    fit_rss: float | None = None
    degenerate: bool | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown feature family {self.family!r}")
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def relaxation_model_voltage(p: EcmParams, current_A: float, t):
    """Rest-period terminal voltage of the RC model at time(s) t (seconds).

    OCV - I*R1*exp(-t/(R1*C1)) - I*R2*exp(-t/(R2*C2)); the series resistance
    plays no role once the current is cut.
    """
    t = np.asarray(t, dtype=float)
    u = (p.ocv_V
         - current_A * p.r1_Ohm * np.exp(-t / (p.r1_Ohm * p.c1_F))
         - current_A * p.r2_Ohm * np.exp(-t / (p.r2_Ohm * p.c2_F)))
    return float(u) if u.ndim == 0 else u


def compute_r0(ut0_V: float, ocv_V: float, r1_Ohm: float, r2_Ohm: float,
               current_A: float) -> float:
    """Series resistance from the rest-start voltage: |ut0-OCV|/|I| - R1 - R2.

    Raises ``NegativeR0`` when the result is meaningfully negative (an
    inconsistent fit); a tiny negative from rounding is clamped to zero.
    """
    if current_A == 0:
        raise ZeroCurrent("cutoff current must be nonzero")
    value = abs(ut0_V - ocv_V) / abs(current_A) - r1_Ohm - r2_Ohm
    if value < -1e-12:
        raise NegativeR0(value)
    return max(value, 0.0)


def extract_origi(curve: RelaxationCurve, source=("", 0)) -> FeatureVector:
    """The sampled voltages themselves, order preserved."""
    return FeatureVector(family="ORIGI", values=curve.voltages_V.copy(),
                         relaxation_duration_s=float(curve.times_s[-1]), source=source)


def extract_stats(curve: RelaxationCurve, source=("", 0)) -> FeatureVector:
    """Six statistical moments of the voltages."""
    x = curve.voltages_V
    n = len(x)
    if n < 2:
        raise TooFewSamples(f"statistical features need >= 2 samples, got {n}")
    mean = float(np.mean(x))
    d = x - mean
    var = float(np.dot(d, d) / (n - 1))
    m2 = float(np.mean(d * d))
    if var < VAR_EPSILON:
        ske = 0.0
        kur = 0.0
    else:
        ske = float(np.mean(d**3) / m2**1.5)
        kur = float(np.mean(d**4) / m2**2 - 3.0)
    values = np.array([float(np.max(x)), mean, float(np.min(x)), var, ske, kur])
    return FeatureVector(family="STATS", values=values,
                         relaxation_duration_s=float(curve.times_s[-1]), source=source)


def fit_ecm(curve: RelaxationCurve, *, seed: int = 0) -> EcmParams:
    """Identify the circuit parameters of one relaxation curve.

    Multi-start damped Gauss-Newton on (OCV, log R1, log C1, log R2, log C2),
    lowest-RSS converged start wins; branches are swapped into tau1 <= tau2
    order. R0 comes from the fitted model's extrapolated rest-start voltage,
    so it carries no information beyond the fitted branches and is ~0 unless
    the curve itself stores a pre-rest sample. The fit is flagged degenerate
    when either branch amplitude |I*R_i| falls below ``AMPLITUDE_EPSILON`` or
    when R0 had to be clamped.
    """
    t = curve.times_s
    v = curve.voltages_V
    if len(t) < 6:
        raise TooFewSamples(
            f"identifying six circuit parameters needs >= 6 samples, got {len(t)}")
    current_A = curve.cutoff_current_A
    if current_A == 0:
        raise ZeroCurrent("cutoff current must be nonzero")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        raise NonFiniteInput("curve contains non-finite samples")

    theta, rss, n_converged, n_starts = _ecm_fit.fit_curve_params(t, v, current_A,
                                                                  seed=seed)
    if n_converged == 0:
        raise NoConvergence(
            f"no start converged within {_ecm_fit.MAX_ITER} iterations "
            f"({n_starts} starts)")

    ocv = float(theta[0])
    r1, c1 = float(np.exp(theta[1])), float(np.exp(theta[2]))
    r2, c2 = float(np.exp(theta[3])), float(np.exp(theta[4]))
    if r1 * c1 > r2 * c2:
        r1, c1, r2, c2 = r2, c2, r1, c1

    degenerate = (abs(current_A * r1) < AMPLITUDE_EPSILON
                  or abs(current_A * r2) < AMPLITUDE_EPSILON)
    ut0 = ocv - current_A * (r1 + r2)  # fitted model extrapolated to t = 0
    try:
        r0 = compute_r0(ut0, ocv, r1, r2, current_A)
    except NegativeR0:
        r0 = 0.0
        degenerate = True
    return EcmParams(ocv_V=ocv, r0_Ohm=r0, r1_Ohm=r1, r2_Ohm=r2, c1_F=c1, c2_F=c2,
                     fit_rss=float(rss), degenerate=degenerate)


def extract_ecm(curve: RelaxationCurve, source=("", 0), *, seed: int = 0) -> FeatureVector:
    """ECM parameters as a 6-vector [OCV, R0, R1, R2, C1, C2]."""
    params = fit_ecm(curve, seed=seed)
    return FeatureVector(family="ECM", values=params.as_feature_values(),
                         relaxation_duration_s=float(curve.times_s[-1]), source=source,
                         fit_rss=params.fit_rss, degenerate=params.degenerate)


def extract_features(curve: RelaxationCurve, family: str, source=("", 0), *,
                     seed: int = 0) -> FeatureVector:
    """Dispatch to the requested family's extractor."""
    if family == "ORIGI":
        return extract_origi(curve, source)
    if family == "STATS":
        return extract_stats(curve, source)
    if family == "ECM":
        return extract_ecm(curve, source, seed=seed)
    raise DataError(f"unknown feature family {family!r}")


def write_feature_table(features, path):
    """Write one family's feature vectors as a tabular text file.

    Columns: cell_id, cycle_number, family, relaxation_duration_s, fit_rss,
    degenerate, f1..fK. All vectors must share the family and dimension.
    """
    features = list(features)
    if not features:
        raise DataError("no feature vectors to write")
    family = features[0].family
    width = len(features[0].values)
    for fv in features:
        if fv.family != family or len(fv.values) != width:
            raise DataError("feature table requires a uniform family and dimension")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "cycle_number", "family", "relaxation_duration_s",
                         "fit_rss", "degenerate"] + [f"f{i + 1}" for i in range(width)])
        for fv in features:
            writer.writerow([fv.source[0], fv.source[1], fv.family,
                             repr(fv.relaxation_duration_s),
                             "" if fv.fit_rss is None else repr(fv.fit_rss),
                             "" if fv.degenerate is None else str(fv.degenerate).lower()]
                            + [repr(float(x)) for x in fv.values])
