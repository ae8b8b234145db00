"""Synthetic aging datasets with known ground truth.

Forward-simulates relaxation curves from circuit parameters and builds whole
datasets in which each cell's parameters drift monotonically with SOH:
resistances up, OCV and capacitances down. Cell-to-cell heterogeneity
perturbs each cell's drift endpoints by a seeded fraction of the drift range.
The generator returns the dataset together with a per-cycle ground-truth
sidecar, so downstream fits can be checked against known parameters.

Default magnitudes are test fixtures chosen to give relaxation amplitudes of
a few mV at the default cutoff current and time constants that are actually
identifiable on the default sampling grids.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import CellMeta, Dataset, RelaxationCurve, make_record
from .errors import DataError, InvalidProfile
from .features import EcmParams, relaxation_model_voltage
from .seeding import derive_seed

# parameters that must not decrease as the battery ages
INCREASING_PARAMS = ("r0_Ohm", "r1_Ohm", "r2_Ohm")
DECREASING_PARAMS = ("ocv_V", "c1_F", "c2_F")
PARAM_NAMES = ("ocv_V", "r0_Ohm", "r1_Ohm", "r2_Ohm", "c1_F", "c2_F")

DEFAULT_DOMAIN_SHIFT = 0.35  # relative parameter shift between the domain pair


@dataclass(frozen=True)
class DriftSpec:
    """Parameter value at SOH start and SOH end plus interpolation shape."""

    start: float
    end: float
    shape: str = "linear"  # or "exp" (geometric in the value)

    def __post_init__(self):
        if self.shape not in ("linear", "exp"):
            raise InvalidProfile(f"unknown drift shape {self.shape!r}")
        if self.shape == "exp" and (self.start <= 0 or self.end <= 0):
            raise InvalidProfile("exp drift needs positive endpoints")

    def value(self, progress):
        """Value at aging progress u in [0, 1] (0 = fresh, 1 = fully aged)."""
        if self.shape == "linear":
            return self.start + (self.end - self.start) * progress
        return self.start * (self.end / self.start) ** progress


# tau1: 60 -> 110 s, tau2: 450 -> 650 s. On the default 30 s x 119 grid the
# fast branch is caught by the early samples, the slow branch settles well
# inside the 3570 s window (so OCV is observed, not extrapolated), the
# separation stays >= 5.9, and branch amplitudes are 6-15 mV at the default
# current: well above the 0.5 mV default sensing noise.
DEFAULT_DRIFTS = {
    "ocv_V": DriftSpec(4.19, 4.17),
    "r0_Ohm": DriftSpec(0.020, 0.035),
    "r1_Ohm": DriftSpec(0.050, 0.110),
    "r2_Ohm": DriftSpec(0.055, 0.125),
    "c1_F": DriftSpec(1200.0, 1000.0),
    "c2_F": DriftSpec(8200.0, 5200.0),
}


@dataclass(frozen=True)
class AgingProfile:
    soh_start_pct: float = 100.0
    soh_end_pct: float = 80.0
    n_cycles: int = 30
    drifts: dict = field(default_factory=lambda: dict(DEFAULT_DRIFTS))
    noise_sigma_V: float = 0.0005
    heterogeneity: float = 0.0  # endpoint jitter as a fraction of the drift range
    interval_s: float = 120.0
    n_points: int = 14

    def __post_init__(self):
        if not (0 < self.soh_end_pct < self.soh_start_pct <= 110):
            raise InvalidProfile("need 0 < soh_end < soh_start <= 110")
        if self.n_cycles < 1 or self.n_points < 1 or self.interval_s <= 0:
            raise InvalidProfile("invalid cycle count or sampling grid")
        if self.noise_sigma_V < 0 or self.heterogeneity < 0:
            raise InvalidProfile("noise and heterogeneity must be >= 0")
        missing = set(PARAM_NAMES) - set(self.drifts)
        if missing:
            raise InvalidProfile(f"missing drift spec(s): {sorted(missing)}")
        for name in INCREASING_PARAMS:
            if self.drifts[name].end < self.drifts[name].start:
                raise InvalidProfile(f"{name} must not decrease with aging")
        for name in DECREASING_PARAMS:
            if self.drifts[name].end > self.drifts[name].start:
                raise InvalidProfile(f"{name} must not increase with aging")


@dataclass(frozen=True)
class ConditionSpec:
    temperature_C: float
    charge_rate_C: float
    discharge_rate_C: float
    profile: AgingProfile


@dataclass(frozen=True)
class SynthConfig:
    conditions: tuple
    cells_per_condition: int = 6
    dataset_id: str = "D1"
    nominal_capacity_Ah: float = 3.54
    cutoff_current_A: float = -0.177
    seed: int = 0

    def __post_init__(self):
        if not self.conditions:
            raise DataError("need at least one condition")
        if self.cells_per_condition < 1:
            raise DataError("need at least one cell per condition")


@dataclass(frozen=True)
class TruthRecord:
    cell_id: str
    cycle_number: int
    soh_pct: float
    params: EcmParams


@dataclass(frozen=True)
class SynthResult:
    dataset: Dataset
    truth: tuple  # TruthRecord per (cell, cycle), same order as dataset.records

    def truth_by_key(self):
        return {(t.cell_id, t.cycle_number): t for t in self.truth}


def gen_relaxation_curve(p: EcmParams, current_A, grid, noise_sigma_V=0.0,
                         seed=0) -> RelaxationCurve:
    """Forward-simulate one rest curve on grid = (interval_s, n_points).

    Samples sit at interval, 2*interval, ...; the rest-start instant itself is
    not stored. Gaussian voltage noise is seeded and i.i.d. per sample.
    """
    interval_s, n_points = grid
    if interval_s <= 0 or n_points < 1:
        raise DataError("grid needs a positive interval and at least one point")
    t = interval_s * np.arange(1, n_points + 1, dtype=float)
    v = relaxation_model_voltage(p, current_A, t)
    if noise_sigma_V > 0:
        v = v + np.random.default_rng(seed).normal(0.0, noise_sigma_V, size=n_points)
    return RelaxationCurve(times_s=t, voltages_V=v, cutoff_current_A=float(current_A))


def _cell_drifts(profile: AgingProfile, rng):
    """Per-cell drift specs: endpoints moved by a seeded fraction of the range.

    The z-scores are clipped to +-2 so the perturbed drift keeps its direction
    for heterogeneity scales up to ~0.2.
    """
    h = profile.heterogeneity
    out = {}
    for name in PARAM_NAMES:
        spec = profile.drifts[name]
        if h == 0:
            out[name] = spec
            continue
        z1, z2 = np.clip(rng.normal(0.0, 1.0, size=2), -2.0, 2.0)
        span = spec.end - spec.start
        out[name] = replace(spec, start=spec.start + h * z1 * span,
                            end=spec.end + h * z2 * span)
    return out


def gen_aging_dataset(cfg: SynthConfig) -> SynthResult:
    """Whole-dataset generation with ground-truth sidecar.

    Every cell of a condition follows the condition's profile; heterogeneity
    and measurement noise are drawn from per-cell seeded streams, so cells
    generate identically (and in parallel if desired) regardless of order.
    """
    records = []
    truth = []
    for cond_idx, cond in enumerate(cfg.conditions):
        profile = cond.profile
        for cell_idx in range(cfg.cells_per_condition):
            cell_id = f"{cfg.dataset_id}-C{cond_idx + 1}-{cell_idx + 1:02d}"
            cell = CellMeta(cell_id=cell_id, dataset_id=cfg.dataset_id,
                            temperature_C=cond.temperature_C,
                            charge_rate_C=cond.charge_rate_C,
                            discharge_rate_C=cond.discharge_rate_C,
                            nominal_capacity_Ah=cfg.nominal_capacity_Ah)
            cell_seed = derive_seed(cfg.seed, "cell", cond_idx, cell_idx)
            drifts = _cell_drifts(profile, np.random.default_rng(cell_seed))
            sohs = np.linspace(profile.soh_start_pct, profile.soh_end_pct,
                               profile.n_cycles)
            for cyc_idx, soh in enumerate(sohs):
                cycle = cyc_idx + 1
                u = ((profile.soh_start_pct - soh)
                     / (profile.soh_start_pct - profile.soh_end_pct))
                params = EcmParams(**{name: drifts[name].value(u)
                                      for name in PARAM_NAMES})
                curve = gen_relaxation_curve(
                    params, cfg.cutoff_current_A,
                    (profile.interval_s, profile.n_points),
                    profile.noise_sigma_V,
                    seed=derive_seed(cell_seed, "noise", cycle))
                capacity = cfg.nominal_capacity_Ah * soh / 100.0
                records.append(make_record(cell, cycle, capacity, curve))
                truth.append(TruthRecord(cell_id=cell_id, cycle_number=cycle,
                                         soh_pct=float(soh), params=params))
    truth = tuple(sorted(truth, key=lambda t: (t.cell_id, t.cycle_number)))
    return SynthResult(dataset=Dataset(tuple(records)), truth=truth)


def default_config(n_conditions=3, cells_per_condition=6, n_cycles=40,
                   noise_sigma_V=0.0005, heterogeneity=0.03, seed=0,
                   dataset_id="D3", interval_s=30.0, n_points=119,
                   nominal_capacity_Ah=2.5) -> SynthConfig:
    """Benchmark-style config: conditions occupy distinct parameter levels.

    The layout mirrors the blended-cathode sub-dataset: one temperature,
    discharge rates 1C/2C/4C, 30 s sampling over an hour of rest. Harder
    conditions sit at higher resistances / lower capacitances and age
    somewhat faster, so each condition forms its own coherent feature cluster
    while cells scatter inside the cluster via heterogeneity; this mirrors
    the vast across-condition feature variation of real datasets.
    """
    dchg_rates = (1.0, 2.0, 4.0, 3.0, 0.5)
    conditions = []
    for i in range(n_conditions):
        centered = (i - (n_conditions - 1) / 2) / max(n_conditions - 1, 1)
        # high conformity across conditions, as blended-cathode cells show:
        # mild level shifts and aging-rate differences only
        r_scale = 1.0 + 0.10 * centered     # harder cycling -> higher resistance
        c_scale = 1.0 - 0.06 * centered     # harder cycling -> lower capacitance
        stretch = 1.0 + 0.16 * centered     # harder cycling -> faster aging
        drifts = {}
        for name, spec in DEFAULT_DRIFTS.items():
            if name in INCREASING_PARAMS:
                base = replace(spec, start=spec.start * r_scale, end=spec.end * r_scale)
            elif name == "ocv_V":
                base = replace(spec, start=spec.start - 0.001 * centered,
                               end=spec.end - 0.001 * centered)
            else:
                base = replace(spec, start=spec.start * c_scale, end=spec.end * c_scale)
            drifts[name] = replace(base, end=base.start + (base.end - base.start) * stretch)
        profile = AgingProfile(n_cycles=n_cycles, drifts=drifts,
                               noise_sigma_V=noise_sigma_V,
                               heterogeneity=heterogeneity,
                               interval_s=interval_s, n_points=n_points)
        conditions.append(ConditionSpec(temperature_C=25.0, charge_rate_C=0.5,
                                        discharge_rate_C=dchg_rates[i % len(dchg_rates)],
                                        profile=profile))
    return SynthConfig(conditions=tuple(conditions),
                       cells_per_condition=cells_per_condition,
                       dataset_id=dataset_id,
                       nominal_capacity_Ah=nominal_capacity_Ah,
                       cutoff_current_A=-0.05 * nominal_capacity_Ah, seed=seed)


def domain_shift_pair(base: SynthConfig, shift: float = DEFAULT_DOMAIN_SHIFT,
                      td_dataset_id="D2", td_seed_offset=1):
    """Source/target config pair sharing structure with shifted drift endpoints.

    The target's resistances scale by (1 + shift), capacitances by
    1/(1 + shift), and OCV drops by shift * 50 mV, so target features land
    outside the source's feature range by an amount controlled by one scalar.
    """
    if shift < 0:
        raise DataError("shift must be >= 0")
    td_conditions = []
    for cond in base.conditions:
        drifts = {}
        for name, spec in cond.profile.drifts.items():
            if name in INCREASING_PARAMS:
                drifts[name] = replace(spec, start=spec.start * (1 + shift),
                                       end=spec.end * (1 + shift))
            elif name == "ocv_V":
                delta = shift * 0.05
                drifts[name] = replace(spec, start=spec.start - delta,
                                       end=spec.end - delta)
            else:
                drifts[name] = replace(spec, start=spec.start / (1 + shift),
                                       end=spec.end / (1 + shift))
        td_conditions.append(replace(cond, profile=replace(cond.profile, drifts=drifts)))
    td = replace(base, conditions=tuple(td_conditions), dataset_id=td_dataset_id,
                 seed=derive_seed(base.seed, "domain-shift", td_seed_offset))
    return base, td


def write_truth_sidecar(truth, path):
    """Ground-truth parameters per (cell, cycle) as a tabular text file."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "cycle_number", "soh_pct"] + list(PARAM_NAMES))
        for t in truth:
            writer.writerow([t.cell_id, t.cycle_number, repr(t.soh_pct)]
                            + [repr(getattr(t.params, n)) for n in PARAM_NAMES])


def read_truth_sidecar(path):
    """Inverse of :func:`write_truth_sidecar`."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            params = EcmParams(**{n: float(row[n]) for n in PARAM_NAMES})
            out.append(TruthRecord(cell_id=row["cell_id"],
                                   cycle_number=int(row["cycle_number"]),
                                   soh_pct=float(row["soh_pct"]), params=params))
    return tuple(out)
