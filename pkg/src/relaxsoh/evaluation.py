"""Experiment engine: metric, splits, repeats, sweeps, and reports.

The pipeline of one experiment is

    truncate -> extract features -> fit learner per split -> predict.

For repeated random splits a test sample's reported prediction is its average
over the repeats in which it landed in the test fold, and the headline RMSE
is computed on those averaged predictions; per-split RMSEs are kept
alongside. Everything is deterministic from the config seeds: split draws,
learner fits, and the ECM extraction each use seeds derived from the master
seed with a stable hash.

Reports serialize to a versioned JSON document whose stored RMSE can be
recomputed from its own per-sample rows; ``verify_report`` checks exactly
that. Plot-ready CSV tables (observed vs predicted, RMSE per group) are
derived from reports, and sweeps get a (duration, RMSE) summary table.
"""

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import Dataset, truncate_relaxation
from .errors import (
    DataError,
    EmptyInput,
    InsufficientCells,
    LengthMismatch,
    MissingTemperature,
    TooFewSamples,
    UnknownDatasetId,
)
from .features import extract_features
from .learners import LearnerSpec, fit_learner, predict_batch, predict_std_batch
from .seeding import derive_seed
from .transfer import (
    TL_METHODS,
    TdSpec,
    TransformedModel,
    construct_td,
    no_tl,
    predict_any,
    tl1_augment,
    tl2_fit_transform,
    tl3_fit,
)

REPORT_FORMAT = "relaxsoh-report"
REPORT_VERSION = 1

SPLIT_KINDS = ("default", "s1", "s2", "s3", "s4")
S4_TRAIN_FRACTION = 0.8

# conditions whose cells train the D3 default split
D3_TRAIN_CONDITIONS = ("CY25-0.5/1", "CY25-0.5/4")


def rmse(y, yhat) -> float:
    """Root mean squared error."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if len(y) != len(yhat):
        raise LengthMismatch(f"{len(y)} observations vs {len(yhat)} estimates")
    if len(y) == 0:
        raise EmptyInput("empty vectors")
    diff = y - yhat
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "default"
    ratio_train: float = 0.5          # s1/s2 only
    held_out_temp_C: float | None = None  # s3: one temperature, or None for all
    repeats: int | None = None        # defaults to 20 for s1/s2, 1 otherwise
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise DataError(f"unknown split kind {self.kind!r}; pick from {SPLIT_KINDS}")
        if not 0 < self.ratio_train < 1:
            raise DataError("ratio_train must lie in (0, 1)")
        if self.repeats is not None and self.repeats < 1:
            raise DataError("repeats must be >= 1")

    @property
    def effective_repeats(self) -> int:
        if self.repeats is not None:
            return self.repeats
        return 20 if self.kind in ("s1", "s2") else 1


@dataclass(frozen=True)
class Split:
    label: str
    train_keys: tuple  # (cell_id, cycle_number) pairs
    test_keys: tuple
    train_cells: tuple
    test_cells: tuple


def _cells_to_split(ds, train_cells, test_cells, label):
    train_cells = tuple(sorted(train_cells))
    test_cells = tuple(sorted(test_cells))
    train_keys = tuple((c, r.cycle_number) for c in train_cells
                       for r in ds.records_of_cell(c))
    test_keys = tuple((c, r.cycle_number) for c in test_cells
                      for r in ds.records_of_cell(c))
    return Split(label=label, train_keys=train_keys, test_keys=test_keys,
                 train_cells=train_cells, test_cells=test_cells)


def split_default(ds: Dataset, seed: int = 0) -> Split:
    """The paper-style default split.

    D1/D2: per condition, cells are split evenly at cell granularity (a
    seeded shuffle; odd counts give the extra cell to training). D3: one
    seeded random cell from each of the two named conditions trains, every
    other cell tests.
    """
    ids = ds.dataset_ids()
    if len(ids) != 1:
        raise UnknownDatasetId(f"default split needs a single sub-dataset, got {ids}")
    by_cond = ds.cells_by_condition()
    if ids[0] == "D3":
        train = []
        for cond in D3_TRAIN_CONDITIONS:
            if cond not in by_cond:
                raise InsufficientCells(f"D3 default split needs condition {cond}")
            cells = by_cond[cond]
            rng = np.random.default_rng(derive_seed(seed, "default-d3", cond))
            train.append(cells[int(rng.integers(len(cells)))])
        test = [c for c in ds.cell_ids() if c not in set(train)]
        return _cells_to_split(ds, train, test, "default")
    train, test = [], []
    for cond_idx, (cond, cells) in enumerate(by_cond.items()):
        rng = np.random.default_rng(derive_seed(seed, "default", cond_idx))
        perm = rng.permutation(len(cells))
        n_train = (len(cells) + 1) // 2  # extra cell to training
        train.extend(cells[i] for i in perm[:n_train])
        test.extend(cells[i] for i in perm[n_train:])
    return _cells_to_split(ds, train, test, "default")


def _ratio_splits(ds, groups, ratio, seed, repeats, kind):
    """Seeded cell-level ratio splits shared by s1 (per condition) and s2.

    Groups are lists of cell ids; the per-group seed depends on the group
    index only, so s1 on a single-condition dataset reproduces s2 exactly.
    """
    out = []
    for k in range(repeats):
        train, test = [], []
        for g_idx, cells in enumerate(groups):
            n = len(cells)
            n_train = int(np.ceil(ratio * n - 1e-9))
            if not 1 <= n_train <= n - 1:
                raise InsufficientCells(
                    f"group of {n} cell(s) cannot give both sides at ratio {ratio}")
            rng = np.random.default_rng(derive_seed(seed, "ratio", k, g_idx))
            perm = rng.permutation(n)
            train.extend(cells[i] for i in perm[:n_train])
            test.extend(cells[i] for i in perm[n_train:])
        out.append(_cells_to_split(ds, train, test, f"{kind}-r{k:02d}"))
    return out


def split_strategy(ds: Dataset, spec: SplitSpec) -> list:
    """Splits for one strategy; a list even when there is just one."""
    repeats = spec.effective_repeats
    if spec.kind == "default":
        return [split_default(ds, spec.seed)]
    if spec.kind == "s1":
        groups = list(ds.cells_by_condition().values())
        return _ratio_splits(ds, groups, spec.ratio_train, spec.seed, repeats, "s1")
    if spec.kind == "s2":
        groups = [list(ds.cell_ids())]
        return _ratio_splits(ds, groups, spec.ratio_train, spec.seed, repeats, "s2")
    if spec.kind == "s3":
        temps = sorted({c.temperature_C for c in ds.cells()})
        held = [spec.held_out_temp_C] if spec.held_out_temp_C is not None else temps
        out = []
        for t in held:
            if t not in temps:
                raise MissingTemperature(f"temperature {t} not present in the data")
            if len([x for x in temps if x != t]) < 2:
                raise InsufficientCells(
                    "leave-temperature-out needs >= 2 temperatures on the training side")
            train = [c.cell_id for c in ds.cells() if c.temperature_C != t]
            test = [c.cell_id for c in ds.cells() if c.temperature_C == t]
            out.append(_cells_to_split(ds, train, test, f"s3-T{t:g}"))
        return out
    # s4: first 80% of each cell's cycle-ordered records train, the rest test
    train_keys, test_keys = [], []
    for cell_id in ds.cell_ids():
        recs = ds.records_of_cell(cell_id)
        cut = int(np.floor(S4_TRAIN_FRACTION * len(recs)))
        train_keys.extend((cell_id, r.cycle_number) for r in recs[:cut])
        test_keys.extend((cell_id, r.cycle_number) for r in recs[cut:])
    cells = tuple(sorted(ds.cell_ids()))
    return [Split(label="s4", train_keys=tuple(train_keys), test_keys=tuple(test_keys),
                  train_cells=cells, test_cells=cells)]


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "ECM"
    learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("gpr"))
    split: SplitSpec = field(default_factory=SplitSpec)
    relaxation_duration_s: float | None = None  # None = full curves
    max_fit_rss: float | None = None  # optional ECM quality filter
    seed: int = 0
    jobs: int = 1


@dataclass(frozen=True)
class PredictionRow:
    cell_id: str
    cycle_number: int
    soh_observed: float
    soh_predicted: float
    predicted_std: float | None = None
    n_repeats: int = 1
    group: int | None = None  # transfer experiments: TD construction group


@dataclass(frozen=True)
class ExperimentReport:
    kind: str                 # "experiment" | "sweep-point" | "transfer"
    config_echo: dict
    rmse_pct: float
    rows: tuple
    per_split_rmse: dict      # label -> rmse of that split/group
    split_manifest: tuple     # one summary dict per split
    wall_time_s: float
    notes: dict = field(default_factory=dict)


def extract_feature_map(ds: Dataset, family: str, duration_s, seed: int,
                        max_fit_rss=None):
    """Features and labels for every record, keyed by (cell_id, cycle).

    Returns (features dict key -> 1-D array, soh dict, dropped list). ECM
    configurations are rejected up-front when any truncated curve has fewer
    than 6 samples; ORIGI requires one common dimension.
    """
    curves = {}
    for r in ds.records:
        key = (r.cell.cell_id, r.cycle_number)
        curve = r.curve
        if duration_s is not None:
            curve = truncate_relaxation(curve, duration_s)
        curves[key] = (curve, r.soh_pct)
    if family == "ECM":
        short = [k for k, (c, _) in curves.items() if len(c) < 6]
        if short:
            raise TooFewSamples(
                f"{len(short)} curve(s) keep fewer than 6 samples at this duration "
                f"(first: {short[0]}); circuit identification needs 6")
    feats, sohs, dropped = {}, {}, []
    for key, (curve, soh) in curves.items():
        fv = extract_features(curve, family, key,
                              seed=derive_seed(seed, "ecm", key[0], key[1]))
        if (max_fit_rss is not None and fv.fit_rss is not None
                and fv.fit_rss > max_fit_rss):
            dropped.append(key)
            continue
        feats[key] = fv.values
        sohs[key] = soh
    dims = {len(v) for v in feats.values()}
    if len(dims) > 1:
        raise DataError(f"inconsistent feature dimensions across records: {sorted(dims)}")
    return feats, sohs, dropped


def _split_manifest_entry(split: Split) -> dict:
    return {"label": split.label,
            "train_cells": list(split.train_cells),
            "test_cells": list(split.test_cells),
            "n_train_records": len(split.train_keys),
            "n_test_records": len(split.test_keys)}


def _config_echo(cfg: ExperimentConfig) -> dict:
    echo = asdict(cfg)
    echo["learner"] = {"name": cfg.learner.name, "params": dict(cfg.learner.params)}
    return echo


def _fit_and_predict(cfg, split, feats, sohs):
    train_keys = [k for k in split.train_keys if k in feats]
    test_keys = [k for k in split.test_keys if k in feats]
    if not train_keys or not test_keys:
        raise DataError(f"split {split.label}: empty train or test side after filtering")
    x_train = np.array([feats[k] for k in train_keys])
    y_train = np.array([sohs[k] for k in train_keys])
    x_test = np.array([feats[k] for k in test_keys])
    model = fit_learner(cfg.learner, x_train, y_train,
                        seed=derive_seed(cfg.seed, "fit", split.label))
    pred = predict_batch(model, x_test)
    std = predict_std_batch(model, x_test)
    return test_keys, pred, std


def run_experiment(cfg: ExperimentConfig, ds: Dataset) -> ExperimentReport:
    """Full pipeline for one configuration on one dataset."""
    t0 = time.perf_counter()
    feats, sohs, dropped = extract_feature_map(
        ds, cfg.family, cfg.relaxation_duration_s, cfg.seed, cfg.max_fit_rss)
    splits = split_strategy(ds, cfg.split)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(lambda s: _fit_and_predict(cfg, s, feats, sohs),
                                    splits))
    else:
        results = [_fit_and_predict(cfg, s, feats, sohs) for s in splits]

    sums, std_sums, counts = {}, {}, {}
    per_split_rmse = {}
    for split, (test_keys, pred, std) in zip(splits, results):
        per_split_rmse[split.label] = rmse([sohs[k] for k in test_keys], pred)
        for i, k in enumerate(test_keys):
            sums[k] = sums.get(k, 0.0) + float(pred[i])
            counts[k] = counts.get(k, 0) + 1
            if std is not None:
                std_sums[k] = std_sums.get(k, 0.0) + float(std[i])

    rows = []
    for k in sorted(counts):
        n = counts[k]
        rows.append(PredictionRow(
            cell_id=k[0], cycle_number=k[1], soh_observed=float(sohs[k]),
            soh_predicted=sums[k] / n,
            predicted_std=(std_sums[k] / n) if k in std_sums else None,
            n_repeats=n))
    headline = rmse([r.soh_observed for r in rows], [r.soh_predicted for r in rows])
    return ExperimentReport(
        kind="experiment", config_echo=_config_echo(cfg), rmse_pct=headline,
        rows=tuple(rows), per_split_rmse=per_split_rmse,
        split_manifest=tuple(_split_manifest_entry(s) for s in splits),
        wall_time_s=time.perf_counter() - t0,
        notes={"dropped_records": [list(k) for k in dropped]})


def relaxation_sweep(cfg: ExperimentConfig, ds: Dataset, durations_s) -> list:
    """One report per duration; seeds are shared so only truncation varies."""
    if not durations_s:
        raise EmptyInput("no durations given")
    reports = []
    for duration in durations_s:
        point = run_experiment(replace(cfg, relaxation_duration_s=float(duration)), ds)
        reports.append(replace(point, kind="sweep-point"))
    return reports


# -- transfer experiments ------------------------------------------------------


@dataclass(frozen=True)
class TransferConfig:
    method: str = "tl1"
    family: str = "ECM"
    learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("gpr"))
    td_spec: TdSpec = field(default_factory=TdSpec)
    groups: int = 1                      # 20 for the randomized-group protocol
    relaxation_duration_s: float | None = None
    max_fit_rss: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in TL_METHODS:
            raise DataError(f"unknown TL method {self.method!r}; pick from {TL_METHODS}")
        if self.groups < 1:
            raise DataError("groups must be >= 1")


def _transfer_group_model(tcfg, sd_model, sd_xy, td_train_xy, group_seed):
    sd_x, sd_y = sd_xy
    td_x, td_y = td_train_xy
    if tcfg.method == "zsl":
        return sd_model
    if tcfg.method == "no_tl":
        return no_tl(td_x, td_y, tcfg.learner, seed=group_seed)
    if tcfg.method == "tl1":
        return tl1_augment(sd_x, sd_y, td_x, td_y, tcfg.learner, seed=group_seed)
    if tcfg.method == "tl2":
        return TransformedModel(base=sd_model,
                                transform=tl2_fit_transform(sd_model, td_x, td_y))
    return tl3_fit(sd_model, td_x, td_y, tcfg.learner, seed=group_seed)


def run_transfer_experiment(tcfg: TransferConfig, sd_ds: Dataset,
                            td_ds: Dataset) -> ExperimentReport:
    """One TL method evaluated over seeded TD-construction groups.

    Per group, the sparse TD training subset is drawn with the group's seed;
    the evaluation set is the remaining target data (TD-train records are
    excluded for every method, so all methods score on identical samples).
    The headline RMSE is the mean of the per-group RMSEs.
    """
    t0 = time.perf_counter()
    sd_feats, sd_sohs, sd_dropped = extract_feature_map(
        sd_ds, tcfg.family, tcfg.relaxation_duration_s,
        derive_seed(tcfg.seed, "sd"), tcfg.max_fit_rss)
    td_feats, td_sohs, td_dropped = extract_feature_map(
        td_ds, tcfg.family, tcfg.relaxation_duration_s,
        derive_seed(tcfg.seed, "td"), tcfg.max_fit_rss)
    sd_keys = sorted(sd_feats)
    sd_x = np.array([sd_feats[k] for k in sd_keys])
    sd_y = np.array([sd_sohs[k] for k in sd_keys])

    sd_model = None
    if tcfg.method in ("zsl", "tl2", "tl3"):
        sd_model = fit_learner(tcfg.learner, sd_x, sd_y,
                               seed=derive_seed(tcfg.seed, "sd-model"))

    rows = []
    per_group_rmse = {}
    manifest = []
    for g in range(tcfg.groups):
        td_spec_g = replace(tcfg.td_spec,
                            seed=derive_seed(tcfg.td_spec.seed, "group", g))
        td_train = construct_td(td_ds, td_spec_g)
        train_keys = sorted(k for k in ((r.cell.cell_id, r.cycle_number)
                                        for r in td_train.records) if k in td_feats)
        test_keys = sorted(k for k in td_feats if k not in set(train_keys))
        if not train_keys and tcfg.method != "zsl":
            raise DataError("TD construction selected no usable records")
        if not test_keys:
            raise DataError("no target records left to evaluate on")
        td_x = np.array([td_feats[k] for k in train_keys]) if train_keys else \
            np.empty((0, sd_x.shape[1]))
        td_y = np.array([td_sohs[k] for k in train_keys])
        model = _transfer_group_model(tcfg, sd_model, (sd_x, sd_y), (td_x, td_y),
                                      derive_seed(tcfg.seed, "group-model", g))
        x_test = np.array([td_feats[k] for k in test_keys])
        pred = predict_any(model, x_test)
        label = f"group-{g:02d}"
        per_group_rmse[label] = rmse([td_sohs[k] for k in test_keys], pred)
        for i, k in enumerate(test_keys):
            rows.append(PredictionRow(
                cell_id=k[0], cycle_number=k[1], soh_observed=float(td_sohs[k]),
                soh_predicted=float(pred[i]), group=g))
        manifest.append({"label": label,
                         "td_train_keys": [list(k) for k in train_keys],
                         "n_test_records": len(test_keys)})

    headline = float(np.mean(list(per_group_rmse.values())))
    echo = asdict(tcfg)
    echo["learner"] = {"name": tcfg.learner.name, "params": dict(tcfg.learner.params)}
    return ExperimentReport(
        kind="transfer", config_echo=echo, rmse_pct=headline, rows=tuple(rows),
        per_split_rmse=per_group_rmse, split_manifest=tuple(manifest),
        wall_time_s=time.perf_counter() - t0,
        notes={"sd_dropped": [list(k) for k in sd_dropped],
               "td_dropped": [list(k) for k in td_dropped]})


# -- report I/O and verification -----------------------------------------------


def report_to_dict(report: ExperimentReport) -> dict:
    doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION}
    doc.update(asdict(report))
    doc["rows"] = [asdict(r) for r in report.rows]
    doc["split_manifest"] = list(report.split_manifest)
    return doc


def save_report(report: ExperimentReport, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_report(path) -> ExperimentReport:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != REPORT_FORMAT:
        raise DataError(f"{path}: not a report file")
    if doc.get("version") != REPORT_VERSION:
        raise DataError(f"{path}: unsupported report version {doc.get('version')}")
    rows = tuple(PredictionRow(**r) for r in doc["rows"])
    return ExperimentReport(
        kind=doc["kind"], config_echo=doc["config_echo"], rmse_pct=doc["rmse_pct"],
        rows=rows, per_split_rmse=doc["per_split_rmse"],
        split_manifest=tuple(doc["split_manifest"]), wall_time_s=doc["wall_time_s"],
        notes=doc.get("notes", {}))


def recompute_rmse(report: ExperimentReport) -> float:
    """Headline RMSE recomputed from the report's own rows."""
    if report.kind == "transfer":
        groups = {}
        for r in report.rows:
            groups.setdefault(r.group, []).append(r)
        per_group = [rmse([r.soh_observed for r in rs], [r.soh_predicted for r in rs])
                     for _, rs in sorted(groups.items())]
        return float(np.mean(per_group))
    return rmse([r.soh_observed for r in report.rows],
                [r.soh_predicted for r in report.rows])


def verify_report(report: ExperimentReport, tol: float = 1e-12) -> float:
    """Check the stored headline RMSE against the rows; returns the recomputed value."""
    again = recompute_rmse(report)
    if not abs(again - report.rmse_pct) <= tol * max(1.0, abs(report.rmse_pct)):
        raise DataError(
            f"stored RMSE {report.rmse_pct!r} != recomputed {again!r} (tol {tol})")
    return again


def write_observed_predicted_table(report: ExperimentReport, path):
    """Plot-ready rows: observed vs predicted SOH (plus uncertainty if any)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "cycle_number", "soh_observed", "soh_predicted",
                         "predicted_std", "n_repeats", "group"])
        for r in report.rows:
            writer.writerow([r.cell_id, r.cycle_number, repr(r.soh_observed),
                             repr(r.soh_predicted),
                             "" if r.predicted_std is None else repr(r.predicted_std),
                             r.n_repeats, "" if r.group is None else r.group])


def write_group_rmse_table(report: ExperimentReport, path):
    """Plot-ready rows: per-split (or per-group) RMSE."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "rmse_pct"])
        for label in sorted(report.per_split_rmse):
            writer.writerow([label, repr(report.per_split_rmse[label])])


def write_sweep_table(reports, path):
    """Plot-ready rows: RMSE versus relaxation duration."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["relaxation_duration_s", "rmse_pct"])
        for rep in reports:
            writer.writerow([repr(rep.config_echo["relaxation_duration_s"]),
                             repr(rep.rmse_pct)])
