"""Canonical in-memory data model and tabular ingestion.

A dataset is a flat list of cycle records. Each record couples one cell's
metadata with one cycle's measured capacity and the voltage-relaxation curve
logged during the post-charge rest. The on-disk format is a comma-delimited
UTF-8 table with a header row, one row per (cycle, sample):

    dataset_id,cell_id,temperature_C,charge_rate_C,discharge_rate_C,
    nominal_capacity_Ah,cycle_number,capacity_Ah,cutoff_current_A,t_s,voltage_V

Rows belonging to one cycle must be contiguous and share every field except
(t_s, voltage_V). Cells and cycles may appear in any order; loading sorts
records by (cell_id, cycle_number).
"""

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DataError,
    DataWarning,
    DuplicateCycle,
    EmptyTruncation,
    MalformedRow,
    NonMonotoneTime,
)

DATASET_IDS = ("D1", "D2", "D3")

# expected rest-period sampling grid per sub-dataset: (interval_s, n_points)
EXPECTED_GRIDS = {"D1": (120.0, 14), "D2": (120.0, 14), "D3": (30.0, 119)}

# fraction of nominal capacity used for the CV cutoff current when the file
# omits it; negative sign = charging convention
DEFAULT_CUTOFF_C_RATE = 0.05

COLUMNS = (
    "dataset_id",
    "cell_id",
    "temperature_C",
    "charge_rate_C",
    "discharge_rate_C",
    "nominal_capacity_Ah",
    "cycle_number",
    "capacity_Ah",
    "cutoff_current_A",
    "t_s",
    "voltage_V",
)

REQUIRED_COLUMNS = tuple(c for c in COLUMNS if c != "cutoff_current_A")


def condition_label(temperature_C: float, charge_rate_C: float, discharge_rate_C: float) -> str:
    """Build the condition name from its components, e.g. ``CY25-0.5/1``."""
    return f"CY{temperature_C:g}-{charge_rate_C:g}/{discharge_rate_C:g}"


@dataclass(frozen=True)
class CellMeta:
    cell_id: str
    dataset_id: str
    temperature_C: float
    charge_rate_C: float
    discharge_rate_C: float
    nominal_capacity_Ah: float
    condition_name: str = ""

    def __post_init__(self):
        if self.dataset_id not in DATASET_IDS:
            raise DataError(f"unknown dataset_id {self.dataset_id!r}")
        if not self.nominal_capacity_Ah > 0:
            raise DataError(f"nominal capacity must be positive, got {self.nominal_capacity_Ah}")
        derived = condition_label(self.temperature_C, self.charge_rate_C, self.discharge_rate_C)
        if self.condition_name == "":
            object.__setattr__(self, "condition_name", derived)
        elif self.condition_name != derived:
            raise DataError(
                f"condition_name {self.condition_name!r} does not match derived {derived!r}"
            )


@dataclass(frozen=True)
class RelaxationCurve:
    """Time-stamped rest-period voltage samples plus the CV cutoff current.

    Times are seconds from the start of the rest (the first stored sample may
    sit at t > 0). The cutoff current is signed: negative while charging.
    """

    times_s: np.ndarray
    voltages_V: np.ndarray
    cutoff_current_A: float

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=float)
        v = np.asarray(self.voltages_V, dtype=float)
        if t.ndim != 1 or v.ndim != 1 or len(t) != len(v) or len(t) < 1:
            raise DataError("curve needs equal-length, non-empty time and voltage vectors")
        if np.any(t < 0):
            raise DataError("negative sample time")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise DataError("times not strictly increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "voltages_V", v)

    def __len__(self):
        return len(self.times_s)


@dataclass(frozen=True)
class CycleRecord:
    cell: CellMeta
    cycle_number: int
    capacity_Ah: float
    soh_pct: float
    curve: RelaxationCurve

    def __post_init__(self):
        if self.cycle_number < 1:
            raise DataError(f"cycle_number must be >= 1, got {self.cycle_number}")
        if not self.capacity_Ah > 0:
            raise DataError(f"capacity must be positive, got {self.capacity_Ah}")


def soh_of(record: CycleRecord) -> float:
    """State of health in percent: 100 x capacity / nominal capacity."""
    return 100.0 * record.capacity_Ah / record.cell.nominal_capacity_Ah


def make_record(cell: CellMeta, cycle_number: int, capacity_Ah: float,
                curve: RelaxationCurve) -> CycleRecord:
    """Build a record with the SOH label computed from the capacities."""
    soh = 100.0 * capacity_Ah / cell.nominal_capacity_Ah
    return CycleRecord(cell=cell, cycle_number=cycle_number, capacity_Ah=capacity_Ah,
                       soh_pct=soh, curve=curve)


@dataclass(frozen=True)
class Dataset:
    """Immutable, indexed collection of cycle records.

    Safe for concurrent reads; records are sorted by (cell_id, cycle_number).
    """

    records: tuple = ()
    _by_cell: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        recs = tuple(sorted(self.records, key=lambda r: (r.cell.cell_id, r.cycle_number)))
        seen = set()
        for r in recs:
            key = (r.cell.cell_id, r.cycle_number)
            if key in seen:
                raise DuplicateCycle(*key)
            seen.add(key)
        by_cell = {}
        for r in recs:
            by_cell.setdefault(r.cell.cell_id, []).append(r)
        object.__setattr__(self, "records", recs)
        object.__setattr__(self, "_by_cell", {k: tuple(v) for k, v in by_cell.items()})

    def __len__(self):
        return len(self.records)

    def cell_ids(self):
        return tuple(self._by_cell.keys())

    def cells(self):
        return tuple(self._by_cell[cid][0].cell for cid in self._by_cell)

    def records_of_cell(self, cell_id):
        return self._by_cell[cell_id]

    def condition_names(self):
        return tuple(sorted({r.cell.condition_name for r in self.records}))

    def cells_by_condition(self):
        """Mapping condition_name -> sorted tuple of cell_ids."""
        out = {}
        for cid in self._by_cell:
            cond = self._by_cell[cid][0].cell.condition_name
            out.setdefault(cond, []).append(cid)
        return {k: tuple(sorted(v)) for k, v in sorted(out.items())}

    def dataset_ids(self):
        return tuple(sorted({r.cell.dataset_id for r in self.records}))

    def subset_cells(self, cell_ids):
        wanted = set(cell_ids)
        return Dataset(tuple(r for r in self.records if r.cell.cell_id in wanted))

    def subset_records(self, keys):
        """Subset by (cell_id, cycle_number) pairs."""
        wanted = set(keys)
        return Dataset(tuple(r for r in self.records
                             if (r.cell.cell_id, r.cycle_number) in wanted))


@dataclass(frozen=True)
class DataSchemaConfig:
    """Remap of canonical column names to the names used in a file."""

    column_map: dict = field(default_factory=dict)

    def actual(self, canonical):
        return self.column_map.get(canonical, canonical)


def read_schema_config(path) -> DataSchemaConfig:
    """Read a ``canonical = actual`` key-value file into a schema config."""
    mapping = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {lineno}: expected 'canonical = actual'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in COLUMNS:
                raise DataError(f"{path}: line {lineno}: unknown canonical column {key!r}")
            mapping[key] = val
    return DataSchemaConfig(column_map=mapping)


def truncate_relaxation(curve: RelaxationCurve, duration_s: float) -> RelaxationCurve:
    """Keep the prefix of samples with t <= duration_s; cutoff current kept."""
    keep = np.count_nonzero(curve.times_s <= duration_s)
    if keep == 0:
        raise EmptyTruncation(
            f"no sample at or before t={duration_s} s (first sample at {curve.times_s[0]} s)"
        )
    if keep == len(curve):
        return curve
    return RelaxationCurve(
        times_s=curve.times_s[:keep].copy(),
        voltages_V=curve.voltages_V[:keep].copy(),
        cutoff_current_A=curve.cutoff_current_A,
    )


def _parse_float(raw, row_no, colname):
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise MalformedRow(row_no, f"column {colname!r}: not a number: {raw!r}") from None
    if not np.isfinite(value):
        raise MalformedRow(row_no, f"column {colname!r}: non-finite value")
    return value


def _parse_int(raw, row_no, colname):
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise MalformedRow(row_no, f"column {colname!r}: not an integer: {raw!r}") from None


def load_dataset(path, schema: DataSchemaConfig | None = None, *, lenient: bool = False,
                 voltage_bounds: tuple = (2.0, 4.5)) -> Dataset:
    """Load and validate a tabular relaxation dataset.

    Rows of one cycle must be contiguous and time-ordered; a (cell, cycle)
    block appearing twice raises ``DuplicateCycle``, a time step that does not
    increase raises ``NonMonotoneTime``. Voltage-bound and SOH-range
    violations are hard errors unless ``lenient`` is set, in which case they
    warn. Unexpected sampling grids only ever warn.
    """
    schema = schema or DataSchemaConfig()

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(1, "empty file: header row required") from None
        header = [h.strip() for h in header]
        col_idx = {}
        for canonical in COLUMNS:
            name = schema.actual(canonical)
            if name in header:
                col_idx[canonical] = header.index(name)
        missing = [c for c in REQUIRED_COLUMNS if c not in col_idx]
        if missing:
            raise MalformedRow(1, f"missing required columns: {', '.join(missing)}")
        has_cutoff = "cutoff_current_A" in col_idx

        problems = []  # lenient-mode findings, one warning per message

        def check(ok, row_no, message):
            if ok:
                return
            if lenient:
                problems.append(message)
            else:
                raise MalformedRow(row_no, message)

        closed = set()
        open_key = None
        meta_fields = None  # raw field tuple shared by the open cycle's rows
        times, volts = [], []
        open_row_no = 0
        records = []
        cell_meta_cache = {}

        def close_cycle():
            nonlocal open_key
            if open_key is None:
                return
            cell_id, cycle_number = open_key
            (dataset_id, temperature, chg, dchg, nominal, capacity, cutoff) = meta_fields
            if cutoff is None:
                cutoff = -DEFAULT_CUTOFF_C_RATE * nominal
            t = np.asarray(times, dtype=float)
            if len(t) > 1 and not np.all(np.diff(t) > 0):
                raise NonMonotoneTime(cell_id, cycle_number)
            curve = RelaxationCurve(times_s=t, voltages_V=np.asarray(volts, dtype=float),
                                    cutoff_current_A=cutoff)
            meta_key = (cell_id, dataset_id, temperature, chg, dchg, nominal)
            if cell_id in cell_meta_cache:
                if cell_meta_cache[cell_id][1] != meta_key:
                    raise MalformedRow(
                        open_row_no, f"cell {cell_id!r}: metadata differs between cycles")
                cell = cell_meta_cache[cell_id][0]
            else:
                cell = CellMeta(cell_id=cell_id, dataset_id=dataset_id,
                                temperature_C=temperature, charge_rate_C=chg,
                                discharge_rate_C=dchg, nominal_capacity_Ah=nominal)
                cell_meta_cache[cell_id] = (cell, meta_key)
            record = make_record(cell, cycle_number, capacity, curve)
            check(0.0 < record.soh_pct <= 110.0, open_row_no,
                  f"cell {cell_id!r} cycle {cycle_number}: SOH {record.soh_pct:.3f}% "
                  "outside (0, 110]")
            records.append(record)
            closed.add(open_key)
            open_key = None

        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise MalformedRow(row_no, f"expected {len(header)} fields, got {len(row)}")

            def cell_value(canonical):
                return row[col_idx[canonical]].strip()

            cell_id = cell_value("cell_id")
            if not cell_id:
                raise MalformedRow(row_no, "empty cell_id")
            dataset_id = cell_value("dataset_id")
            if dataset_id not in DATASET_IDS:
                raise MalformedRow(row_no, f"unknown dataset_id {dataset_id!r}")
            cycle_number = _parse_int(cell_value("cycle_number"), row_no, "cycle_number")
            temperature = _parse_float(cell_value("temperature_C"), row_no, "temperature_C")
            chg = _parse_float(cell_value("charge_rate_C"), row_no, "charge_rate_C")
            dchg = _parse_float(cell_value("discharge_rate_C"), row_no, "discharge_rate_C")
            nominal = _parse_float(cell_value("nominal_capacity_Ah"), row_no,
                                   "nominal_capacity_Ah")
            capacity = _parse_float(cell_value("capacity_Ah"), row_no, "capacity_Ah")
            if cycle_number < 1:
                raise MalformedRow(row_no, f"cycle_number must be >= 1, got {cycle_number}")
            if nominal <= 0:
                raise MalformedRow(row_no, f"nominal capacity must be positive, got {nominal}")
            if capacity <= 0:
                raise MalformedRow(row_no, f"capacity must be positive, got {capacity}")
            cutoff = None
            if has_cutoff and cell_value("cutoff_current_A") != "":
                cutoff = _parse_float(cell_value("cutoff_current_A"), row_no,
                                      "cutoff_current_A")
            t = _parse_float(cell_value("t_s"), row_no, "t_s")
            v = _parse_float(cell_value("voltage_V"), row_no, "voltage_V")
            if t < 0:
                raise MalformedRow(row_no, f"negative sample time {t}")
            check(voltage_bounds[0] <= v <= voltage_bounds[1], row_no,
                  f"voltage {v} V outside [{voltage_bounds[0]}, {voltage_bounds[1]}] V")

            key = (cell_id, cycle_number)
            fields = (dataset_id, temperature, chg, dchg, nominal, capacity, cutoff)
            if key != open_key:
                close_cycle()
                if key in closed:
                    raise DuplicateCycle(*key)
                open_key = key
                meta_fields = fields
                open_row_no = row_no
                times, volts = [], []
            elif fields != meta_fields:
                raise MalformedRow(
                    row_no, f"cycle {key}: per-cycle fields differ between its rows")
            if times and t <= times[-1]:
                raise NonMonotoneTime(cell_id, cycle_number)
            times.append(t)
            volts.append(v)

        close_cycle()

    for message in sorted(set(problems)):
        warnings.warn(message, DataWarning, stacklevel=2)

    ds = Dataset(tuple(records))
    _warn_unexpected_grids(ds)
    return ds


def _warn_unexpected_grids(ds: Dataset):
    for cell_id in ds.cell_ids():
        recs = ds.records_of_cell(cell_id)
        expected = EXPECTED_GRIDS.get(recs[0].cell.dataset_id)
        if expected is None:
            continue
        interval, n_points = expected
        bad = 0
        for r in recs:
            t = r.curve.times_s
            if len(t) != n_points:
                bad += 1
                continue
            steps = np.diff(t)
            if len(steps) and not np.allclose(steps, interval, rtol=1e-6, atol=1e-9):
                bad += 1
        if bad:
            warnings.warn(
                f"cell {cell_id!r}: {bad}/{len(recs)} cycles deviate from the expected "
                f"{recs[0].cell.dataset_id} grid ({n_points} points every {interval:g} s)",
                DataWarning, stacklevel=3)


def save_dataset(ds: Dataset, path):
    """Write a dataset in the canonical tabular format (full float precision)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for r in ds.records:
            c = r.cell
            for t, v in zip(r.curve.times_s, r.curve.voltages_V):
                writer.writerow([
                    c.dataset_id, c.cell_id, repr(c.temperature_C), repr(c.charge_rate_C),
                    repr(c.discharge_rate_C), repr(c.nominal_capacity_Ah),
                    r.cycle_number, repr(r.capacity_Ah),
                    repr(r.curve.cutoff_current_A), repr(float(t)), repr(float(v)),
                ])
