"""Sample containers, CSV ingestion/emission, splitting and averaging."""

import io
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd


def _frozen(values, dtype=np.float64):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SampleSet:
    measurements: np.ndarray   # [sample][rep][variable]
    responses: np.ndarray      # [sample][response]
    sample_ids: Tuple[str, ...]

    def __post_init__(self):
        measurements = _frozen(self.measurements)
        responses = _frozen(self.responses)
        if measurements.ndim != 3:
            raise ValueError(f"measurements must be a 3-d tensor, got shape {measurements.shape}")
        if responses.ndim != 2:
            raise ValueError(f"responses must be a matrix, got shape {responses.shape}")
        if min(measurements.shape) == 0 or responses.shape[1] == 0:
            raise ValueError(f"empty dimension in sample set: {measurements.shape}, {responses.shape}")
        if responses.shape[0] != measurements.shape[0]:
            raise ValueError(
                f"responses have {responses.shape[0]} rows for {measurements.shape[0]} samples")
        if not np.isfinite(measurements).all() or not np.isfinite(responses).all():
            raise ValueError("sample set contains non-finite values")
        ids = tuple(str(s) for s in self.sample_ids)
        if len(ids) != measurements.shape[0]:
            raise ValueError(f"{len(ids)} sample ids for {measurements.shape[0]} samples")
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids are not unique")
        object.__setattr__(self, 'measurements', measurements)
        object.__setattr__(self, 'responses', responses)
        object.__setattr__(self, 'sample_ids', ids)

    @property
    def n_samples(self):
        return self.measurements.shape[0]

    @property
    def n_reps(self):
        return self.measurements.shape[1]

    @property
    def n_vars(self):
        return self.measurements.shape[2]

    @property
    def n_responses(self):
        return self.responses.shape[1]

    @property
    def shape(self):
        return (self.n_samples, self.n_reps, self.n_vars)

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return (self.sample_ids == other.sample_ids
                and self.measurements.shape == other.measurements.shape
                and self.responses.shape == other.responses.shape
                and np.array_equal(self.measurements, other.measurements)
                and np.array_equal(self.responses, other.responses))

    __hash__ = None


@dataclass(frozen=True)
class TrainValidationSplit:
    train_indices: Tuple[int, ...]
    validation_indices: Tuple[int, ...]
    seed: int

    def to_dict(self):
        return {
            'seed': self.seed,
            'train_indices': list(self.train_indices),
            'validation_indices': list(self.validation_indices),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(int(i) for i in data['train_indices']),
                   tuple(int(i) for i in data['validation_indices']),
                   int(data['seed']))


@dataclass(frozen=True, eq=False)
class AveragedMatrix:
    values: np.ndarray   # [sample][variable]

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ValueError(f"averaged matrix must be 2-d, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("averaged matrix contains non-finite values")
        object.__setattr__(self, 'values', values)


def _parse_column(column, name, row_offset):
    try:
        values = column.astype(np.float64).to_numpy()
    except (TypeError, ValueError):
        for pos, cell in enumerate(column):
            try:
                float(cell)
            except (TypeError, ValueError):
                raise ValueError(
                    f"non-numeric value {cell!r} at row {pos + row_offset}, column {name}") from None
        raise
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ValueError(f"non-finite value at row {bad[0] + row_offset}, column {name}")
    return values


def _rep_sort_key(rep_id):
    try:
        return (0, float(rep_id), rep_id)
    except ValueError:
        return (1, 0.0, rep_id)


def ingest_samples(source) -> SampleSet:
    """Read the ``sample_id,rep_id,y1..yR,x1..xV`` CSV format.

    ``source`` is a text stream or a string of CSV content. Rows are
    reported 1-based counting data rows (the header is row 0).
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ValueError("empty input") from None
    except pd.errors.ParserError as e:
        raise ValueError(f"ragged rows: {e}") from None

    columns = [str(c).strip() for c in frame.columns]
    if len(columns) < 4 or columns[0] != 'sample_id' or columns[1] != 'rep_id':
        raise ValueError("header must start with 'sample_id,rep_id' followed by y and x columns")
    y_cols = [c for c in columns[2:] if c.startswith('y')]
    x_cols = [c for c in columns[2:] if c.startswith('x')]
    if not y_cols or not x_cols or columns[2:] != y_cols + x_cols:
        raise ValueError("header must list response columns y1..yR before variable columns x1..xV")
    if frame.empty:
        raise ValueError("empty input")

    missing = frame.isna().any(axis=1).to_numpy()
    if missing.any():
        raise ValueError(f"ragged rows: row {int(np.flatnonzero(missing)[0]) + 1} has too few fields")

    frame.columns = columns
    y = np.column_stack([_parse_column(frame[c], c, 1) for c in y_cols])
    x = np.column_stack([_parse_column(frame[c], c, 1) for c in x_cols])

    groups = {}
    for row, (sid, rid) in enumerate(zip(frame['sample_id'], frame['rep_id'])):
        reps = groups.setdefault(sid, {})
        if rid in reps:
            raise ValueError(f"duplicate repetition {rid!r} for sample {sid!r} at row {row + 1}")
        reps[rid] = row

    rep_counts = Counter(len(reps) for reps in groups.values())
    modal = max(rep_counts.items(), key=lambda kv: (kv[1], kv[0]))[0]
    for sid, reps in groups.items():
        if len(reps) != modal:
            raise ValueError(
                f"inconsistent repetition count: sample {sid!r} has {len(reps)}, expected {modal}")

    sample_ids = list(groups)
    measurements = np.empty((len(sample_ids), modal, len(x_cols)))
    responses = np.empty((len(sample_ids), len(y_cols)))
    for i, sid in enumerate(sample_ids):
        reps = groups[sid]
        rows = [reps[rid] for rid in sorted(reps, key=_rep_sort_key)]
        measurements[i] = x[rows]
        block = y[rows]
        if not (block == block[0]).all():
            raise ValueError(f"responses differ between repetitions of sample {sid!r}")
        responses[i] = block[0]

    return SampleSet(measurements, responses, tuple(sample_ids))


def load_samples(path) -> SampleSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Data file not found: {path}")
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return ingest_samples(f)


def emit_samples(s: SampleSet, dest=None):
    """Write ``s`` in the ingestion CSV format; returns the text when ``dest`` is None."""
    n, reps, n_vars = s.shape
    frame = pd.DataFrame(s.measurements.reshape(n * reps, n_vars),
                         columns=[f"x{v + 1}" for v in range(n_vars)])
    for r in reversed(range(s.n_responses)):
        frame.insert(0, f"y{r + 1}", np.repeat(s.responses[:, r], reps))
    frame.insert(0, 'rep_id', np.tile(np.arange(1, reps + 1), n))
    frame.insert(0, 'sample_id', np.repeat(np.array(s.sample_ids, dtype=object), reps))
    text = frame.to_csv(index=False, lineterminator='\n')
    if dest is None:
        return text
    with open(dest, 'w', encoding='utf-8', newline='') as f:
        f.write(text)
    return dest


def split_train_validation(s: SampleSet, fraction: float, seed: int) -> TrainValidationSplit:
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    n_train = math.floor(fraction * s.n_samples)
    if n_train < 2:
        raise ValueError(
            f"too few samples: {s.n_samples} samples at fraction {fraction} give {n_train} training samples")
    order = np.random.default_rng(seed).permutation(s.n_samples)
    train = tuple(int(i) for i in np.sort(order[:n_train]))
    validation = tuple(int(i) for i in np.sort(order[n_train:]))
    return TrainValidationSplit(train, validation, int(seed))


def average_repetitions(s: SampleSet) -> AveragedMatrix:
    return AveragedMatrix(s.measurements.mean(axis=1))


def subset_samples(s: SampleSet, indices) -> SampleSet:
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise ValueError(f"duplicate sample index in {idx}")
    for i in idx:
        if not 0 <= i < s.n_samples:
            raise ValueError(f"sample index {i} out of range for {s.n_samples} samples")
    return SampleSet(s.measurements[idx], s.responses[idx], tuple(s.sample_ids[i] for i in idx))
