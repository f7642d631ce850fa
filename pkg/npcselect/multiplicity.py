"""BH-FDR adjustment, significance counting and cutoff-based variable selection."""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from .permtest import PValueMatrix
from .utils import CONFIG

FAMILY_MODES = ('per_variable', 'global')


@dataclass(frozen=True, eq=False)
class SignificanceCounts:
    counts: np.ndarray
    alpha: float
    family_mode: str
    n_pairs: int

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.ndim != 1:
            raise ValueError("significance counts must be a vector")
        if counts.size and (counts.min() < 0 or counts.max() > self.n_pairs):
            raise ValueError(f"significance counts must lie in [0, {self.n_pairs}]")
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)

    @property
    def n_vars(self):
        return self.counts.shape[0]


@dataclass(frozen=True)
class SelectionResult:
    selected: Tuple[int, ...]
    method: str
    n_vars_total: int
    cutoff: Optional[int] = None
    lambdas: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        selected = tuple(int(v) for v in self.selected)
        if list(selected) != sorted(set(selected)):
            raise ValueError("selection must be sorted ascending without duplicates")
        if selected and (selected[0] < 0 or selected[-1] >= self.n_vars_total):
            raise ValueError(f"selected index out of range [0, {self.n_vars_total})")
        if self.method not in ('npc', 'lasso', 'all'):
            raise ValueError(f"unknown selection method {self.method!r}")
        object.__setattr__(self, 'selected', selected)
        if self.lambdas is not None:
            object.__setattr__(self, 'lambdas', tuple(float(x) for x in self.lambdas))

    def __len__(self):
        return len(self.selected)

    def to_dict(self):
        out = {'method': self.method, 'n_vars_total': self.n_vars_total, 'selected': list(self.selected)}
        if self.cutoff is not None:
            out['cutoff'] = int(self.cutoff)
        if self.lambdas is not None:
            out['lambdas'] = list(self.lambdas)
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data['selected']), data['method'], int(data['n_vars_total']),
                   data.get('cutoff'), data.get('lambdas'))


class Band(NamedTuple):
    start: int
    end: int

    def __str__(self):
        return f"{self.start}-{self.end}"


def _check_pvalues(p):
    if not np.isfinite(p).all():
        raise ValueError("p-values must be finite")
    if p.size and (p.min() <= 0 or p.max() > 1):
        raise ValueError("p-values must lie in (0, 1]")


def _bh_columns(p):
    """Step-up BH applied independently to each column of ``p``."""
    m = p.shape[0]
    order = np.argsort(p, axis=0, kind='stable')
    # m / rank >= 1, so no adjusted value rounds below its input
    ranked = np.take_along_axis(p, order, axis=0) * (m / np.arange(1, m + 1))[:, None]
    adjusted = np.minimum(np.minimum.accumulate(ranked[::-1], axis=0)[::-1], 1.0)
    out = np.empty_like(p)
    np.put_along_axis(out, order, adjusted, axis=0)
    return out


def bh_adjust(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("bh_adjust expects a vector")
    _check_pvalues(p)
    if p.size == 0:
        return p.copy()
    return _bh_columns(p[:, None])[:, 0]


def adjust_matrix(raw: PValueMatrix, mode=CONFIG['multiplicity']['family_mode']) -> PValueMatrix:
    if raw.kind != 'raw':
        raise ValueError("p-value matrix is already adjusted")
    if mode not in FAMILY_MODES:
        raise ValueError(f"unknown FDR family mode {mode!r}; expected one of {FAMILY_MODES}")
    if mode == 'per_variable':
        adjusted = _bh_columns(raw.values)
    else:
        adjusted = _bh_columns(raw.values.reshape(-1, 1)).reshape(raw.values.shape)
    return PValueMatrix(raw.pairs, adjusted, kind='adjusted', method=raw.method,
                        n_perm=raw.n_perm, seed=raw.seed, family_mode=mode)


def significance_counts(adj: PValueMatrix, alpha=CONFIG['multiplicity']['alpha']) -> SignificanceCounts:
    if adj.kind != 'adjusted':
        raise ValueError("significance counting needs an adjusted p-value matrix, got a raw one")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    counts = (adj.values <= alpha).sum(axis=0)
    return SignificanceCounts(counts, float(alpha), adj.family_mode or 'per_variable', adj.n_pairs)


def select_by_cutoff(c: SignificanceCounts, cutoff) -> SelectionResult:
    if cutoff < 0:
        raise ValueError(f"cutoff must be >= 0, got {cutoff}")
    selected = tuple(int(v) for v in np.flatnonzero(c.counts >= cutoff))
    return SelectionResult(selected, 'npc', c.n_vars, cutoff=int(cutoff))


def cutoff_for_target_size(c: SignificanceCounts, k) -> int:
    """Largest cutoff whose selection holds at least ``k`` variables."""
    if not 1 <= k <= c.n_vars:
        raise ValueError(f"target size must lie in [1, {c.n_vars}], got {k}")
    return int(np.sort(c.counts)[::-1][k - 1])


PERCENTILE_SCALES = ('range', 'quantile')


def percentile_cutoffs(c: SignificanceCounts, percentiles=CONFIG['multiplicity']['auto_percentiles'],
                       scale=CONFIG['multiplicity']['percentile_scale']):
    """Integer cutoffs at the given percentiles of the counts, rounded up.

    ``range`` places percentile q at q% of the largest observed count, so
    P90 keeps every variable within 10% of the best one. ``quantile`` takes
    the q-th quantile of the count distribution, which is 0 whenever most
    variables carry no signal.
    """
    if scale not in PERCENTILE_SCALES:
        raise ValueError(f"unknown percentile scale {scale!r}")
    if scale == 'range':
        top = int(c.counts.max()) if c.counts.size else 0
        # q / 100 * top can land a hair above an integer
        return sorted({int(math.ceil(q / 100.0 * top - 1e-9)) for q in percentiles})
    return sorted({int(math.ceil(np.percentile(c.counts, q))) for q in percentiles})


def contiguous_bands(sel: SelectionResult):
    bands = []
    for v in sel.selected:
        if bands and v == bands[-1].end + 1:
            bands[-1] = Band(bands[-1].start, v)
        else:
            bands.append(Band(v, v))
    return bands


def write_counts(c: SignificanceCounts, path):
    pd.DataFrame({'variable': np.arange(c.n_vars), 'count': c.counts}).to_csv(
        path, index=False, lineterminator='\n')
    return path


def read_counts(path, alpha, family_mode, n_pairs) -> SignificanceCounts:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Counts file not found: {path}")
    frame = pd.read_csv(path)
    if list(frame.columns) != ['variable', 'count']:
        raise ValueError(f"{path}: expected header 'variable,count'")
    if list(frame['variable']) != list(range(len(frame))):
        raise ValueError(f"{path}: variables must be listed 0..V-1 in order")
    return SignificanceCounts(frame['count'].to_numpy(), alpha, family_mode, n_pairs)


def write_selection(sel: SelectionResult, path):
    pd.DataFrame({'variable': list(sel.selected)}, dtype=np.int64).to_csv(
        path, index=False, lineterminator='\n')
    return path


def read_selection(path, n_vars_total, method='npc') -> SelectionResult:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Selection file not found: {path}")
    frame = pd.read_csv(path)
    if list(frame.columns) != ['variable']:
        raise ValueError(f"{path}: expected a single 'variable' column")
    return SelectionResult(tuple(sorted(int(v) for v in frame['variable'])), method, n_vars_total)
