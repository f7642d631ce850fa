"""Two-sample permutation tests and the pairwise (pair x variable) p-value matrix.

Each pair of training samples is tested variable by variable, permuting the
repetition labels of the two samples. The statistic is the difference in
means; the test is two-sided on |T|.
"""

import concurrent.futures
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .logger import resolve
from .utils import CONFIG, rng_for


class ExhaustiveLimitError(ValueError):
    """Raised when exact enumeration would exceed the configured partition limit."""


class PairId(NamedTuple):
    i: int
    j: int


class TestStatistic(NamedTuple):
    value: float


@dataclass(frozen=True, eq=False)
class PValueMatrix:
    pairs: Tuple[PairId, ...]
    values: np.ndarray   # [pair][variable]
    kind: str = 'raw'
    method: str = 'exact'
    n_perm: Optional[int] = None
    seed: Optional[int] = None
    family_mode: Optional[str] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] != len(self.pairs):
            raise ValueError(f"p-value matrix shape {values.shape} does not match {len(self.pairs)} pairs")
        if not np.all((values > 0) & (values <= 1)):
            raise ValueError("p-values must lie in (0, 1]")
        if self.kind not in ('raw', 'adjusted'):
            raise ValueError(f"unknown p-value kind {self.kind!r}")
        if self.method not in ('exact', 'monte_carlo'):
            raise ValueError(f"unknown permutation method {self.method!r}")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'pairs', tuple(PairId(int(p[0]), int(p[1])) for p in self.pairs))

    @property
    def n_pairs(self):
        return self.values.shape[0]

    @property
    def n_vars(self):
        return self.values.shape[1]

    def describe(self):
        out = {'kind': self.kind, 'method': self.method, 'n_pairs': self.n_pairs, 'n_vars': self.n_vars}
        if self.method == 'monte_carlo':
            out.update(n_perm=self.n_perm, seed=self.seed)
        if self.family_mode is not None:
            out['family_mode'] = self.family_mode
        return out


def diff_means_stat(a, b) -> TestStatistic:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty group")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("groups must be finite")
    return TestStatistic(float(a.mean() - b.mean()))


def enumerate_partitions(n_a, n_b, limit=CONFIG['permtest']['exhaustive_limit']):
    """Yield every group-A index subset of range(n_a + n_b), lexicographically."""
    if n_a < 1 or n_b < 1:
        raise ValueError(f"group sizes must be >= 1, got ({n_a}, {n_b})")
    total = math.comb(n_a + n_b, n_a)
    if total > limit:
        raise ExhaustiveLimitError(
            f"C({n_a + n_b}, {n_a}) = {total} partitions exceed the exhaustive limit {limit}; use Monte Carlo")
    return itertools.combinations(range(n_a + n_b), n_a)


@lru_cache(maxsize=16)
def _exact_indicator(n_a, n_b, limit):
    n = n_a + n_b
    rows = list(enumerate_partitions(n_a, n_b, limit))
    indicator = np.zeros((len(rows), n))
    for k, subset in enumerate(rows):
        indicator[k, list(subset)] = 1.0
    indicator.setflags(write=False)
    return indicator


def _random_indicator(n_a, n_b, n_perm, rng):
    n = n_a + n_b
    indicator = np.zeros((n_perm + 1, n))
    indicator[0, :n_a] = 1.0
    perms = rng.permuted(np.tile(np.arange(n), (n_perm, 1)), axis=1)
    np.put_along_axis(indicator[1:], perms[:, :n_a], 1.0, axis=1)
    return indicator


def _partition_stats(indicator, pooled, n_a, n_b):
    """Statistic of every partition row for every column of ``pooled``."""
    sums_a = indicator @ pooled
    total = pooled.sum(axis=-2, keepdims=True)
    return sums_a / n_a - (total - sums_a) / n_b


def _extreme_counts(stats, rtol):
    # row 0 is the observed labelling
    observed = np.abs(stats[0])
    eps = rtol * np.maximum(1.0, observed)
    return (np.abs(stats) >= observed - eps).sum(axis=0)


def _as_block(x):
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def exact_two_sample_pvalue(a, b, limit=CONFIG['permtest']['exhaustive_limit'],
                            rtol=CONFIG['permtest']['tie_rtol']) -> float:
    a, b = _as_block(a), _as_block(b)
    indicator = _exact_indicator(a.shape[0], b.shape[0], limit)
    stats = _partition_stats(indicator, np.vstack([a, b]), a.shape[0], b.shape[0])
    return float(_extreme_counts(stats, rtol)[0] / indicator.shape[0])


def mc_two_sample_pvalue(a, b, n_perm, rng_stream, rtol=CONFIG['permtest']['tie_rtol']) -> float:
    if n_perm < CONFIG['permtest']['min_perm']:
        raise ValueError(f"n_perm must be >= {CONFIG['permtest']['min_perm']}, got {n_perm}")
    a, b = _as_block(a), _as_block(b)
    indicator = _random_indicator(a.shape[0], b.shape[0], n_perm, rng_stream)
    stats = _partition_stats(indicator, np.vstack([a, b]), a.shape[0], b.shape[0])
    # the observed row counts itself, which is the add-one correction
    return float(_extreme_counts(stats, rtol)[0] / (n_perm + 1))


def _resolve_mode(mode, n_reps, limit):
    if mode == 'auto':
        return 'exact' if math.comb(2 * n_reps, n_reps) <= limit else 'monte_carlo'
    if mode not in ('exact', 'monte_carlo'):
        raise ValueError(f"unknown permutation mode {mode!r}")
    return mode


def pairwise_pvalue_matrix(train, mode='exact', seed=0, n_perm=CONFIG['permtest']['n_perm'],
                           n_workers=None, limit=CONFIG['permtest']['exhaustive_limit'],
                           chunk_size=CONFIG['permtest']['chunk_size'], logger=None,
                           progress=False) -> PValueMatrix:
    """Raw p-values for every training pair (i < j) and every variable.

    Rows are lexicographic in (i, j). Chunks of pairs run on a thread pool
    and land in fixed rows, so the result does not depend on ``n_workers``.
    """
    logger = resolve(logger)
    n_train, n_reps, n_vars = train.shape
    if n_train < 2:
        raise ValueError(f"need at least 2 training samples, got {n_train}")
    if n_reps < 2:
        raise ValueError(f"need at least 2 repetitions per sample, got {n_reps}")
    mode = _resolve_mode(mode, n_reps, limit)
    if mode == 'monte_carlo' and n_perm < CONFIG['permtest']['min_perm']:
        raise ValueError(f"n_perm must be >= {CONFIG['permtest']['min_perm']}, got {n_perm}")
    rtol = CONFIG['permtest']['tie_rtol']

    pairs = list(itertools.combinations(range(n_train), 2))
    pair_array = np.array(pairs, dtype=np.intp)
    out = np.empty((len(pairs), n_vars))
    measurements = train.measurements
    indicator = _exact_indicator(n_reps, n_reps, limit) if mode == 'exact' else None

    def process_chunk(start, stop):
        first, second = pair_array[start:stop, 0], pair_array[start:stop, 1]
        pooled = np.concatenate([measurements[first], measurements[second]], axis=1)
        if mode == 'exact':
            stats = _partition_stats(indicator, pooled, n_reps, n_reps)
            observed = np.abs(stats[:, :1, :])
            eps = rtol * np.maximum(1.0, observed)
            counts = (np.abs(stats) >= observed - eps).sum(axis=1)
            out[start:stop] = counts / indicator.shape[0]
        else:
            for row, (i, j) in enumerate(pair_array[start:stop], start=start):
                perm_indicator = _random_indicator(n_reps, n_reps, n_perm, rng_for(seed, i, j))
                stats = _partition_stats(perm_indicator, pooled[row - start], n_reps, n_reps)
                out[row] = _extreme_counts(stats, rtol) / (n_perm + 1)
        return stop - start

    chunks = [(s, min(s + chunk_size, len(pairs))) for s in range(0, len(pairs), chunk_size)]
    n_workers = max(1, int(n_workers or CONFIG['threads']))
    logger.log('INFO', f"Testing {len(pairs)} pairs x {n_vars} variables ({mode}, {n_workers} workers)")

    with tqdm(total=len(pairs), desc="Pairwise permutation tests", unit="pair", disable=not progress) as pbar:
        with concurrent.futures.ThreadPoolExecutor(max_workers=n_workers) as executor:
            futures = [executor.submit(process_chunk, start, stop) for start, stop in chunks]
            for future in concurrent.futures.as_completed(futures):
                pbar.update(future.result())

    return PValueMatrix(
        pairs=tuple(PairId(i, j) for i, j in pairs),
        values=out,
        kind='raw',
        method=mode,
        n_perm=n_perm if mode == 'monte_carlo' else None,
        seed=int(seed) if mode == 'monte_carlo' else None,
    )


def write_pvalue_matrix(matrix: PValueMatrix, path):
    frame = pd.DataFrame(matrix.values, columns=[f"v{v + 1}" for v in range(matrix.n_vars)])
    frame.insert(0, 'j', [p.j for p in matrix.pairs])
    frame.insert(0, 'i', [p.i for p in matrix.pairs])
    frame.to_csv(path, index=False, lineterminator='\n')
    return path


def read_pvalue_matrix(path, kind='raw', method='exact', n_perm=None, seed=None) -> PValueMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"P-value matrix not found: {path}")
    frame = pd.read_csv(path)
    if list(frame.columns[:2]) != ['i', 'j'] or frame.shape[1] < 3:
        raise ValueError(f"{path}: expected header 'i,j,v1..vV'")
    pairs = tuple(PairId(int(i), int(j)) for i, j in zip(frame['i'], frame['j']))
    values = frame.iloc[:, 2:].to_numpy(dtype=np.float64)
    return PValueMatrix(pairs, values, kind=kind, method=method, n_perm=n_perm, seed=seed)
