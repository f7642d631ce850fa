"""Pipeline orchestration and strategy comparison.

Stages: data -> split -> permtest -> multiplicity -> lasso -> ridge. Every
selection and tuning decision sees training rows only; validation rows are
touched once, to score each strategy.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from . import report as report_io
from .datamodel import (TrainValidationSplit, average_repetitions, load_samples,
                        split_train_validation, subset_samples)
from .linmod import (LASSO_OBJECTIVE, RIDGE_OBJECTIVE, ModelFit, apply_standardizer, fit_standardizer, mae,
                     multivariate_lasso_select, predict, ridge_cv_fit)
from .logger import resolve
from .multiplicity import (FAMILY_MODES, PERCENTILE_SCALES, SelectionResult, SignificanceCounts, Band,
                           adjust_matrix, contiguous_bands, cutoff_for_target_size, percentile_cutoffs,
                           select_by_cutoff, significance_counts, write_counts, write_selection)
from .permtest import pairwise_pvalue_matrix, read_pvalue_matrix, write_pvalue_matrix
from .synthgen import GeneratorConfig, config_from_args, generate_dataset, read_ground_truth
from .utils import CONFIG, array_digest, ensure_dir, strategy_file_name

MATCHED = 'npc@matched'


class PipelineError(RuntimeError):
    """A stage failure, tagged with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    generator: Optional[GeneratorConfig] = None
    data_path: Optional[str] = None
    truth_path: Optional[str] = None
    split_fraction: float = CONFIG['split']['fraction']
    split_seed: int = CONFIG['split']['seed']
    perm_mode: str = CONFIG['permtest']['mode']
    n_perm: int = CONFIG['permtest']['n_perm']
    perm_seed: int = 0
    family_mode: str = CONFIG['multiplicity']['family_mode']
    alpha: float = CONFIG['multiplicity']['alpha']
    cutoffs: Union[str, Tuple[int, ...]] = 'auto'
    percentile_scale: str = CONFIG['multiplicity']['percentile_scale']
    lasso_grid: Optional[Tuple[float, ...]] = None
    lasso_n_lambdas: int = CONFIG['lasso']['n_lambdas']
    lasso_min_ratio: Optional[float] = None
    lasso_folds: int = CONFIG['lasso']['k_folds']
    ridge_grid: Tuple[float, ...] = CONFIG['ridge']['grid']
    ridge_folds: int = CONFIG['ridge']['k_folds']
    cv_seed: int = 0
    model: str = 'ridge'
    output_dir: Optional[str] = None
    pvalues_path: Optional[str] = None
    threads: int = CONFIG['threads']

    def __post_init__(self):
        if (self.generator is None) == (self.data_path is None):
            raise ValueError("exactly one data source is required: a generator config or a data path")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.family_mode not in FAMILY_MODES:
            raise ValueError(f"unknown FDR family mode {self.family_mode!r}")
        if self.cutoffs != 'auto':
            cutoffs = tuple(int(c) for c in self.cutoffs)
            if any(c < 0 for c in cutoffs):
                raise ValueError(f"cutoffs must be nonnegative, got {cutoffs}")
            object.__setattr__(self, 'cutoffs', cutoffs)
        if self.percentile_scale not in PERCENTILE_SCALES:
            raise ValueError(f"unknown percentile scale {self.percentile_scale!r}")
        if self.lasso_n_lambdas < 1:
            raise ValueError(f"lasso grid needs at least one lambda, got {self.lasso_n_lambdas}")
        if self.lasso_min_ratio is not None and not 0.0 < self.lasso_min_ratio < 1.0:
            raise ValueError(f"lambda_min_ratio must lie in (0, 1), got {self.lasso_min_ratio}")
        if self.model != 'ridge':
            raise ValueError(f"unsupported model {self.model!r}; only 'ridge' is available")

    def settings(self):
        return {
            'split_fraction': self.split_fraction,
            'split_seed': self.split_seed,
            'perm_mode': self.perm_mode,
            'n_perm': self.n_perm if self.perm_mode != 'exact' else None,
            'perm_seed': self.perm_seed,
            'family_mode': self.family_mode,
            'alpha': self.alpha,
            'cutoffs': self.cutoffs if self.cutoffs == 'auto' else list(self.cutoffs),
            'percentile_scale': self.percentile_scale,
            'lasso_folds': self.lasso_folds,
            'lasso_n_lambdas': self.lasso_n_lambdas if self.lasso_grid is None else len(self.lasso_grid),
            'lasso_min_ratio': self.lasso_min_ratio,
            'ridge_folds': self.ridge_folds,
            'cv_seed': self.cv_seed,
            'model': self.model,
            'lasso_objective': LASSO_OBJECTIVE,
            'ridge_objective': RIDGE_OBJECTIVE,
        }


@dataclass(frozen=True)
class StrategyEntry:
    strategy: str
    method: str
    selected: Tuple[int, ...]
    bands: Tuple[Band, ...]
    mae: float
    cutoff: Optional[int] = None
    lasso_lambdas: Optional[Tuple[float, ...]] = None
    ridge_lambdas: Tuple[float, ...] = ()
    precision: Optional[float] = None
    recall: Optional[float] = None

    @property
    def n_selected(self):
        return len(self.selected)

    def to_dict(self):
        out = {
            'strategy': self.strategy,
            'method': self.method,
            'n_selected': self.n_selected,
            'mae': self.mae,
            'cutoff': self.cutoff,
            'lasso_lambdas': None if self.lasso_lambdas is None else list(self.lasso_lambdas),
            'ridge_lambdas': list(self.ridge_lambdas),
            'bands': [[b.start, b.end] for b in self.bands],
            'selected': list(self.selected),
        }
        if self.precision is not None:
            out['precision'] = self.precision
            out['recall'] = self.recall
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(
            strategy=data['strategy'], method=data['method'], selected=tuple(data['selected']),
            bands=tuple(Band(s, e) for s, e in data['bands']), mae=float(data['mae']),
            cutoff=data.get('cutoff'),
            lasso_lambdas=None if data.get('lasso_lambdas') is None else tuple(data['lasso_lambdas']),
            ridge_lambdas=tuple(data.get('ridge_lambdas', ())),
            precision=data.get('precision'), recall=data.get('recall'),
        )


@dataclass
class Report:
    entries: Tuple[StrategyEntry, ...]
    counts: Tuple[int, ...]
    fingerprint: Dict
    settings: Dict
    pvalues: Dict = field(default_factory=dict)
    ground_truth: Optional[Tuple[int, ...]] = None
    timing: Dict = field(default_factory=dict)

    @property
    def baseline_mae(self):
        return self.entry('all').mae

    @property
    def n_vars(self):
        return len(self.counts)

    def entry(self, strategy):
        for e in self.entries:
            if e.strategy == strategy:
                return e
        raise KeyError(f"no strategy {strategy!r} in report")

    def to_dict(self, include_timing=True):
        out = {
            'fingerprint': self.fingerprint,
            'settings': self.settings,
            'pvalues': self.pvalues,
            'baseline_mae': self.baseline_mae,
            'strategies': [e.to_dict() for e in self.entries],
            'counts': list(self.counts),
            'ground_truth': None if self.ground_truth is None else list(self.ground_truth),
        }
        if include_timing:
            out['timing'] = self.timing
        return out

    @classmethod
    def from_dict(cls, data):
        truth = data.get('ground_truth')
        return cls(
            entries=tuple(StrategyEntry.from_dict(e) for e in data['strategies']),
            counts=tuple(int(c) for c in data['counts']),
            fingerprint=data['fingerprint'], settings=data['settings'],
            pvalues=data.get('pvalues', {}),
            ground_truth=None if truth is None else tuple(truth),
            timing=data.get('timing', {}),
        )


@dataclass(frozen=True)
class Selections:
    """Outcome of the selection stage; everything here was computed from training rows."""
    counts: SignificanceCounts
    strategies: Dict[str, SelectionResult]
    pvalues: Dict


class _Stage:
    """Times a stage and tags any failure with its name."""

    def __init__(self, name, timing, logger):
        self.name, self.timing, self.logger = name, timing, logger

    def __enter__(self):
        self.start = time.perf_counter()
        self.logger.log('DEBUG', f"Stage {self.name} started")
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timing[self.name] = round(time.perf_counter() - self.start, 6)
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def recovery_scores(selected, truth):
    selected, truth = set(selected), set(truth)
    hits = len(selected & truth)
    precision = hits / len(selected) if selected else 0.0
    recall = hits / len(truth) if truth else 1.0
    return precision, recall


def training_matrices(samples, split):
    """Averaged X and responses Y for the training rows."""
    train = subset_samples(samples, split.train_indices)
    return train, average_repetitions(train).values, train.responses


def select_variables(samples, split, cfg: PipelineConfig, logger=None, output_dir=None, progress=False) -> Selections:
    """Permutation matrix, FDR counts, NPC cutoffs and the multivariate Lasso, on training rows."""
    logger = resolve(logger)
    train, X_train, Y_train = training_matrices(samples, split)

    cached = Path(cfg.pvalues_path) if cfg.pvalues_path else None
    if cached is not None and cached.exists():
        raw = read_pvalue_matrix(cached, method=cfg.perm_mode if cfg.perm_mode != 'auto' else 'exact')
        expected = train.n_samples * (train.n_samples - 1) // 2
        if raw.n_pairs != expected or raw.n_vars != train.n_vars:
            raise ValueError(f"cached p-value matrix {cached} has shape {raw.values.shape}, "
                             f"expected ({expected}, {train.n_vars})")
        logger.log('INFO', f"Reusing p-value matrix from {cached}")
    else:
        raw = pairwise_pvalue_matrix(train, cfg.perm_mode, cfg.perm_seed, cfg.n_perm, cfg.threads,
                                     logger=logger, progress=progress)
        # a named but missing matrix file is where the fresh matrix goes
        target = cached
        if target is None and output_dir is not None:
            target = Path(output_dir) / CONFIG['files']['pvalues']
        if target is not None:
            ensure_dir(target.parent)
            write_pvalue_matrix(raw, target)
            logger.log('INFO', f"P-value matrix written to {target}")

    adjusted = adjust_matrix(raw, cfg.family_mode)
    counts = significance_counts(adjusted, cfg.alpha)
    logger.log('INFO', f"Significance counts: max {counts.counts.max()} of {counts.n_pairs} pairs")

    standardizer = fit_standardizer(X_train)
    lasso = multivariate_lasso_select(apply_standardizer(standardizer, X_train), Y_train, cfg.lasso_grid,
                                      cfg.lasso_folds, cfg.cv_seed, logger=logger,
                                      n_lambdas=cfg.lasso_n_lambdas, min_ratio=cfg.lasso_min_ratio,
                                      progress=progress, n_workers=cfg.threads)
    logger.log('INFO', f"Multivariate Lasso selected {len(lasso)} variables")

    strategies = {'all': SelectionResult(tuple(range(train.n_vars)), 'all', train.n_vars), 'lasso': lasso}
    if cfg.cutoffs == 'auto':
        cutoffs = percentile_cutoffs(counts, scale=cfg.percentile_scale)
    else:
        cutoffs = sorted(set(cfg.cutoffs))
    for cutoff in cutoffs:
        strategies[f"npc@{cutoff}"] = select_by_cutoff(counts, cutoff)
    # an empty Lasso selection is matched with the single top-ranked variable
    matched = cutoff_for_target_size(counts, max(1, len(lasso)))
    strategies[MATCHED] = select_by_cutoff(counts, matched)
    return Selections(counts, strategies, raw.describe())


def fit_strategies(samples, split, selections, cfg: PipelineConfig, logger=None):
    logger = resolve(logger)
    _, X_train, Y_train = training_matrices(samples, split)
    fits = {}
    for name, sel in selections.items():
        fits[name] = ridge_cv_fit(X_train, Y_train, sel.selected, cfg.ridge_grid, cfg.ridge_folds, cfg.cv_seed)
        logger.log('DEBUG', f"Ridge fit for {name}: {len(fits[name].variables_used)} variables")
    return fits


def evaluate_fits(samples, split, fits):
    validation = subset_samples(samples, split.validation_indices)
    X_val = average_repetitions(validation).values
    return {name: mae(predict(fit, X_val), validation.responses) for name, fit in fits.items()}


def _load_data(cfg: PipelineConfig, logger):
    if cfg.generator is not None:
        logger.log('INFO', f"Generating synthetic dataset (seed {cfg.generator.seed})")
        return generate_dataset(cfg.generator)
    samples = load_samples(cfg.data_path)
    truth = read_ground_truth(cfg.truth_path) if cfg.truth_path else None
    return samples, truth


def fingerprint(samples, split, cfg: PipelineConfig):
    return {
        'n_samples': samples.n_samples,
        'n_reps': samples.n_reps,
        'n_vars': samples.n_vars,
        'n_responses': samples.n_responses,
        'n_train': len(split.train_indices),
        'n_validation': len(split.validation_indices),
        'split_seed': split.seed,
        'generator': None if cfg.generator is None else cfg.generator.to_dict(),
        'data_path': cfg.data_path,
        'measurements_sha256': array_digest(samples.measurements),
    }


def run_pipeline(cfg: PipelineConfig, logger=None, progress=False) -> Report:
    logger = resolve(logger)
    timing = {}
    output_dir = Path(cfg.output_dir) if cfg.output_dir else None

    with _Stage('data', timing, logger):
        samples, truth = _load_data(cfg, logger)
    with _Stage('split', timing, logger):
        split = split_train_validation(samples, cfg.split_fraction, cfg.split_seed)
        logger.log('INFO', f"Split {samples.n_samples} samples: {len(split.train_indices)} train, "
                           f"{len(split.validation_indices)} validation")
    with _Stage('selection', timing, logger):
        selections = select_variables(samples, split, cfg, logger, output_dir, progress)
    with _Stage('ridge', timing, logger):
        fits = fit_strategies(samples, split, selections.strategies, cfg, logger)
    with _Stage('evaluate', timing, logger):
        scores = evaluate_fits(samples, split, fits)

    entries = []
    for name, sel in selections.strategies.items():
        precision, recall = recovery_scores(sel.selected, truth) if truth is not None else (None, None)
        entries.append(StrategyEntry(
            strategy=name, method=sel.method, selected=sel.selected, bands=tuple(contiguous_bands(sel)),
            mae=scores[name], cutoff=sel.cutoff, lasso_lambdas=sel.lambdas,
            ridge_lambdas=fits[name].lambdas, precision=precision, recall=recall,
        ))
        logger.log('INFO', f"{name}: {len(sel)} variables, validation MAE {scores[name]:.6f}")

    return Report(
        entries=tuple(entries),
        counts=tuple(int(c) for c in selections.counts.counts),
        fingerprint=fingerprint(samples, split, cfg),
        settings=cfg.settings(),
        pvalues=selections.pvalues,
        ground_truth=None if truth is None else tuple(truth),
        timing=timing,
    )


def load_report(path) -> Report:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Report not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return Report.from_dict(json.load(f))


def compare_strategies(source) -> list:
    """Rows of (strategy, n_selected, mae) sorted by selection size.

    ``source`` is a Report or a PipelineConfig to run.
    """
    report = source if isinstance(source, Report) else run_pipeline(source)
    rows = [(e.strategy, e.n_selected, e.mae) for e in report.entries]
    return sorted(rows, key=lambda row: (row[1], row[0]))


# ---------------------------------------------------------------------------
# CLI steps

def _cutoffs_from_arg(value):
    if value is None or str(value).strip().lower() == 'auto':
        return 'auto'
    return tuple(int(c) for c in str(value).split(',') if c.strip())


def pipeline_config_from_args(args, config, need_data=False):
    seed = int(args.seed) if args.seed is not None else 0
    data = getattr(args, 'data', None)
    output_dir = Path(args.output)
    if data is None and need_data:
        data = output_dir / config['files']['data']
    truth = getattr(args, 'truth', None)
    if truth is None and data is not None:
        candidate = Path(data).parent / config['files']['ground_truth']
        truth = candidate if candidate.exists() else None
    return PipelineConfig(
        generator=None if data is not None else config_from_args(args),
        data_path=None if data is None else str(data),
        truth_path=None if truth is None else str(truth),
        split_fraction=float(args.fraction if args.fraction is not None else config['split']['fraction']),
        split_seed=seed,
        perm_mode=args.perm_mode or config['permtest']['mode'],
        n_perm=int(args.n_perm or config['permtest']['n_perm']),
        perm_seed=seed,
        family_mode=args.family_mode or config['multiplicity']['family_mode'],
        alpha=float(args.alpha if args.alpha is not None else config['multiplicity']['alpha']),
        cutoffs=_cutoffs_from_arg(args.cutoffs),
        percentile_scale=getattr(args, 'percentile_scale', None) or config['multiplicity']['percentile_scale'],
        lasso_folds=int(args.lasso_folds or config['lasso']['k_folds']),
        lasso_n_lambdas=int(getattr(args, 'n_lambdas', None) or config['lasso']['n_lambdas']),
        lasso_min_ratio=getattr(args, 'lambda_min_ratio', None),
        ridge_folds=int(args.ridge_folds or config['ridge']['k_folds']),
        cv_seed=seed,
        output_dir=str(output_dir),
        pvalues_path=getattr(args, 'pvalues', None),
        threads=int(args.threads or config['threads']),
    )


def _load_split(samples, cfg, output_dir, config, logger):
    """Split persisted in the output directory, written on first use.

    A stored split must be the one ``cfg`` would draw, else ValueError.
    """
    split_file = output_dir / config['files']['split']
    split = split_train_validation(samples, cfg.split_fraction, cfg.split_seed)
    if split_file.exists():
        with open(split_file, 'r', encoding='utf-8') as f:
            stored = TrainValidationSplit.from_dict(json.load(f))
        if max(stored.train_indices + stored.validation_indices) >= samples.n_samples:
            raise ValueError(f"{split_file} does not match the dataset ({samples.n_samples} samples)")
        if stored.seed != split.seed or len(stored.train_indices) != len(split.train_indices):
            raise ValueError(
                f"{split_file} holds seed {stored.seed} with {len(stored.train_indices)} training samples, "
                f"but this run asks for seed {split.seed} with {len(split.train_indices)}; "
                f"remove it or pass the matching --seed and --fraction")
        if stored != split:
            raise ValueError(f"{split_file} does not match the split drawn for seed {split.seed}")
        logger.log('DEBUG', f"Using split from {split_file}")
        return stored
    with open(split_file, 'w', encoding='utf-8') as f:
        json.dump(split.to_dict(), f, indent=2)
    return split


def run_select(args, config, logger):
    """``select`` command: p-values, counts and every strategy's selection."""
    cfg = pipeline_config_from_args(args, config, need_data=True)
    output_dir = Path(cfg.output_dir)
    ensure_dir(output_dir)
    samples = load_samples(cfg.data_path)
    split = _load_split(samples, cfg, output_dir, config, logger)

    logger.log('INFO', f"Selecting variables on {len(split.train_indices)} training samples")
    selections = select_variables(samples, split, cfg, logger, output_dir, progress=not args.quiet)
    write_counts(selections.counts, output_dir / config['files']['counts'])
    for name, sel in selections.strategies.items():
        write_selection(sel, output_dir / strategy_file_name(name))
    with open(output_dir / config['files']['selections'], 'w', encoding='utf-8') as f:
        json.dump({'settings': cfg.settings(), 'pvalues': selections.pvalues,
                   'strategies': {k: v.to_dict() for k, v in selections.strategies.items()}}, f, indent=2)

    logger.log('SUCCESS', f"Wrote {len(selections.strategies)} selections to {output_dir}")
    return True


def _load_selections(output_dir, config):
    path = output_dir / config['files']['selections']
    if not path.exists():
        raise FileNotFoundError(f"Selections file not found: {path} (run 'select' first)")
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    return {name: SelectionResult.from_dict(d) for name, d in data['strategies'].items()}


def run_fit(args, config, logger):
    """``fit`` command: one Ridge model per selection, saved as JSON."""
    cfg = pipeline_config_from_args(args, config, need_data=True)
    output_dir = Path(cfg.output_dir)
    samples = load_samples(cfg.data_path)
    split = _load_split(samples, cfg, output_dir, config, logger)
    selections = _load_selections(output_dir, config)

    models_dir = output_dir / config['dirs']['models']
    ensure_dir(models_dir)
    fits = fit_strategies(samples, split, selections, cfg, logger)
    for name, fit in fits.items():
        with open(models_dir / f"{Path(strategy_file_name(name)).stem}.json", 'w', encoding='utf-8') as f:
            json.dump({'strategy': name, 'fit': fit.to_dict()}, f, indent=2)

    logger.log('SUCCESS', f"Fitted {len(fits)} Ridge models into {models_dir}")
    return True


def run_evaluate(args, config, logger):
    """``evaluate`` command: validation MAE of every saved model."""
    cfg = pipeline_config_from_args(args, config, need_data=True)
    output_dir = Path(cfg.output_dir)
    samples = load_samples(cfg.data_path)
    split = _load_split(samples, cfg, output_dir, config, logger)

    models_dir = output_dir / config['dirs']['models']
    model_files = sorted(models_dir.glob('*.json')) if models_dir.exists() else []
    if not model_files:
        raise FileNotFoundError(f"No models found in {models_dir} (run 'fit' first)")
    fits = {}
    for path in model_files:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        fits[data['strategy']] = ModelFit.from_dict(data['fit'])

    scores = evaluate_fits(samples, split, fits)
    rows = sorted(((name, len(fit.variables_used), scores[name]) for name, fit in fits.items()),
                  key=lambda row: (row[1], row[0]))
    report_io.write_mae_vs_k(rows, output_dir / config['files']['mae_vs_k'])
    for name, n_used, score in rows:
        logger.log('INFO', f"{name}: {n_used} variables, validation MAE {score:.6f}")
    logger.log('SUCCESS', f"Evaluation written to {output_dir / config['files']['mae_vs_k']}")
    return True


def run(args, config, logger):
    """``pipeline`` command: every stage end to end, then the report files."""
    cfg = pipeline_config_from_args(args, config)
    output_dir = Path(cfg.output_dir)
    ensure_dir(output_dir)
    report = run_pipeline(cfg, logger, progress=not args.quiet)
    written = report_io.emit_report(report, output_dir)
    logger.log('SUCCESS', f"Report written to {output_dir} ({len(written)} files)")
    return report


def run_compare(args, config, logger):
    """``compare`` command: strategy table on stdout and comparison.csv."""
    output_dir = Path(args.output)
    report_file = Path(args.report) if getattr(args, 'report', None) else output_dir / config['files']['report']
    if report_file.exists():
        logger.log('INFO', f"Comparing strategies from {report_file}")
        report = load_report(report_file)
    else:
        report = run(args, config, logger)

    rows = compare_strategies(report)
    ensure_dir(output_dir)
    report_io.write_mae_vs_k(rows, output_dir / config['files']['comparison'])
    print(report_io.format_comparison(rows))
    return True
