import hashlib
import os
from pathlib import Path

import numpy as np

CONFIG = {
    'split': {
        'fraction': 0.75,
        'seed': 0,
    },
    'generator': {
        'n_samples': 250,
        'n_components': 6,
        'n_levels': 3,
        'n_reps': 5,
        'n_vars': 130,
        'noise_sigma': 2e-4,
        'level_low': 0.5,
        'level_high': 1.5,
        'peak_width': 2.0,
        'peak_spacing': 1.75,
        'truth_threshold': 1e-3,
        'seed': 0,
    },
    'permtest': {
        'mode': 'exact',
        'n_perm': 9999,
        'exhaustive_limit': 10 ** 6,
        'tie_rtol': 1e-12,
        'min_perm': 100,
        'chunk_size': 64,
    },
    'multiplicity': {
        'alpha': 0.05,
        'family_mode': 'per_variable',
        'auto_percentiles': (50, 75, 90),
        'percentile_scale': 'range',
    },
    'lasso': {
        'n_lambdas': 100,
        'lambda_min_ratio': 1e-4,
        'lambda_min_ratio_wide': 1e-2,
        'k_folds': 5,
        'tol': 1e-7,
        'max_iter': 10 ** 5,
        'support_eps': 1e-10,
        'max_dev_ratio': 0.999,
        'min_dev_change': 1e-5,
        'min_path_length': 5,
    },
    'ridge': {
        'grid': tuple(np.logspace(-4, 4, 33)),
        'k_folds': 5,
    },
    'dirs': {
        'models': 'models',
    },
    'files': {
        'data': 'data.csv',
        'ground_truth': 'ground_truth.csv',
        'split': 'split.json',
        'pvalues': 'pvalues.csv',
        'counts': 'counts.csv',
        'selections': 'selections.json',
        'selection_prefix': 'selection_',
        'report': 'report.json',
        'mae_vs_k': 'mae_vs_k.csv',
        'selection_map': 'selection_map.csv',
        'comparison': 'comparison.csv',
        'log': 'npcselect.log',
    },
    'threads': os.cpu_count() or 1,
}


def ensure_dir(path):
    Path(path).mkdir(parents=True, exist_ok=True)


def load_config_file(path):
    """Parse a flat ``key = value`` file into a dict of strings.

    Keys are normalized to argparse destinations (dashes become underscores).
    Raises ValueError on a line without ``=`` and FileNotFoundError when the
    file is missing.
    """
    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")

    values = {}
    with open(config_path, 'r', encoding='utf-8') as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ValueError(f"{config_path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = line.split('=', 1)
            key = key.strip().lstrip('-').replace('-', '_')
            if not key:
                raise ValueError(f"{config_path}:{lineno}: empty key")
            values[key] = value.strip()
    return values


def rng_for(seed, *keys):
    """Independent generator for a (seed, key...) substream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def array_digest(values):
    return hashlib.sha256(np.ascontiguousarray(values, dtype=np.float64).tobytes()).hexdigest()


def strategy_file_name(strategy):
    safe = strategy.replace('@', '_at_').replace('/', '_')
    return f"{CONFIG['files']['selection_prefix']}{safe}.csv"
