"""Synthetic design-of-experiments mixture spectra with known informative variables."""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .datamodel import SampleSet, emit_samples
from .utils import CONFIG, ensure_dir, rng_for


@dataclass(frozen=True, eq=False)
class MixtureDesign:
    n_components: int
    levels: Tuple[Tuple[float, ...], ...]
    rows: np.ndarray   # [sample][component] concentrations
    seed: int

    @property
    def n_rows(self):
        return self.rows.shape[0]


@dataclass(frozen=True)
class ComponentSignature:
    peaks: Tuple[Tuple[float, float, float], ...]   # (center, width, height)
    n_vars: int

    def __post_init__(self):
        if self.n_vars < 1:
            raise ValueError(f"signature needs n_vars >= 1, got {self.n_vars}")
        if not self.peaks:
            raise ValueError("signature needs at least one peak")
        peaks = tuple((float(c), float(w), float(h)) for c, w, h in self.peaks)
        for center, width, height in peaks:
            if not 0 <= center < self.n_vars:
                raise ValueError(f"peak center {center} outside [0, {self.n_vars})")
            if not width > 0:
                raise ValueError(f"peak width must be > 0, got {width}")
            # zero height is accepted so that blank components can be modelled
            if not height >= 0:
                raise ValueError(f"peak height must be >= 0, got {height}")
        object.__setattr__(self, 'peaks', peaks)


@dataclass(frozen=True)
class GeneratorConfig:
    n_samples: int = CONFIG['generator']['n_samples']
    n_components: int = CONFIG['generator']['n_components']
    n_levels: int = CONFIG['generator']['n_levels']
    n_reps: int = CONFIG['generator']['n_reps']
    n_vars: int = CONFIG['generator']['n_vars']
    noise_sigma: float = CONFIG['generator']['noise_sigma']
    signatures: Union[str, Sequence[ComponentSignature]] = 'auto'
    seed: int = CONFIG['generator']['seed']
    level_low: float = CONFIG['generator']['level_low']
    level_high: float = CONFIG['generator']['level_high']
    peak_width: float = CONFIG['generator']['peak_width']

    def __post_init__(self):
        if not math.isfinite(self.noise_sigma):
            raise ValueError(f"noise_sigma must be finite, got {self.noise_sigma}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not self.peak_width > 0:
            raise ValueError(f"peak_width must be > 0, got {self.peak_width}")
        for name in ('n_samples', 'n_components', 'n_levels', 'n_reps', 'n_vars'):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.signatures != 'auto':
            sigs = tuple(self.signatures)
            if len(sigs) != self.n_components:
                raise ValueError(f"{len(sigs)} signatures for {self.n_components} components")
            if any(sig.n_vars != self.n_vars for sig in sigs):
                raise ValueError(f"every signature must span {self.n_vars} variables")
            object.__setattr__(self, 'signatures', sigs)

    def to_dict(self):
        return {
            'n_samples': self.n_samples,
            'n_components': self.n_components,
            'n_levels': self.n_levels,
            'n_reps': self.n_reps,
            'n_vars': self.n_vars,
            'noise_sigma': self.noise_sigma,
            'signatures': 'auto' if self.signatures == 'auto' else [
                [list(p) for p in sig.peaks] for sig in self.signatures],
            'seed': self.seed,
            'level_low': self.level_low,
            'level_high': self.level_high,
            'peak_width': self.peak_width,
        }


def default_levels(n_levels, low=CONFIG['generator']['level_low'], high=CONFIG['generator']['level_high']):
    if n_levels == 1:
        return (float(low),)
    return tuple(float(v) for v in np.linspace(low, high, n_levels))


def build_design(n_components, n_levels, n_samples, seed, levels=None) -> MixtureDesign:
    """Full factorial when ``n_samples`` fills the space, else a seeded subset.

    Rows are in lexicographic order of level indices either way.
    """
    total = n_levels ** n_components
    if n_samples > total:
        raise ValueError(f"design space exhausted ({total} < {n_samples})")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if levels is None:
        levels = default_levels(n_levels)
    per_component = tuple(tuple(levels) for _ in range(n_components))

    if n_samples == total:
        codes = np.arange(total)
    else:
        codes = np.sort(np.random.default_rng(seed).choice(total, size=n_samples, replace=False))
    index = np.stack(np.unravel_index(codes, (n_levels,) * n_components), axis=1)
    rows = np.asarray(levels, dtype=np.float64)[index]
    rows.setflags(write=False)
    return MixtureDesign(n_components, per_component, rows, int(seed))


def signature_vector(sig: ComponentSignature) -> np.ndarray:
    v = np.arange(sig.n_vars, dtype=np.float64)
    out = np.zeros(sig.n_vars)
    for center, width, height in sig.peaks:
        out += height * np.exp(-((v - center) ** 2) / (2.0 * width ** 2))
    return out


def peak_slots(n_components, n_vars, width=CONFIG['generator']['peak_width'],
               spacing=CONFIG['generator']['peak_spacing']):
    """Evenly spaced slot centres for ``auto_signatures``, centred on the axis.

    Slots are ``spacing * width`` apart, closer when the axis is too short.
    """
    n_slots = n_components + (2 if n_components > 1 else 1)
    step = min(spacing * width, (n_vars - 1) / (n_slots - 1))
    first = (n_vars - 1) / 2.0 - step * (n_slots - 1) / 2.0
    return np.clip(first + step * np.arange(n_slots), 0.0, n_vars - 1)


def auto_signatures(n_components, n_vars, seed, width=CONFIG['generator']['peak_width'],
                    spacing=CONFIG['generator']['peak_spacing']):
    """Two-peak signatures laid out across one absorption window.

    The two outer slots are shared bands: half of the components peak
    together at the left end, the other half at the right end. Every
    component's second peak takes its own inner slot. Both assignments and
    the peak heights, drawn from [0.5, 1.5], come from ``seed``.
    """
    slots = peak_slots(n_components, n_vars, width, spacing)
    rng = rng_for(seed, 0xB0)
    ends = rng.permutation(n_components)
    inner = rng.permutation(n_components)
    n_left = (n_components + 1) // 2

    centers = [[] for _ in range(n_components)]
    for k in ends[:n_left]:
        centers[k].append(slots[0])
    for k in ends[n_left:]:
        centers[k].append(slots[-1])
    for s, k in enumerate(inner, start=1):
        centers[k].append(slots[s])

    signatures = []
    for k in range(n_components):
        peaks = tuple((float(c), float(width), float(rng.uniform(0.5, 1.5))) for c in sorted(centers[k]))
        signatures.append(ComponentSignature(peaks, n_vars))
    return tuple(signatures)


def synthesize_sample(concentrations, signatures, n_reps, noise_sigma, rng_stream) -> np.ndarray:
    """Additive mixture spectrum per repetition plus iid Gaussian noise.

    ``rng_stream`` is one generator shared by all repetitions or a sequence
    with one generator per repetition.
    """
    concentrations = np.asarray(concentrations, dtype=np.float64)
    if len(concentrations) != len(signatures):
        raise ValueError(f"{len(concentrations)} concentrations for {len(signatures)} signatures")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    n_vars = signatures[0].n_vars
    clean = np.zeros(n_vars)
    for conc, sig in zip(concentrations, signatures):
        clean += conc * signature_vector(sig)

    out = np.tile(clean, (n_reps, 1))
    if noise_sigma > 0:
        if isinstance(rng_stream, np.random.Generator):
            out += rng_stream.normal(0.0, noise_sigma, size=(n_reps, n_vars))
        else:
            streams = list(rng_stream)
            if len(streams) != n_reps:
                raise ValueError(f"{len(streams)} random streams for {n_reps} repetitions")
            for r, stream in enumerate(streams):
                out[r] += stream.normal(0.0, noise_sigma, size=n_vars)
    return out


def ground_truth_variables(signatures, threshold=CONFIG['generator']['truth_threshold']):
    total = np.sum([signature_vector(sig) for sig in signatures], axis=0)
    peak = total.max()
    if peak <= 0:
        return ()
    return tuple(int(v) for v in np.flatnonzero(total > threshold * peak))


def generate_dataset(cfg: GeneratorConfig):
    """Return ``(SampleSet, ground_truth)`` for ``cfg``; bit-identical per seed."""
    levels = default_levels(cfg.n_levels, cfg.level_low, cfg.level_high)
    design = build_design(cfg.n_components, cfg.n_levels, cfg.n_samples, cfg.seed, levels)
    if cfg.signatures == 'auto':
        signatures = auto_signatures(cfg.n_components, cfg.n_vars, cfg.seed, cfg.peak_width)
    else:
        signatures = cfg.signatures

    measurements = np.empty((cfg.n_samples, cfg.n_reps, cfg.n_vars))
    for i, concentrations in enumerate(design.rows):
        streams = [rng_for(cfg.seed, i, r) for r in range(cfg.n_reps)]
        measurements[i] = synthesize_sample(concentrations, signatures, cfg.n_reps, cfg.noise_sigma, streams)

    sample_ids = tuple(f"S{i + 1:04d}" for i in range(cfg.n_samples))
    samples = SampleSet(measurements, design.rows, sample_ids)
    return samples, ground_truth_variables(signatures)


def write_ground_truth(indices, path):
    pd.DataFrame({'variable': [int(v) for v in indices]}).to_csv(path, index=False, lineterminator='\n')
    return path


def read_ground_truth(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Ground truth file not found: {path}")
    frame = pd.read_csv(path)
    if list(frame.columns) != ['variable']:
        raise ValueError(f"{path}: expected a single 'variable' column")
    return tuple(sorted(int(v) for v in frame['variable']))


def config_from_args(args):
    defaults = CONFIG['generator']

    def pick(name, cast):
        value = getattr(args, name, None)
        return cast(defaults[name] if value is None else value)

    return GeneratorConfig(
        n_samples=pick('n_samples', int),
        n_components=pick('n_components', int),
        n_levels=pick('n_levels', int),
        n_reps=pick('n_reps', int),
        n_vars=pick('n_vars', int),
        noise_sigma=pick('noise_sigma', float),
        seed=pick('seed', int),
        peak_width=pick('peak_width', float),
    )


def run(args, config, logger):
    """``generate`` command: write data.csv and ground_truth.csv to the output directory."""
    gen_cfg = config_from_args(args)
    output_dir = Path(args.output)
    ensure_dir(output_dir)
    logger.log('INFO', f"Generating {gen_cfg.n_samples} samples x {gen_cfg.n_reps} reps x "
                       f"{gen_cfg.n_vars} variables (seed {gen_cfg.seed}, noise {gen_cfg.noise_sigma})")

    samples, truth = generate_dataset(gen_cfg)
    data_file = output_dir / config['files']['data']
    truth_file = output_dir / config['files']['ground_truth']
    emit_samples(samples, data_file)
    write_ground_truth(truth, truth_file)

    logger.log('SUCCESS', f"Wrote {data_file} ({len(truth)} informative variables in {truth_file})")
    return True
