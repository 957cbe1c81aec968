"""Run configuration.

A config file is ``key = value`` lines under ``[section]`` headers, parsed
with :mod:`configparser` (no interpolation, ``#`` and ``;`` comments). Every
key is optional; unknown sections or keys are rejected so typos do not pass
silently. See README.md for the full grammar.

Flag overrides (``--loss``, ``--seed`` ...) are applied after the file and
always win.
"""
import configparser
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

from .constants import (
    ALL_LOSSES,
    CLASSIFICATION_LOSSES,
    DEFAULT_HIDDEN,
    DEFAULT_SEED,
    ERROR_MESSAGES,
    EVAL_SEED_OFFSET,
    LOSS_CE,
    LOSS_CTC,
    LOSS_HINGE,
    LOSS_OSM_CTC,
    LOSS_SOFT_OSM,
    MODEL_LINEAR,
    MODEL_MLP,
    OPTIMIZER_ADAM,
    OPTIMIZER_SGD,
    SEQUENCE_LOSSES,
    SWEEP_KEYS,
    THREADS_ENV_VAR,
)
from .data import LabeledDataset, SequenceDataset, gen_blobs, gen_ocr_sequences, gen_rings, load_csv, split_dataset
from .exceptions import ConfigError, ContractViolationError, InvalidHyperParamsError
from .losses import HyperParams, get_loss
from .models import ModelConfig
from .optim import AdamConfig, LrSchedule, SgdConfig
from .train import TrainConfig, default_schedule, head_width

logger = logging.getLogger(__name__)

SOURCE_BLOBS = 'blobs'
SOURCE_RINGS = 'rings'
SOURCE_CSV = 'csv'
SOURCE_OCR = 'ocr'
DATA_SOURCES = (SOURCE_BLOBS, SOURCE_RINGS, SOURCE_CSV, SOURCE_OCR)

KNOWN_KEYS = {
    'run': {'out', 'seed', 'repeat', 'threads'},
    'data': {'source', 'path', 'eval_path', 'eval_fraction', 'n_per_class', 'classes', 'dim', 'spread',
             'count', 'eval_count', 'alphabet_size', 'min_len', 'max_len', 'repeats', 'noise'},
    'model': {'kind', 'hidden'},
    'train': {'loss', 'epochs', 'batch_size', 'optimizer', 'lr', 'momentum', 'weight_decay',
              'schedule', 'period', 'warmup', 'decay_rate', 'min_lr'},
    'osm': {'alpha', 'lambda', 'lambda_min', 'lambda_max', 'hinge_margin'},
    'sweep': set(SWEEP_KEYS) | {'pairs'},
    'compare': {'losses', 'datasets', 'target'},
    'ocr': {'losses', 'hidden', 'scaled_down_hidden'},
}

# flag name -> (section, key)
OVERRIDE_FIELDS = {
    'loss': ('train', 'loss'),
    'seed': ('run', 'seed'),
    'epochs': ('train', 'epochs'),
    'out': ('run', 'out'),
    'lr': ('train', 'lr'),
    'batch_size': ('train', 'batch_size'),
    'repeat': ('run', 'repeat'),
    'threads': ('run', 'threads'),
}


@dataclass(frozen=True)
class DatasetSpec:
    """Where a dataset comes from; synthetic eval sets use seed + EVAL_SEED_OFFSET"""
    name: str = 'data'
    source: str = SOURCE_BLOBS
    path: Optional[Path] = None
    eval_path: Optional[Path] = None
    eval_fraction: float = 0.2
    n_per_class: int = 100
    classes: int = 2
    dim: int = 2
    spread: float = 1.0
    count: int = 200
    eval_count: int = 100
    alphabet_size: int = 4
    min_len: int = 2
    max_len: int = 5
    repeats: int = 2
    noise: float = 0.3

    @property
    def is_sequence(self) -> bool:
        return self.source == SOURCE_OCR

    def resolve(self, seed: int) -> Tuple[Union[LabeledDataset, SequenceDataset], Union[LabeledDataset, SequenceDataset]]:
        """(train, eval) datasets for this spec.

        Raises:
            DatasetError: for unreadable CSV sources
        """
        eval_seed = seed + EVAL_SEED_OFFSET
        if self.source == SOURCE_BLOBS:
            return (gen_blobs(self.n_per_class, self.classes, self.dim, self.spread, seed),
                    gen_blobs(self.n_per_class, self.classes, self.dim, self.spread, eval_seed))
        if self.source == SOURCE_RINGS:
            return gen_rings(self.n_per_class, seed), gen_rings(self.n_per_class, eval_seed)
        if self.source == SOURCE_OCR:
            def make(count, stream_seed):
                return gen_ocr_sequences(count, self.alphabet_size, self.min_len, self.max_len,
                                         self.repeats, self.noise, stream_seed)
            return make(self.count, seed), make(self.eval_count, eval_seed)

        train, label_map = load_csv(self.path)
        if self.eval_path is None:
            return split_dataset(train, self.eval_fraction, seed)
        eval_data, _ = load_csv(self.eval_path, label_map)
        return train, eval_data


@dataclass(frozen=True)
class ModelSpec:
    kind: str = MODEL_LINEAR
    hidden: int = DEFAULT_HIDDEN

    def config_for(self, input_dim: int, output_dim: int) -> ModelConfig:
        return ModelConfig(input_dim, output_dim, kind=self.kind, hidden=self.hidden)


@dataclass(frozen=True)
class SweepPoint:
    """One grid row; ``reason`` is set when the row is rejected"""
    values: Dict[str, float]
    reason: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: Path = Path('.')
    repeat: int = 1
    threads: Optional[int] = None
    sweep: Dict[str, Tuple[float, ...]] = field(default_factory=dict)
    sweep_pairs: Tuple[Tuple[float, float], ...] = ()
    compare_losses: Tuple[str, ...] = (LOSS_SOFT_OSM, LOSS_CE, LOSS_HINGE)
    compare_datasets: Tuple[DatasetSpec, ...] = ()
    compare_target: Optional[float] = None
    ocr_losses: Tuple[str, ...] = (LOSS_CTC, LOSS_OSM_CTC)
    ocr_hidden: int = DEFAULT_HIDDEN
    ocr_scaled_down_hidden: int = DEFAULT_HIDDEN // 4

    @property
    def seed(self) -> int:
        return self.train.seed

    def seeds(self) -> List[int]:
        """Seeds of the repeated runs: seed, seed+1, ..."""
        return [self.seed + r for r in range(self.repeat)]

    def worker_count(self, cells: int) -> int:
        """Threads for ``cells`` independent runs, capped by OSMARGIN_THREADS"""
        limit = self.threads or os.cpu_count() or 1
        env = os.environ.get(THREADS_ENV_VAR)
        if env:
            try:
                limit = min(limit, max(1, int(env)))
            except ValueError:
                raise ConfigError(THREADS_ENV_VAR, f'not an integer: {env!r}')
        return max(1, min(limit, cells))

    def model_config(self, train_data, loss_kind: str, hidden: Optional[int] = None) -> ModelConfig:
        """Model shape for a resolved dataset and loss kind"""
        if loss_kind in SEQUENCE_LOSSES:
            output_dim = head_width(loss_kind, train_data.alphabet.size)
        else:
            output_dim = get_loss(loss_kind, self.train.hp).output_dim(train_data.class_count)
        spec = self.model if hidden is None else replace(self.model, hidden=hidden)
        return spec.config_for(train_data.dim, output_dim)

    def sweep_points(self) -> List[SweepPoint]:
        """One-factor-at-a-time rows in config order, then the explicit pairs.

        Raises:
            ConfigError: if the grid is empty
        """
        base = {
            'alpha': self.train.hp.alpha,
            'lambda': self.train.hp.lam,
            'lambda_max': self.train.hp.lambda_max,
            'lambda_min': self.train.hp.lambda_min,
        }
        points = []
        for key, values in self.sweep.items():
            for value in values:
                points.append(_sweep_point(self.train.hp, {**base, key: value}))
        for lambda_max, lambda_min in self.sweep_pairs:
            points.append(_sweep_point(self.train.hp, {**base, 'lambda_max': lambda_max, 'lambda_min': lambda_min}))
        if not points:
            raise ConfigError('sweep', 'grid is empty')
        return points


def _sweep_point(hp: HyperParams, values: Dict[str, float]) -> SweepPoint:
    if values['lambda_max'] <= values['lambda_min']:
        return SweepPoint(values, ERROR_MESSAGES['sweep_rejected'])
    try:
        hyperparams_for(hp, values)
    except InvalidHyperParamsError as e:
        return SweepPoint(values, e.reason)
    return SweepPoint(values)


def hyperparams_for(hp: HyperParams, values: Mapping[str, float]) -> HyperParams:
    return replace(hp, alpha=values['alpha'], lam=values['lambda'],
                   lambda_max=values['lambda_max'], lambda_min=values['lambda_min'])


class _Section:
    """Typed access to one config section with field-named errors"""

    def __init__(self, name: str, values: Mapping[str, str]):
        self.name = name
        self.values = values

    def __contains__(self, key):
        return key in self.values

    def _convert(self, key, convert, kind):
        raw = self.values[key].strip()
        try:
            return convert(raw)
        except ValueError:
            raise ConfigError(f'{self.name}.{key}', f'not {kind}: {raw!r}')

    def text(self, key, default=None):
        return self.values[key].strip() if key in self.values else default

    def integer(self, key, default=None):
        return self._convert(key, int, 'an integer') if key in self.values else default

    def number(self, key, default=None):
        return self._convert(key, float, 'a number') if key in self.values else default

    def numbers(self, key) -> Tuple[float, ...]:
        return tuple(self._convert(key, lambda raw: [float(v) for v in _split(raw)], 'a list of numbers'))

    def names(self, key, default=()) -> Tuple[str, ...]:
        return tuple(_split(self.values[key])) if key in self.values else default


def _split(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(',') if item.strip()]


def _read_file(path: Optional[Union[str, Path]]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    if path is None:
        return parser
    path = Path(path)
    if not path.is_file():
        raise ConfigError('--config', f'file not found: {path}')
    try:
        with path.open(encoding='utf-8') as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError('--config', str(e).splitlines()[0])
    return parser


def _check_known(parser: configparser.ConfigParser) -> None:
    for section in parser.sections():
        known = KNOWN_KEYS['data'] if section.startswith('data.') else KNOWN_KEYS.get(section)
        if known is None:
            raise ConfigError(section, 'unknown section')
        for key in parser[section]:
            if key not in known:
                raise ConfigError(f'{section}.{key}', 'unknown key')


def _section(parser: configparser.ConfigParser, name: str) -> _Section:
    return _Section(name, dict(parser[name]) if parser.has_section(name) else {})


def _dataset_spec(section: _Section, name: str) -> DatasetSpec:
    source = section.text('source', SOURCE_BLOBS)
    if source not in DATA_SOURCES:
        raise ConfigError(f'{section.name}.source', f'must be one of {", ".join(DATA_SOURCES)}')
    path = section.text('path')
    if source == SOURCE_CSV and not path:
        raise ConfigError(f'{section.name}.path')
    eval_path = section.text('eval_path')
    defaults = DatasetSpec()
    kwargs = dict(
        name=name,
        source=source,
        path=Path(path) if path else None,
        eval_path=Path(eval_path) if eval_path else None,
        eval_fraction=section.number('eval_fraction', defaults.eval_fraction),
        spread=section.number('spread', defaults.spread),
        noise=section.number('noise', defaults.noise),
    )
    for key in ('n_per_class', 'classes', 'dim', 'count', 'eval_count', 'alphabet_size',
                'min_len', 'max_len', 'repeats'):
        kwargs[key] = section.integer(key, getattr(defaults, key))
    return DatasetSpec(**kwargs)


def _optimizer(section: _Section, is_sequence: bool):
    name = section.text('optimizer', OPTIMIZER_ADAM if is_sequence else OPTIMIZER_SGD)
    kwargs = {}
    if 'lr' in section:
        kwargs['initial_lr'] = section.number('lr')
    if 'weight_decay' in section:
        kwargs['weight_decay'] = section.number('weight_decay')
    if name == OPTIMIZER_SGD:
        if 'momentum' in section:
            kwargs['momentum'] = section.number('momentum')
        return SgdConfig(**kwargs)
    if name == OPTIMIZER_ADAM:
        return AdamConfig(**kwargs)
    raise ConfigError('train.optimizer', f'must be {OPTIMIZER_SGD} or {OPTIMIZER_ADAM}')


def _schedule(section: _Section, loss_kind: str) -> Optional[LrSchedule]:
    keys = ('schedule', 'period', 'warmup', 'decay_rate', 'min_lr')
    if not any(key in section for key in keys):
        return None
    default = default_schedule(loss_kind)
    return LrSchedule(
        kind=section.text('schedule', default.kind),
        period_epochs=section.integer('period', default.period_epochs),
        warmup_epochs=section.integer('warmup', default.warmup_epochs),
        decay_rate=section.number('decay_rate', default.decay_rate),
        min_lr=section.number('min_lr', default.min_lr),
    )


def _hyperparams(section: _Section, is_sequence: bool) -> HyperParams:
    base = HyperParams.for_ocr() if is_sequence else HyperParams()
    return HyperParams(
        alpha=section.number('alpha', base.alpha),
        lam=section.number('lambda', base.lam),
        lambda_min=section.number('lambda_min', base.lambda_min),
        lambda_max=section.number('lambda_max', base.lambda_max),
        hinge_margin=section.number('hinge_margin', base.hinge_margin),
    )


def _train_config(parser, run: _Section, default_loss: str) -> TrainConfig:
    section = _section(parser, 'train')
    loss_kind = section.text('loss', default_loss)
    if loss_kind not in ALL_LOSSES:
        raise ConfigError('train.loss', f'unknown loss {loss_kind!r}')
    is_sequence = loss_kind in SEQUENCE_LOSSES
    try:
        hp = _hyperparams(_section(parser, 'osm'), is_sequence)
    except ContractViolationError as e:
        raise ConfigError('osm', str(e))
    kwargs = dict(
        seed=run.integer('seed', DEFAULT_SEED),
        optimizer=_optimizer(section, is_sequence),
        schedule=_schedule(section, loss_kind),
        hp=hp,
    )
    if 'epochs' in section:
        kwargs['epochs'] = section.integer('epochs')
    if 'batch_size' in section:
        kwargs['batch_size'] = section.integer('batch_size')
    if is_sequence:
        return TrainConfig.for_ocr(loss_kind, **kwargs)
    return TrainConfig(loss_kind=loss_kind, **kwargs)


def _apply_overrides(parser: configparser.ConfigParser, overrides: Mapping[str, object]) -> None:
    for flag, value in overrides.items():
        if value is None:
            continue
        if flag not in OVERRIDE_FIELDS:
            raise ConfigError(f'--{flag}', 'unknown override')
        section, key = OVERRIDE_FIELDS[flag]
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Parse a config file and apply flag overrides.

    Raises:
        ConfigError: naming the offending field
    """
    parser = _read_file(path)
    _check_known(parser)
    _apply_overrides(parser, overrides or {})

    run = _section(parser, 'run')
    dataset = _dataset_spec(_section(parser, 'data'), 'data')
    try:
        train = _train_config(parser, run, LOSS_OSM_CTC if dataset.is_sequence else LOSS_SOFT_OSM)
        model_section = _section(parser, 'model')
        model = ModelSpec(kind=model_section.text('kind', MODEL_LINEAR),
                          hidden=model_section.integer('hidden', DEFAULT_HIDDEN))
        if model.kind not in (MODEL_LINEAR, MODEL_MLP):
            raise ConfigError('model.kind', f'must be {MODEL_LINEAR} or {MODEL_MLP}')
        if model.hidden < 1:
            raise ConfigError('model.hidden', 'must be >= 1')
    except ContractViolationError as e:
        raise ConfigError('train', str(e))

    if dataset.is_sequence != (train.loss_kind in SEQUENCE_LOSSES):
        raise ConfigError('train.loss', f'{train.loss_kind!r} does not fit data source {dataset.source!r}')

    repeat = run.integer('repeat', 1)
    if repeat < 1:
        raise ConfigError('run.repeat', 'must be >= 1')
    threads = run.integer('threads')
    if threads is not None and threads < 1:
        raise ConfigError('run.threads', 'must be >= 1')

    sweep_section = _section(parser, 'sweep')
    sweep = {key: sweep_section.numbers(key) for key in sweep_section.values if key != 'pairs'}
    pairs = []
    for item in sweep_section.names('pairs'):
        try:
            lambda_max, lambda_min = (float(v) for v in item.split(':'))
        except ValueError:
            raise ConfigError('sweep.pairs', f'expected lambda_max:lambda_min, got {item!r}')
        pairs.append((lambda_max, lambda_min))

    compare = _section(parser, 'compare')
    compare_losses = compare.names('losses', RunConfig.compare_losses)
    for loss_kind in compare_losses:
        if loss_kind not in CLASSIFICATION_LOSSES:
            raise ConfigError('compare.losses', f'{loss_kind!r} is not a classification loss')
    datasets = []
    for name in compare.names('datasets'):
        section_name = f'data.{name}'
        if not parser.has_section(section_name):
            raise ConfigError(section_name)
        datasets.append(_dataset_spec(_section(parser, section_name), name))

    ocr = _section(parser, 'ocr')
    ocr_losses = ocr.names('losses', RunConfig.ocr_losses)
    for loss_kind in ocr_losses:
        if loss_kind not in SEQUENCE_LOSSES:
            raise ConfigError('ocr.losses', f'{loss_kind!r} is not a CTC loss')

    config = RunConfig(
        dataset=dataset,
        model=model,
        train=train,
        out_dir=Path(run.text('out', '.')),
        repeat=repeat,
        threads=threads,
        sweep=sweep,
        sweep_pairs=tuple(pairs),
        compare_losses=compare_losses,
        compare_datasets=tuple(datasets) or (dataset,),
        compare_target=compare.number('target'),
        ocr_losses=ocr_losses,
        ocr_hidden=ocr.integer('hidden', model.hidden),
        ocr_scaled_down_hidden=ocr.integer('scaled_down_hidden', max(1, model.hidden // 4)),
    )
    logger.debug(f"Loaded run config from {path}", extra={'path': str(path), 'loss_kind': train.loss_kind})
    return config
