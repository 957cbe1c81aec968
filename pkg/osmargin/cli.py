"""Command-line entry point: ``osmargin <command> [--config PATH] [flags]``."""
import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .constants import (
    CHECKPOINT_FILE,
    COMPARE_FILE,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_RUNTIME_ERROR,
    FLOAT_FORMAT,
    FULL_SIZE_LABEL,
    LOG_FORMAT,
    LOSS_BINARY_OSM,
    LOSS_CTC,
    LOSS_OSM_CTC,
    MODEL_MLP,
    OCR_FILE,
    OSM_LOSSES,
    REPORT_FILE,
    SCALED_DOWN_LABEL,
    SEQUENCE_LOSSES,
    SUMMARY_FILE,
    SWEEP_FILE,
    SWEEP_KEYS,
    THREADS_ENV_VAR,
)
from .exceptions import ConfigError, ContractViolationError, DatasetError
from .gradcheck import run_all
from .losses import HyperParams
from .models import init_model, save_checkpoint
from .settings import OVERRIDE_FIELDS, DatasetSpec, RunConfig, hyperparams_for, load_run_config
from .train import RepeatSummary, TrainReport, epochs_to_accuracy, margin_stats, train_classifier, train_ctc

logger = logging.getLogger(__name__)


def _fmt(value: Optional[float]) -> str:
    return '' if value is None else format(float(value), FLOAT_FORMAT)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {path}", extra={'path': str(path), 'rows': len(rows)})


def _resolve(spec: DatasetSpec, seed: int):
    """Resolve a dataset up front so source errors surface as config errors"""
    try:
        return spec.resolve(seed)
    except ContractViolationError as e:
        raise ConfigError('data' if spec.name == 'data' else f'data.{spec.name}', str(e))


@dataclass(frozen=True)
class Cell:
    """One training run of an experiment grid"""
    loss_kind: str
    seed: int
    train_data: object
    eval_data: object
    hp: Optional[HyperParams] = None
    hidden: Optional[int] = None
    model_kind: Optional[str] = None


def run_cell(config: RunConfig, cell: Cell) -> TrainReport:
    train_config = replace(config.train, loss_kind=cell.loss_kind, seed=cell.seed, hp=cell.hp or config.train.hp)
    run_config = config if cell.model_kind is None else replace(
        config, model=replace(config.model, kind=cell.model_kind)
    )
    model_config = run_config.model_config(cell.train_data, cell.loss_kind, cell.hidden)
    model = init_model(model_config, cell.seed)
    if cell.loss_kind in SEQUENCE_LOSSES:
        return train_ctc(train_config, model, cell.train_data, cell.eval_data)
    return train_classifier(train_config, model, cell.train_data, cell.eval_data)


def run_cells(config: RunConfig, cells: Sequence[Cell]) -> List[TrainReport]:
    """Run independent cells on worker threads; results come back in grid order"""
    if not cells:
        return []
    workers = config.worker_count(len(cells))
    logger.info(f"Running {len(cells)} training runs on {workers} threads",
                extra={'cells': len(cells), 'threads': workers})
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_cell, config, cell) for cell in cells]
        return [future.result() for future in futures]


def _final_accuracy(reports: Sequence[TrainReport]) -> RepeatSummary:
    return RepeatSummary.of([report.final_eval_accuracy or 0.0 for report in reports])


def cmd_train(config: RunConfig, args) -> int:
    """Train one model and write report.csv, summary.txt and model.ckpt"""
    train_data, eval_data = _resolve(config.dataset, config.seed)
    cell = Cell(config.train.loss_kind, config.seed, train_data, eval_data)
    report = run_cell(config, cell)

    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / REPORT_FILE)
    summary = report.summary()
    if config.train.loss_kind in OSM_LOSSES and config.train.loss_kind != LOSS_BINARY_OSM:
        stats = margin_stats(report.model, train_data, config.train.hp)
        summary += (
            f'true_score_quantiles = {stats.true_quantiles}\n'
            f'off_score_quantiles = {stats.off_quantiles}\n'
            f'in_band_fraction = {stats.in_band_fraction:.6f}\n'
            f'beyond_lambda_max_fraction = {stats.beyond_fraction:.6f}\n'
        )
    (out / SUMMARY_FILE).write_text(summary, encoding='utf-8')
    save_checkpoint(report.model, out / CHECKPOINT_FILE)
    logger.info(f"Finished {config.train.loss_kind} run in {out}",
                extra={'loss_kind': config.train.loss_kind, 'path': str(out)})
    return EXIT_OK


def cmd_sweep(config: RunConfig, args) -> int:
    """One row per grid point with the mean final eval accuracy over repeats"""
    points = config.sweep_points()
    resolved = {seed: _resolve(config.dataset, seed) for seed in config.seeds()}
    cells = []
    for point in points:
        if point.reason is not None:
            logger.warning(f"Rejected sweep row {point.values}: {point.reason}", extra={'row': point.values})
            continue
        hp = hyperparams_for(config.train.hp, point.values)
        for seed in config.seeds():
            cells.append(Cell(config.train.loss_kind, seed, *resolved[seed], hp=hp))
    reports = iter(run_cells(config, cells))

    rows = []
    for point in points:
        values = [_fmt(point.values[key]) for key in SWEEP_KEYS]
        if point.reason is not None:
            rows.append(values + ['', point.reason])
            continue
        summary = _final_accuracy([next(reports) for _ in config.seeds()])
        rows.append(values + [_fmt(summary.mean), ''])
    _write_csv(config.out_dir / SWEEP_FILE, list(SWEEP_KEYS) + ['accuracy', 'reason'], rows)
    return EXIT_OK


def _mean_epochs_to_target(reports: Sequence[TrainReport], target: Optional[float]) -> Optional[float]:
    if target is None:
        return None
    epochs = [epochs_to_accuracy(report, target) for report in reports]
    if any(epoch is None for epoch in epochs):
        return None
    return float(np.mean(epochs))


def cmd_compare(config: RunConfig, args) -> int:
    """Accuracy per (loss, dataset) plus an improvement row for the OSM loss"""
    for spec in config.compare_datasets:
        if spec.is_sequence:
            raise ConfigError('compare.datasets', f'{spec.name!r} is a sequence dataset')
    resolved = {(spec.name, seed): _resolve(spec, seed)
                for spec in config.compare_datasets for seed in config.seeds()}
    grid = [(spec, loss_kind) for spec in config.compare_datasets for loss_kind in config.compare_losses]
    cells = [Cell(loss_kind, seed, *resolved[spec.name, seed])
             for spec, loss_kind in grid for seed in config.seeds()]
    reports = iter(run_cells(config, cells))

    rows = []
    for spec in config.compare_datasets:
        accuracies: Dict[str, float] = {}
        for loss_kind in config.compare_losses:
            cell_reports = [next(reports) for _ in config.seeds()]
            summary = _final_accuracy(cell_reports)
            accuracies[loss_kind] = summary.mean
            rows.append([loss_kind, spec.name, _fmt(summary.mean), _fmt(summary.low), _fmt(summary.high),
                         _fmt(_mean_epochs_to_target(cell_reports, config.compare_target))])
        osm = [kind for kind in config.compare_losses if kind in OSM_LOSSES]
        baselines = [kind for kind in config.compare_losses if kind not in OSM_LOSSES]
        if osm and baselines:
            improvement = accuracies[osm[0]] - max(accuracies[kind] for kind in baselines)
            rows.append(['improvement', spec.name, _fmt(improvement), '', '', ''])
    header = ['loss', 'dataset', 'accuracy', 'accuracy_min', 'accuracy_max', 'epochs_to_target']
    _write_csv(config.out_dir / COMPARE_FILE, header, rows)
    return EXIT_OK


def cmd_gradcheck(config: RunConfig, args) -> int:
    """Exit 0 iff every finite-difference suite is within tolerance"""
    if args.count == 0:
        logger.warning("Gradient check with count=0 checks nothing")
    results = run_all(config.seed, args.count)
    for result in results:
        print(result)
    return EXIT_OK if all(result.passed for result in results) else EXIT_RUNTIME_ERROR


def cmd_ocr_compare(config: RunConfig, args) -> int:
    """Exact-match accuracy of each CTC loss on a full and a scaled-down model"""
    if not config.dataset.is_sequence:
        raise ConfigError('data.source', 'ocr-compare needs source = ocr')
    sizes: List[Tuple[str, int]] = [(FULL_SIZE_LABEL, config.ocr_hidden),
                                    (SCALED_DOWN_LABEL, config.ocr_scaled_down_hidden)]
    resolved = {seed: _resolve(config.dataset, seed) for seed in config.seeds()}
    cells = [Cell(loss_kind, seed, *resolved[seed], hidden=hidden, model_kind=MODEL_MLP)
             for _, hidden in sizes for loss_kind in config.ocr_losses for seed in config.seeds()]
    reports = iter(run_cells(config, cells))

    rows = []
    for label, hidden in sizes:
        accuracies = {loss_kind: _final_accuracy([next(reports) for _ in config.seeds()]).mean
                      for loss_kind in config.ocr_losses}
        improvement = None
        if set(SEQUENCE_LOSSES) <= set(accuracies):
            improvement = accuracies[LOSS_OSM_CTC] - accuracies[LOSS_CTC]
        rows.append([label, str(hidden)] + [_fmt(accuracies[k]) for k in config.ocr_losses] + [_fmt(improvement)])
    header = ['model', 'hidden'] + list(config.ocr_losses) + ['improvement']
    _write_csv(config.out_dir / OCR_FILE, header, rows)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    'train': cmd_train,
    'sweep': cmd_sweep,
    'compare': cmd_compare,
    'gradcheck': cmd_gradcheck,
    'ocr-compare': cmd_ocr_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='osmargin', description='One-sided margin loss experiments')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, handler in COMMANDS.items():
        sub = subparsers.add_parser(name, help=(handler.__doc__ or '').strip())
        sub.add_argument('--config', type=Path, help='run configuration file')
        sub.add_argument('--seed', type=int)
        sub.add_argument('--verbose', '-v', action='store_true', help='debug logging')
        if name == 'gradcheck':
            sub.add_argument('--count', type=int, default=100, help='random instances per suite')
            continue
        sub.add_argument('--loss', help='loss kind')
        sub.add_argument('--epochs', type=int)
        sub.add_argument('--out', type=Path, help='output directory')
        sub.add_argument('--lr', type=float, help='initial learning rate')
        sub.add_argument('--batch-size', type=int)
        sub.add_argument('--repeat', type=int, help='seeds per cell')
        sub.add_argument('--threads', type=int, help=f'worker threads (also capped by {THREADS_ENV_VAR})')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    overrides = {flag: getattr(args, flag, None) for flag in OVERRIDE_FIELDS}
    try:
        config = load_run_config(args.config, overrides)
        return COMMANDS[args.command](config, args)
    except (ConfigError, DatasetError) as e:
        logger.error(f"Configuration error: {e}", extra={'command': args.command})
        return EXIT_CONFIG_ERROR
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True, extra={'command': args.command})
        return EXIT_RUNTIME_ERROR


if __name__ == '__main__':
    sys.exit(main())
