"""Mini-batch training for classifiers and CTC sequence recognizers."""
import csv
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_SEED,
    ERROR_MESSAGES,
    FLOAT_FORMAT,
    LOSS_CTC,
    LOSS_OSM_CTC,
    LOSS_SOFT_OSM,
    ALL_LOSSES,
    MARGIN_QUANTILES,
    OCR_BATCH_SIZE,
    SCHEDULE_COSINE,
    SCHEDULE_EXPONENTIAL,
    SEQUENCE_LOSSES,
)
from .ctc import (
    ctc_loss,
    greedy_decode,
    log_softmax_frames,
    log_softmax_frames_vjp,
    ocr_accuracy,
    osm_frame_log_probs,
    osm_frame_log_probs_vjp,
    required_frames,
)
from .data import LabeledDataset, SequenceDataset
from .exceptions import ContractViolationError, InfeasibleTargetError
from .losses import HyperParams, get_loss
from .models import Model, Params, backward, forward
from .optim import AdamConfig, LrSchedule, Optimizer, OptimizerConfig, SgdConfig, lr_at

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ('epoch', 'lr', 'train_loss', 'train_accuracy', 'eval_accuracy')


def default_schedule(loss_kind: str) -> LrSchedule:
    """Plain CTC trains with exponential decay, everything else with cosine restarts"""
    if loss_kind == LOSS_CTC:
        return LrSchedule(kind=SCHEDULE_EXPONENTIAL)
    return LrSchedule(kind=SCHEDULE_COSINE)


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = LOSS_SOFT_OSM
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = DEFAULT_SEED
    optimizer: OptimizerConfig = field(default_factory=SgdConfig)
    schedule: Optional[LrSchedule] = None
    hp: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        if self.loss_kind not in ALL_LOSSES:
            raise ContractViolationError(
                ERROR_MESSAGES['config_field'].format(field='loss', reason=f'unknown loss {self.loss_kind!r}')
            )
        if self.epochs < 0:
            raise ContractViolationError(ERROR_MESSAGES['config_field'].format(field='epochs', reason='must be >= 0'))
        if self.batch_size < 1:
            raise ContractViolationError(
                ERROR_MESSAGES['config_field'].format(field='batch_size', reason='must be >= 1')
            )

    @classmethod
    def for_ocr(cls, loss_kind: str = LOSS_OSM_CTC, **kwargs) -> 'TrainConfig':
        kwargs.setdefault('batch_size', OCR_BATCH_SIZE)
        kwargs.setdefault('optimizer', AdamConfig())
        kwargs.setdefault('hp', HyperParams.for_ocr())
        return cls(loss_kind=loss_kind, **kwargs)

    @property
    def resolved_schedule(self) -> LrSchedule:
        return self.schedule if self.schedule is not None else default_schedule(self.loss_kind)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    eval_accuracy: float
    seconds: float = 0.0


@dataclass
class TrainReport:
    loss_kind: str
    model: Model
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def final_train_accuracy(self) -> Optional[float]:
        return self.records[-1].train_accuracy if self.records else None

    @property
    def final_eval_accuracy(self) -> Optional[float]:
        return self.records[-1].eval_accuracy if self.records else None

    @property
    def lr_trace(self) -> List[float]:
        return [record.lr for record in self.records]

    def rows(self) -> List[List[str]]:
        return [
            [str(r.epoch)] + [format(v, FLOAT_FORMAT) for v in (r.lr, r.train_loss, r.train_accuracy, r.eval_accuracy)]
            for r in self.records
        ]

    def write_csv(self, path: Union[str, Path]) -> None:
        """One row per epoch; wall-clock time is left out so reruns are byte-identical"""
        with Path(path).open('w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(REPORT_COLUMNS)
            writer.writerows(self.rows())

    def summary(self) -> str:
        lines = [
            f'loss_kind = {self.loss_kind}',
            f'epochs = {len(self.records)}',
            f'model = {self.model!r}',
        ]
        if self.records:
            best = max(self.records, key=lambda r: r.eval_accuracy)
            lines += [
                f'final_train_loss = {self.records[-1].train_loss:.6g}',
                f'final_train_accuracy = {self.final_train_accuracy:.6f}',
                f'final_eval_accuracy = {self.final_eval_accuracy:.6f}',
                f'best_eval_accuracy = {best.eval_accuracy:.6f} (epoch {best.epoch})',
                f'total_seconds = {sum(r.seconds for r in self.records):.3f}',
            ]
        lines.append(f'generated = {datetime.now(timezone.utc).isoformat()}')
        return '\n'.join(lines) + '\n'


def accuracy(predictions, truth) -> float:
    """Fraction of exact matches (correct / total).

    Raises:
        ContractViolationError: on empty input or a length mismatch
    """
    predictions, truth = np.asarray(predictions), np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ContractViolationError(
            ERROR_MESSAGES['length_mismatch'].format(what='predictions/truth', left=predictions.size, right=truth.size)
        )
    if truth.size == 0:
        raise ContractViolationError(ERROR_MESSAGES['empty'].format(what='truth'))
    return float(np.mean(predictions == truth))


def epochs_to_accuracy(report: TrainReport, target: float) -> Optional[int]:
    """First epoch whose eval accuracy reaches target, or None"""
    for record in report.records:
        if record.eval_accuracy >= target:
            return record.epoch
    return None


@dataclass(frozen=True)
class RepeatSummary:
    mean: float
    low: float
    high: float

    @classmethod
    def of(cls, values: Sequence[float]) -> 'RepeatSummary':
        if not values:
            raise ContractViolationError(ERROR_MESSAGES['empty'].format(what='repeat values'))
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.mean()), float(values.min()), float(values.max()))


@dataclass(frozen=True)
class MarginStats:
    """Score quantiles of the true class and of the pooled other classes"""
    true_quantiles: Dict[int, float]
    off_quantiles: Dict[int, float]
    in_band_fraction: float
    beyond_fraction: float


def margin_stats(model: Model, dataset: LabeledDataset, hp: HyperParams) -> MarginStats:
    """Where trained scores sit relative to the margin planes 0, lambda_min, lambda_max"""
    scores = forward(model, dataset.features)
    if scores.shape[1] != dataset.class_count:
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(what='scores', expected=(len(dataset), dataset.class_count),
                                           actual=scores.shape)
        )
    rows = np.arange(len(dataset))
    true_scores = scores[rows, dataset.labels]
    off_mask = np.ones_like(scores, dtype=bool)
    off_mask[rows, dataset.labels] = False
    off_scores = scores[off_mask]

    def quantiles(values):
        if values.size == 0:
            return {q: float('nan') for q in MARGIN_QUANTILES}
        return {q: float(v) for q, v in zip(MARGIN_QUANTILES, np.percentile(values, MARGIN_QUANTILES))}

    in_band = (true_scores >= 0.0) & (true_scores <= hp.lambda_min)
    return MarginStats(
        true_quantiles=quantiles(true_scores),
        off_quantiles=quantiles(off_scores),
        in_band_fraction=float(in_band.mean()),
        beyond_fraction=float((off_scores >= hp.lambda_max).mean()) if off_scores.size else 1.0,
    )


def _epoch_order(seed: int, epoch: int, size: int) -> np.ndarray:
    return np.random.Generator(np.random.PCG64(seed + epoch)).permutation(size)


def _record(epoch, lr, losses, train_acc, eval_acc, started, loss_kind) -> EpochRecord:
    record = EpochRecord(
        epoch=epoch,
        lr=lr,
        train_loss=float(np.mean(losses)),
        train_accuracy=train_acc,
        eval_accuracy=eval_acc,
        seconds=time.perf_counter() - started,
    )
    logger.info(
        f"Epoch {epoch}: lr={lr:.3g} loss={record.train_loss:.6g} "
        f"train_acc={train_acc:.4f} eval_acc={eval_acc:.4f}",
        extra={'epoch': epoch, 'lr': lr, 'loss_kind': loss_kind},
    )
    return record


def train_classifier(config: TrainConfig, model: Model, train: LabeledDataset,
                     eval_data: LabeledDataset) -> TrainReport:
    """Train a classifier with mean batch gradients and one optimizer step per batch.

    Raises:
        ContractViolationError: on dimension mismatches, a sequence loss kind,
            or a binary loss on a dataset without exactly 2 classes
    """
    loss = get_loss(config.loss_kind, config.hp)
    if loss.binary and train.class_count != 2:
        raise ContractViolationError(
            ERROR_MESSAGES['binary_classes'].format(loss=config.loss_kind, classes=train.class_count)
        )
    expected_out = loss.output_dim(train.class_count)
    if model.input_dim != train.dim or eval_data.dim != train.dim or model.output_dim != expected_out:
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(
                what='model/dataset', expected=(expected_out, train.dim),
                actual=(model.output_dim, model.input_dim, eval_data.dim)
            )
        )

    schedule = config.resolved_schedule
    optimizer = Optimizer(config.optimizer)
    params = model.parameters()
    state = optimizer.init_state(params)
    report = TrainReport(config.loss_kind, model)
    size = len(train)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_at(schedule, optimizer.initial_lr, epoch)
        order = _epoch_order(config.seed, epoch, size)
        epoch_losses = np.empty(size)
        for start in range(0, size, config.batch_size):
            batch = order[start:start + config.batch_size]
            x, y = train.features[batch], train.labels[batch]
            values, score_grads = loss.value_and_grad(forward(model, x), y)
            epoch_losses[start:start + len(batch)] = values
            grads, _ = backward(model, x, score_grads / len(batch))
            params, state = optimizer.step(params, grads, state, lr)
            model = model.with_parameters(params)

        train_acc = accuracy(loss.predict(forward(model, train.features)), train.labels)
        eval_acc = accuracy(loss.predict(forward(model, eval_data.features)), eval_data.labels)
        report.records.append(_record(epoch, lr, epoch_losses, train_acc, eval_acc, started, config.loss_kind))

    report.model = model
    return report


def _sequence_head(loss_kind: str, hp: HyperParams) -> Tuple[Callable, Callable]:
    """(frame log-prob function, its backward pass) for a CTC loss kind"""
    if loss_kind == LOSS_OSM_CTC:
        return (lambda scores: osm_frame_log_probs(scores, hp),
                lambda scores, g: osm_frame_log_probs_vjp(scores, hp, g))
    return log_softmax_frames, log_softmax_frames_vjp


def head_width(loss_kind: str, alphabet_size: int) -> int:
    """Model outputs per frame: K scores for OSM-CTC, K+1 logits for plain CTC"""
    return alphabet_size if loss_kind == LOSS_OSM_CTC else alphabet_size + 1


def sequence_loss_and_grads(loss_kind: str, hp: HyperParams, model: Model, features,
                            target: Sequence[int]) -> Tuple[float, Params]:
    """CTC loss of one sequence and its gradient on the model parameters"""
    to_log_probs, log_probs_vjp = _sequence_head(loss_kind, hp)
    scores = forward(model, features)
    value, log_prob_grad = ctc_loss(to_log_probs(scores), target)
    grads, _ = backward(model, features, log_probs_vjp(scores, log_prob_grad))
    return value, grads


def decode_dataset(loss_kind: str, hp: HyperParams, model: Model, dataset: SequenceDataset) -> List[str]:
    to_log_probs, _ = _sequence_head(loss_kind, hp)
    return [dataset.alphabet.decode(greedy_decode(to_log_probs(forward(model, example.features))))
            for example in dataset.examples]


def _check_feasible(dataset: SequenceDataset) -> None:
    bad = dataset.infeasible_indices()
    if bad:
        first = dataset.encoded[bad[0]]
        raise InfeasibleTargetError(len(first), required_frames(first), dataset.examples[bad[0]].frames, bad)


def train_ctc(config: TrainConfig, model: Model, train: SequenceDataset,
              eval_data: SequenceDataset) -> TrainReport:
    """Train a frame-wise model with OSM-CTC or plain CTC and greedy exact-match accuracy.

    Raises:
        ContractViolationError: for a non-sequence loss kind or dimension mismatch
        InfeasibleTargetError: listing the indices of unalignable examples
    """
    if config.loss_kind not in SEQUENCE_LOSSES:
        raise ContractViolationError(
            ERROR_MESSAGES['config_field'].format(field='loss', reason=f'{config.loss_kind!r} is not a CTC loss')
        )
    expected_out = head_width(config.loss_kind, train.alphabet.size)
    if model.input_dim != train.dim or eval_data.dim != train.dim or model.output_dim != expected_out:
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(
                what='model/dataset', expected=(expected_out, train.dim),
                actual=(model.output_dim, model.input_dim, eval_data.dim)
            )
        )
    _check_feasible(train)
    _check_feasible(eval_data)

    schedule = config.resolved_schedule
    optimizer = Optimizer(config.optimizer)
    params = model.parameters()
    state = optimizer.init_state(params)
    report = TrainReport(config.loss_kind, model)
    targets = [example.target for example in train.examples]
    eval_targets = [example.target for example in eval_data.examples]
    size = len(train)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_at(schedule, optimizer.initial_lr, epoch)
        order = _epoch_order(config.seed, epoch, size)
        epoch_losses = np.empty(size)
        for start in range(0, size, config.batch_size):
            batch = order[start:start + config.batch_size]
            total = None
            # index-ordered reduction keeps the sum deterministic
            for offset, index in enumerate(batch):
                value, grads = sequence_loss_and_grads(
                    config.loss_kind, config.hp, model, train.examples[index].features, train.encoded[index]
                )
                epoch_losses[start + offset] = value
                total = grads if total is None else {k: total[k] + grads[k] for k in total}
            mean_grads = {k: v / len(batch) for k, v in total.items()}
            params, state = optimizer.step(params, mean_grads, state, lr)
            model = model.with_parameters(params)

        train_acc = ocr_accuracy(decode_dataset(config.loss_kind, config.hp, model, train), targets)
        eval_acc = ocr_accuracy(decode_dataset(config.loss_kind, config.hp, model, eval_data), eval_targets)
        report.records.append(_record(epoch, lr, epoch_losses, train_acc, eval_acc, started, config.loss_kind))

    report.model = model
    return report
