"""Margin losses on score vectors.

Every loss accepts either one score vector of shape ``(C,)`` with an integer
label, or a batch of shape ``(N, C)`` with ``N`` labels, and returns a float or
an ``(N,)`` array accordingly. Gradients are taken with respect to the scores.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

from .constants import (
    BINARY_LOSSES,
    DEFAULT_ALPHA,
    DEFAULT_HINGE_MARGIN,
    DEFAULT_LAMBDA,
    DEFAULT_LAMBDA_MAX,
    DEFAULT_LAMBDA_MIN,
    ERROR_MESSAGES,
    LOSS_BINARY_CE,
    LOSS_BINARY_OSM,
    LOSS_CE,
    LOSS_HARD_OSM,
    LOSS_HINGE,
    LOSS_SOFT_OSM,
    OCR_ALPHA,
    OCR_LAMBDA_MAX,
    OCR_LAMBDA_MIN,
)
from .exceptions import ContractViolationError, InvalidHyperParamsError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class HyperParams:
    """OSM hyperparameters plus the hinge baseline margin.

    ``lam`` is the weight on the negative-class terms (``lambda`` is reserved
    in Python).
    """
    alpha: float = DEFAULT_ALPHA
    lam: float = DEFAULT_LAMBDA
    lambda_min: float = DEFAULT_LAMBDA_MIN
    lambda_max: float = DEFAULT_LAMBDA_MAX
    hinge_margin: float = DEFAULT_HINGE_MARGIN

    def __post_init__(self):
        if not self.lambda_min >= 0:
            raise InvalidHyperParamsError(f'lambda_min={self.lambda_min} must be >= 0')
        if not self.lambda_max > self.lambda_min:
            raise InvalidHyperParamsError(
                f'lambda_max={self.lambda_max} must exceed lambda_min={self.lambda_min}'
            )
        if not self.lam > 0:
            raise InvalidHyperParamsError(f'lambda={self.lam} must be > 0')
        if not self.alpha >= 0:
            raise InvalidHyperParamsError(f'alpha={self.alpha} must be >= 0')
        if not self.hinge_margin > 0:
            raise InvalidHyperParamsError(f'hinge_margin={self.hinge_margin} must be > 0')

    @classmethod
    def for_ocr(cls) -> 'HyperParams':
        return cls(alpha=OCR_ALPHA, lambda_min=OCR_LAMBDA_MIN, lambda_max=OCR_LAMBDA_MAX)

    @property
    def binary_threshold(self) -> float:
        """Midpoint between the inner and outer margin planes"""
        return 0.5 * (self.lambda_min + self.lambda_max)


def _prepare(scores, labels) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Coerce scores to ``(N, C)`` and labels to ``(N,)``, checking label range"""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim not in (1, 2) or s.shape[-1] < 1:
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(what='scores', expected='(C,) or (N, C)', actual=s.shape)
        )
    single = s.ndim == 1
    s2 = s.reshape(1, -1) if single else s
    y = np.asarray(labels)
    if not np.issubdtype(y.dtype, np.integer):
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(what='labels', expected='integers', actual=y.dtype)
        )
    y = y.reshape(-1)
    if y.shape[0] != s2.shape[0]:
        raise ContractViolationError(
            ERROR_MESSAGES['length_mismatch'].format(what='scores/labels', left=s2.shape[0], right=y.shape[0])
        )
    classes = s2.shape[1]
    bad = (y < 0) | (y >= classes)
    if np.any(bad):
        raise ContractViolationError(
            ERROR_MESSAGES['label_range'].format(label=int(y[bad][0]), classes=classes)
        )
    return s2, y, single


def _prepare_binary(score, label) -> Tuple[np.ndarray, np.ndarray, bool]:
    s = np.asarray(score, dtype=np.float64)
    y = np.asarray(label)
    if s.shape != y.shape:
        raise ContractViolationError(
            ERROR_MESSAGES['length_mismatch'].format(what='scores/labels', left=s.size, right=y.size)
        )
    if np.any((y != 0) & (y != 1)):
        raise ContractViolationError(ERROR_MESSAGES['label_range'].format(label=y, classes=2))
    return s, y.astype(np.float64), s.ndim == 0


def _finish(values: np.ndarray, single: bool):
    return float(values.reshape(-1)[0]) if single else values


def stable_softplus(x: ArrayLike) -> ArrayLike:
    """log(1 + e^x) as max(x, 0) + log1p(e^-|x|); safe for any finite x"""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


# Binary losses (single score per input, y in {0, 1})

def hard_osm_binary(s: ArrayLike, y: ArrayLike, hp: HyperParams) -> ArrayLike:
    """Binary hard OSM with the Lagrange term active for positives only.

    Zero iff ``y=1`` and ``0 <= s <= lambda_min``, or ``y=0`` and ``s >= lambda_max``.
    """
    s, y, single = _prepare_binary(s, y)
    values = (
        y * np.maximum(s - hp.lambda_min, 0.0)
        + hp.lam * np.maximum(hp.lambda_max - s, 0.0) * (1.0 - y)
        + hp.alpha * np.maximum(-s, 0.0) * y
    )
    return float(values) if single else values


def hard_osm_binary_grad(s: ArrayLike, y: ArrayLike, hp: HyperParams) -> ArrayLike:
    s, y, single = _prepare_binary(s, y)
    grad = (
        y * (s > hp.lambda_min)
        - hp.lam * (1.0 - y) * (s < hp.lambda_max)
        - hp.alpha * y * (s < 0.0)
    )
    return float(grad) if single else grad


def soft_osm_binary(s: ArrayLike, y: ArrayLike, hp: HyperParams) -> ArrayLike:
    s, y, single = _prepare_binary(s, y)
    values = (
        y * stable_softplus(s - hp.lambda_min)
        + hp.lam * (1.0 - y) * stable_softplus(hp.lambda_max - s)
        + hp.alpha * y * stable_softplus(-s)
    )
    return float(values) if single else values


def soft_osm_binary_grad(s: ArrayLike, y: ArrayLike, hp: HyperParams) -> ArrayLike:
    s, y, single = _prepare_binary(s, y)
    grad = (
        y * expit(s - hp.lambda_min)
        - hp.lam * (1.0 - y) * expit(hp.lambda_max - s)
        - hp.alpha * y * expit(-s)
    )
    return float(grad) if single else grad


def binary_cross_entropy(s: ArrayLike, y: ArrayLike) -> ArrayLike:
    """Sigmoid cross-entropy written as y*softplus(-s) + (1-y)*softplus(s)"""
    s, y, single = _prepare_binary(s, y)
    values = y * stable_softplus(-s) + (1.0 - y) * stable_softplus(s)
    return float(values) if single else values


def binary_cross_entropy_grad(s: ArrayLike, y: ArrayLike) -> ArrayLike:
    """sigmoid(s) - y, with the y=1 branch evaluated as -sigmoid(-s)"""
    s, y, single = _prepare_binary(s, y)
    grad = np.where(y == 1.0, -expit(-s), expit(s))
    return float(grad) if single else grad


def predict_osm_binary(s: ArrayLike, hp: HyperParams):
    """1 below the midpoint of the margin planes, else 0"""
    s = np.asarray(s, dtype=np.float64)
    labels = np.where(s < hp.binary_threshold, 1, 0)
    return int(labels) if labels.ndim == 0 else labels


def predict_sigmoid(s: ArrayLike):
    s = np.asarray(s, dtype=np.float64)
    labels = np.where(s > 0.0, 1, 0)
    return int(labels) if labels.ndim == 0 else labels


# Multiclass losses

def hard_osm_multiclass(scores, label, hp: HyperParams) -> ArrayLike:
    """max(s_y - lambda_min, 0) + alpha*max(-s_y, 0) + lambda*sum_{j!=y} max(lambda_max - s_j, 0)

    Raises:
        ContractViolationError: if a label is outside [0, C)
    """
    s, y, single = _prepare(scores, label)
    rows = np.arange(len(y))
    sy = s[rows, y]
    neg = hp.lam * np.maximum(hp.lambda_max - s, 0.0)
    neg[rows, y] = 0.0
    values = np.maximum(sy - hp.lambda_min, 0.0) + hp.alpha * np.maximum(-sy, 0.0) + neg.sum(axis=1)
    return _finish(values, single)


def hard_osm_multiclass_grad(scores, label, hp: HyperParams) -> np.ndarray:
    """Subgradient of the hard multiclass OSM; 0 at every kink"""
    s, y, single = _prepare(scores, label)
    rows = np.arange(len(y))
    sy = s[rows, y]
    grad = np.where(s < hp.lambda_max, -hp.lam, 0.0)
    grad[rows, y] = (sy > hp.lambda_min) - hp.alpha * (sy < 0.0)
    return grad[0] if single else grad


def soft_osm(scores, label, hp: HyperParams) -> ArrayLike:
    """Soft OSM: every max(., 0) of the hard loss replaced by a stable softplus.

    Strictly positive for finite scores and never below the hard loss.

    Raises:
        ContractViolationError: if a label is outside [0, C)
    """
    s, y, single = _prepare(scores, label)
    rows = np.arange(len(y))
    sy = s[rows, y]
    neg = hp.lam * stable_softplus(hp.lambda_max - s)
    neg[rows, y] = 0.0
    values = stable_softplus(sy - hp.lambda_min) + hp.alpha * stable_softplus(-sy) + neg.sum(axis=1)
    return _finish(np.asarray(values), single)


def soft_osm_grad(scores, label, hp: HyperParams) -> np.ndarray:
    """d soft_osm / d scores.

    Component y is sigmoid(s_y - lambda_min) - alpha*sigmoid(-s_y); every other
    component j is -lambda*sigmoid(lambda_max - s_j).
    """
    s, y, single = _prepare(scores, label)
    rows = np.arange(len(y))
    sy = s[rows, y]
    grad = -hp.lam * expit(hp.lambda_max - s)
    grad[rows, y] = expit(sy - hp.lambda_min) - hp.alpha * expit(-sy)
    return grad[0] if single else grad


def _osm_unnormalized(s: np.ndarray, hp: HyperParams) -> np.ndarray:
    """Unnormalized log-probabilities, shape (N, C+1), rejection class last"""
    pos = stable_softplus(s - hp.lambda_min) + hp.alpha * stable_softplus(-s)
    neg = hp.lam * stable_softplus(hp.lambda_max - s)
    total = neg.sum(axis=1, keepdims=True)
    return np.concatenate([-(pos + (total - neg)), -total], axis=1)


def osm_log_probs(scores, hp: HyperParams) -> np.ndarray:
    """Normalized log-probabilities of the C classes and the rejection class.

    Class k gets -soft_osm(s, k) and the rejection class gets
    -lambda*sum_j softplus(lambda_max - s_j) before the log-sum-exp
    normalization. Unlike softmax, the result changes when a constant is
    added to every score.

    Returns:
        Array of shape (C+1,) for one score vector, (N, C+1) for a batch.
    """
    s = np.asarray(scores, dtype=np.float64)
    single = s.ndim == 1
    s2 = s.reshape(1, -1) if single else s
    unnorm = _osm_unnormalized(s2, hp)
    log_probs = unnorm - logsumexp(unnorm, axis=1, keepdims=True)
    return log_probs[0] if single else log_probs


def osm_log_probs_vjp(scores, hp: HyperParams, upstream) -> np.ndarray:
    """Pull an upstream gradient on osm_log_probs back onto the scores"""
    s = np.asarray(scores, dtype=np.float64)
    single = s.ndim == 1
    s2 = s.reshape(1, -1) if single else s
    g = np.asarray(upstream, dtype=np.float64).reshape(s2.shape[0], s2.shape[1] + 1)

    probs = np.exp(osm_log_probs(s2, hp))
    # gradient on the unnormalized values
    v = g - probs * g.sum(axis=1, keepdims=True)
    v_cls = v[:, :-1]

    neg_slope = hp.lam * expit(hp.lambda_max - s2)
    own_slope = -expit(s2 - hp.lambda_min) + hp.alpha * expit(-s2)
    grad = v_cls * own_slope + neg_slope * (v.sum(axis=1, keepdims=True) - v_cls)
    return grad[0] if single else grad


def cross_entropy(logits, label) -> ArrayLike:
    """Softmax cross-entropy, evaluated as log(1 + sum_{j!=y} e^(s_j - s_y))"""
    return _cross_entropy_parts(logits, label)[0]


def cross_entropy_grad(logits, label) -> np.ndarray:
    """softmax(logits) - onehot(label)"""
    return _cross_entropy_parts(logits, label)[1]


def _cross_entropy_parts(logits, label):
    s, y, single = _prepare(logits, label)
    rows = np.arange(len(y))
    if s.shape[1] == 1:
        values, grad = np.zeros(len(y)), np.zeros_like(s)
    else:
        diff = s - s[rows, y][:, None]
        diff[rows, y] = -np.inf
        rest = logsumexp(diff, axis=1)
        values = np.logaddexp(0.0, rest)
        grad = np.exp(diff - values[:, None])
        grad[rows, y] = -expit(rest)
    return _finish(values, single), (grad[0] if single else grad)


def hinge_multiclass(scores, label, margin: float = DEFAULT_HINGE_MARGIN) -> ArrayLike:
    """Weston-Watkins hinge: sum_{j!=y} max(0, margin + s_j - s_y)"""
    return _hinge_parts(scores, label, margin)[0]


def hinge_multiclass_grad(scores, label, margin: float = DEFAULT_HINGE_MARGIN) -> np.ndarray:
    """Subgradient of the hinge; kinks take the flat side"""
    return _hinge_parts(scores, label, margin)[1]


def _hinge_parts(scores, label, margin):
    if not margin > 0:
        raise ContractViolationError(ERROR_MESSAGES['config_field'].format(field='margin', reason='must be > 0'))
    s, y, single = _prepare(scores, label)
    rows = np.arange(len(y))
    slack = margin + s - s[rows, y][:, None]
    slack[rows, y] = 0.0
    values = np.maximum(slack, 0.0).sum(axis=1)
    grad = (slack > 0.0).astype(np.float64)
    grad[rows, y] = -grad.sum(axis=1)
    return _finish(values, single), (grad[0] if single else grad)


def predict_osm(scores):
    """Argmin of the scores; ties go to the lowest class index"""
    s = np.asarray(scores, dtype=np.float64)
    labels = np.argmin(s, axis=-1)
    return int(labels) if np.ndim(labels) == 0 else labels


def predict_argmax(scores):
    s = np.asarray(scores, dtype=np.float64)
    labels = np.argmax(s, axis=-1)
    return int(labels) if np.ndim(labels) == 0 else labels


# Registry used by the training loop

@dataclass(frozen=True)
class LossFunction:
    """A classification loss bound to its hyperparameters and decision rule.

    ``value_and_grad`` and ``predict`` take batched model outputs of shape
    ``(N, output_dim)``.
    """
    kind: str
    value_and_grad: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]
    predict: Callable[[np.ndarray], np.ndarray]
    binary: bool = False

    def output_dim(self, classes: int) -> int:
        return 1 if self.binary else classes


def _binary_pair(value_fn, grad_fn):
    def value_and_grad(scores, labels):
        s = np.asarray(scores, dtype=np.float64)[:, 0]
        y = np.asarray(labels)
        return np.asarray(value_fn(s, y)), np.asarray(grad_fn(s, y)).reshape(-1, 1)
    return value_and_grad


def _multiclass_pair(value_fn, grad_fn):
    def value_and_grad(scores, labels):
        s = np.asarray(scores, dtype=np.float64)
        y = np.asarray(labels)
        return np.asarray(value_fn(s, y)), np.asarray(grad_fn(s, y))
    return value_and_grad


def get_loss(kind: str, hp: HyperParams) -> LossFunction:
    """Look up a classification loss by kind.

    Raises:
        ContractViolationError: for sequence losses or unknown kinds
    """
    if kind == LOSS_SOFT_OSM:
        return LossFunction(
            kind,
            _multiclass_pair(lambda s, y: soft_osm(s, y, hp), lambda s, y: soft_osm_grad(s, y, hp)),
            predict_osm,
        )
    if kind == LOSS_HARD_OSM:
        return LossFunction(
            kind,
            _multiclass_pair(lambda s, y: hard_osm_multiclass(s, y, hp), lambda s, y: hard_osm_multiclass_grad(s, y, hp)),
            predict_osm,
        )
    if kind == LOSS_CE:
        return LossFunction(kind, _multiclass_pair(cross_entropy, cross_entropy_grad), predict_argmax)
    if kind == LOSS_HINGE:
        return LossFunction(
            kind,
            _multiclass_pair(
                lambda s, y: hinge_multiclass(s, y, hp.hinge_margin),
                lambda s, y: hinge_multiclass_grad(s, y, hp.hinge_margin),
            ),
            predict_argmax,
        )
    if kind == LOSS_BINARY_OSM:
        return LossFunction(
            kind,
            _binary_pair(lambda s, y: soft_osm_binary(s, y, hp), lambda s, y: soft_osm_binary_grad(s, y, hp)),
            lambda scores: np.asarray(predict_osm_binary(np.asarray(scores)[:, 0], hp)),
            binary=True,
        )
    if kind == LOSS_BINARY_CE:
        return LossFunction(
            kind,
            _binary_pair(binary_cross_entropy, binary_cross_entropy_grad),
            lambda scores: np.asarray(predict_sigmoid(np.asarray(scores)[:, 0])),
            binary=True,
        )
    raise ContractViolationError(
        ERROR_MESSAGES['config_field'].format(field='loss', reason=f'{kind!r} is not a classification loss')
    )


def is_binary(kind: str) -> bool:
    return kind in BINARY_LOSSES
