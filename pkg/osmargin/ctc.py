"""CTC on top of OSM frame probabilities.

Frame log-probabilities have shape ``(T, K+1)``; the blank is the last column
(index K), the same position as the OSM rejection class. Targets are
sequences of label indices in ``[0, K)``; ``Alphabet`` maps them to strings.
Log-space zero is represented by ``LOG_ZERO``.
"""
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, logsumexp

from .constants import BRUTE_FORCE_MAX_PATHS, DEFAULT_ALPHABET, ERROR_MESSAGES, LOG_ZERO
from .exceptions import ContractViolationError, InfeasibleTargetError, SearchSpaceTooLargeError
from .losses import HyperParams, osm_log_probs, osm_log_probs_vjp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Alphabet:
    """Characters of the label set; the blank is index ``len(chars)``"""
    chars: str

    def __post_init__(self):
        if len(self.chars) < 1 or len(set(self.chars)) != len(self.chars):
            raise ContractViolationError(f'alphabet must be non-empty with distinct characters: {self.chars!r}')

    @classmethod
    def of_size(cls, size: int) -> 'Alphabet':
        if not 1 <= size <= len(DEFAULT_ALPHABET):
            raise ContractViolationError(f'alphabet size must be in [1, {len(DEFAULT_ALPHABET)}], got {size}')
        return cls(DEFAULT_ALPHABET[:size])

    @property
    def size(self) -> int:
        return len(self.chars)

    @property
    def blank(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> Tuple[int, ...]:
        try:
            return tuple(self.chars.index(ch) for ch in text)
        except ValueError:
            raise ContractViolationError(f'{text!r} has characters outside the alphabet {self.chars!r}')

    def decode(self, labels: Sequence[int]) -> str:
        return ''.join(self.chars[i] for i in labels)


def required_frames(target: Sequence[int]) -> int:
    """Minimum T for the target: its length plus one blank per adjacent repeat"""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def check_feasible(frames: int, target: Sequence[int]) -> None:
    required = required_frames(target)
    if frames < required:
        raise InfeasibleTargetError(len(target), required, frames)


def osm_frame_log_probs(scores, hp: HyperParams) -> np.ndarray:
    """Per-frame OSM log-probabilities; the rejection class is the blank"""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    return osm_log_probs(scores, hp)


def osm_frame_log_probs_vjp(scores, hp: HyperParams, upstream) -> np.ndarray:
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    return osm_log_probs_vjp(scores, hp, upstream)


def log_softmax_frames(logits) -> np.ndarray:
    """Plain CTC head: log-softmax over K+1 model outputs per frame"""
    return log_softmax(np.atleast_2d(np.asarray(logits, dtype=np.float64)), axis=1)


def log_softmax_frames_vjp(logits, upstream) -> np.ndarray:
    log_probs = log_softmax_frames(logits)
    g = np.asarray(upstream, dtype=np.float64)
    return g - np.exp(log_probs) * g.sum(axis=1, keepdims=True)


def _extend(target: Sequence[int], blank: int) -> np.ndarray:
    extended = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    extended[1::2] = target
    return extended


def _check_inputs(log_probs, target) -> Tuple[np.ndarray, Tuple[int, ...]]:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[0] < 1 or log_probs.shape[1] < 2:
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(what='log_probs', expected='(T, K+1)', actual=log_probs.shape)
        )
    target = tuple(int(c) for c in target)
    blank = log_probs.shape[1] - 1
    if any(c < 0 or c >= blank for c in target):
        raise ContractViolationError(
            ERROR_MESSAGES['label_range'].format(label=target, classes=blank)
        )
    return log_probs, target


def ctc_loss(log_probs, target: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of the target over all alignments.

    Args:
        log_probs: (T, K+1) frame log-probabilities, blank last
        target: label indices in [0, K)
    Returns:
        (loss, gradient of the loss with respect to log_probs)
    Raises:
        InfeasibleTargetError: if T is shorter than the target needs
    """
    log_probs, target = _check_inputs(log_probs, target)
    frames, width = log_probs.shape
    check_feasible(frames, target)

    blank = width - 1
    ext = _extend(target, blank)
    states = len(ext)
    # skip[s]: a transition s-2 -> s is allowed
    skip = np.zeros(states, dtype=bool)
    if states > 2:
        skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = log_probs[:, ext]

    alpha = np.full((frames, states), LOG_ZERO)
    alpha[0, 0] = emit[0, 0]
    if states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, frames):
        prev = alpha[t - 1]
        stay_or_step = prev.copy()
        stay_or_step[1:] = np.logaddexp(prev[1:], prev[:-1])
        jump = np.full(states, LOG_ZERO)
        jump[2:] = np.where(skip[2:], prev[:-2], LOG_ZERO)
        alpha[t] = emit[t] + np.logaddexp(stay_or_step, jump)

    beta = np.full((frames, states), LOG_ZERO)
    beta[-1, -1] = emit[-1, -1]
    if states > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(frames - 2, -1, -1):
        nxt = beta[t + 1]
        stay_or_step = nxt.copy()
        stay_or_step[:-1] = np.logaddexp(nxt[:-1], nxt[1:])
        jump = np.full(states, LOG_ZERO)
        jump[:-2] = np.where(skip[2:], nxt[2:], LOG_ZERO)
        beta[t] = emit[t] + np.logaddexp(stay_or_step, jump)

    tail = alpha[-1, -2:] if states > 1 else alpha[-1, -1:]
    log_likelihood = float(logsumexp(tail))

    # occupancy of (t, s), divided by the total likelihood
    occupancy = np.exp(alpha + beta - emit - log_likelihood)
    grad = np.zeros_like(log_probs)
    np.add.at(grad.T, ext, occupancy.T)
    return -log_likelihood, -grad


def ctc_loss_value(log_probs, target: Sequence[int]) -> float:
    return ctc_loss(log_probs, target)[0]


def collapse(path: Sequence[int], blank: int) -> Tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks"""
    return tuple(label for label, _ in itertools.groupby(path) if label != blank)


@lru_cache(maxsize=4)
def _all_paths(frames: int, width: int) -> Tuple[np.ndarray, Tuple[Tuple[int, ...], ...]]:
    paths = np.array(list(itertools.product(range(width), repeat=frames)), dtype=np.int64)
    collapsed = tuple(collapse(path, width - 1) for path in paths.tolist())
    return paths, collapsed


def ctc_brute_force(log_probs, target: Sequence[int]) -> float:
    """Reference CTC loss by enumerating every frame labelling.

    Raises:
        SearchSpaceTooLargeError: if (K+1)^T exceeds BRUTE_FORCE_MAX_PATHS
    """
    log_probs, target = _check_inputs(log_probs, target)
    frames, width = log_probs.shape
    size = width ** frames
    if size > BRUTE_FORCE_MAX_PATHS:
        raise SearchSpaceTooLargeError(
            ERROR_MESSAGES['search_space'].format(paths=size, limit=BRUTE_FORCE_MAX_PATHS)
        )
    paths, collapsed = _all_paths(frames, width)
    matching = np.array([labels == target for labels in collapsed])
    if not matching.any():
        return float('inf')
    path_log_probs = log_probs[np.arange(frames), paths[matching]].sum(axis=1)
    return -float(logsumexp(path_log_probs))


def greedy_decode(log_probs) -> List[int]:
    """Per-frame argmax (lowest index on ties), merge repeats, drop blanks"""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    best = np.argmax(log_probs, axis=1)
    return list(collapse(best.tolist(), log_probs.shape[1] - 1))


def ocr_accuracy(predictions: Sequence[str], targets: Sequence[str]) -> float:
    """Fraction of exact full-string matches.

    Raises:
        ContractViolationError: on empty input or a length mismatch
    """
    if len(predictions) != len(targets):
        raise ContractViolationError(
            ERROR_MESSAGES['length_mismatch'].format(what='predictions/targets', left=len(predictions),
                                                     right=len(targets))
        )
    if not targets:
        raise ContractViolationError(ERROR_MESSAGES['empty'].format(what='targets'))
    correct = sum(1 for p, t in zip(predictions, targets) if p == t)
    return correct / len(targets)


def batch_ctc_loss(frame_log_probs: Sequence[np.ndarray], targets: Sequence[Sequence[int]]) -> float:
    """Mean loss over sequences; summed in index order"""
    if not targets:
        raise ContractViolationError(ERROR_MESSAGES['empty'].format(what='targets'))
    total = 0.0
    for log_probs, target in zip(frame_log_probs, targets):
        total += ctc_loss_value(log_probs, target)
    return total / len(targets)
