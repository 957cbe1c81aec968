"""Finite-difference checks of every analytic gradient in the package."""
import logging
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np
from scipy.special import log_softmax

from . import ctc, losses
from .constants import (
    FD_STEP,
    GRADCHECK_CTC_TOLERANCE,
    GRADCHECK_MAX_CLASSES,
    GRADCHECK_SCORE_STD,
    GRADCHECK_TOLERANCE,
    KINK_GUARD,
    LOSS_CE,
    LOSS_HINGE,
    LOSS_OSM_CTC,
    LOSS_SOFT_OSM,
    MODEL_LINEAR,
    MODEL_MLP,
)
from .losses import HyperParams
from .models import ModelConfig, backward, flatten_params, forward, init_model, unflatten_params

logger = logging.getLogger(__name__)

# Margin planes matched to the O(1) scores of a freshly initialized toy model
TOY_HP = HyperParams.for_ocr()


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        original = x[i]
        x[i] = original + step
        plus = fn(x)
        x[i] = original - step
        minus = fn(x)
        x[i] = original
        grad[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both vanish"""
    analytic = np.ravel(np.asarray(analytic, dtype=np.float64))
    numeric = np.ravel(np.asarray(numeric, dtype=np.float64))
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


@dataclass
class SuiteResult:
    name: str
    tolerance: float
    errors: List[float] = field(default_factory=list)
    skipped: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self):
        status = 'ok' if self.passed else 'FAIL'
        return (f'{self.name:<24} max_rel_err={self.max_error:.3e} tol={self.tolerance:.0e} '
                f'instances={len(self.errors)} skipped={self.skipped} {status}')


def _random_scores(rng: np.random.Generator):
    classes = int(rng.integers(2, GRADCHECK_MAX_CLASSES + 1))
    scores = rng.normal(0.0, GRADCHECK_SCORE_STD, classes)
    return scores, int(rng.integers(classes))


def _near_hinge_kink(scores, label, margin) -> bool:
    slack = margin + scores - scores[label]
    slack[label] = np.inf
    return bool(np.any(np.abs(slack) < KINK_GUARD))


def check_losses(seed: int, count: int, hp: HyperParams = HyperParams()) -> List[SuiteResult]:
    """Score-level gradients of soft OSM, CE, binary CE, binary soft OSM and hinge"""
    rng = np.random.Generator(np.random.PCG64(seed))
    suites = {name: SuiteResult(name, GRADCHECK_TOLERANCE)
              for name in ('soft-osm', 'ce', 'hinge', 'binary-ce', 'binary-osm')}
    for _ in range(count):
        scores, label = _random_scores(rng)
        suites['soft-osm'].errors.append(relative_error(
            losses.soft_osm_grad(scores, label, hp),
            central_difference(lambda s: losses.soft_osm(s, label, hp), scores),
        ))
        suites['ce'].errors.append(relative_error(
            losses.cross_entropy_grad(scores, label),
            central_difference(lambda s: losses.cross_entropy(s, label), scores),
        ))
        if _near_hinge_kink(scores, label, hp.hinge_margin):
            suites['hinge'].skipped += 1
        else:
            suites['hinge'].errors.append(relative_error(
                losses.hinge_multiclass_grad(scores, label, hp.hinge_margin),
                central_difference(lambda s: losses.hinge_multiclass(s, label, hp.hinge_margin), scores),
            ))

        s, y = scores[:1], label % 2
        suites['binary-ce'].errors.append(relative_error(
            losses.binary_cross_entropy_grad(s[0], y),
            central_difference(lambda v: losses.binary_cross_entropy(v[0], y), s),
        ))
        suites['binary-osm'].errors.append(relative_error(
            losses.soft_osm_binary_grad(s[0], y, hp),
            central_difference(lambda v: losses.soft_osm_binary(v[0], y, hp), s),
        ))
    return list(suites.values())


def _model_suite(name, rng, count, kind, loss_kind, hp, tolerance) -> SuiteResult:
    result = SuiteResult(name, tolerance)
    loss = losses.get_loss(loss_kind, hp)
    for _ in range(count):
        dim, classes = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        model = init_model(ModelConfig(dim, classes, kind=kind, hidden=int(rng.integers(2, 7))),
                           int(rng.integers(2 ** 31)))
        x = rng.standard_normal(dim)
        label = np.array([rng.integers(classes)])

        if kind == MODEL_MLP:
            pre = x @ model.hidden_weights.T + model.hidden_bias
            if np.any(np.abs(pre) < KINK_GUARD):
                result.skipped += 1
                continue
        if loss_kind == LOSS_HINGE and _near_hinge_kink(forward(model, x), int(label[0]), hp.hinge_margin):
            result.skipped += 1
            continue

        def objective(vector):
            return float(loss.value_and_grad(forward(unflatten_params(model, vector), x[None, :]), label)[0][0])

        _, score_grad = loss.value_and_grad(forward(model, x[None, :]), label)
        grads, _ = backward(model, x[None, :], score_grad)
        analytic = np.concatenate([np.ravel(grads[name]) for name in model.param_names])
        result.errors.append(relative_error(analytic, central_difference(objective, flatten_params(model))))
    return result


def check_models(seed: int, count: int, hp: HyperParams = HyperParams()) -> List[SuiteResult]:
    """Parameter gradients of loss(forward(model, x)) for both model kinds"""
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    results = []
    for kind in (MODEL_LINEAR, MODEL_MLP):
        for loss_kind in (LOSS_SOFT_OSM, LOSS_CE, LOSS_HINGE):
            results.append(_model_suite(f'{kind}/{loss_kind}', rng, count, kind, loss_kind, hp,
                                        GRADCHECK_TOLERANCE))
    return results


def _random_target(rng: np.random.Generator, frames: int, alphabet_size: int):
    target = list(rng.integers(0, alphabet_size, size=int(rng.integers(0, frames + 1))))
    while ctc.required_frames(target) > frames:
        target.pop()
    return target


def check_ctc(seed: int, count: int, hp: HyperParams = TOY_HP) -> List[SuiteResult]:
    """CTC gradient on log-probabilities and the OSM-CTC chain through a model"""
    rng = np.random.Generator(np.random.PCG64(seed + 2))
    on_log_probs = SuiteResult('ctc', GRADCHECK_CTC_TOLERANCE)
    end_to_end = SuiteResult(f'model/{LOSS_OSM_CTC}', GRADCHECK_CTC_TOLERANCE)
    for _ in range(count):
        frames, alphabet_size = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        log_probs = log_softmax(rng.standard_normal((frames, alphabet_size + 1)), axis=1)
        target = _random_target(rng, frames, alphabet_size)
        _, grad = ctc.ctc_loss(log_probs, target)
        numeric = central_difference(
            lambda v: ctc.ctc_loss_value(v.reshape(log_probs.shape), target), log_probs.ravel()
        )
        on_log_probs.errors.append(relative_error(grad, numeric))

        dim = int(rng.integers(2, 5))
        model = init_model(ModelConfig(dim, alphabet_size), int(rng.integers(2 ** 31)))
        features = rng.standard_normal((frames, dim))

        def objective(vector):
            scores = forward(unflatten_params(model, vector), features)
            return ctc.ctc_loss_value(ctc.osm_frame_log_probs(scores, hp), target)

        scores = forward(model, features)
        _, log_prob_grad = ctc.ctc_loss(ctc.osm_frame_log_probs(scores, hp), target)
        grads, _ = backward(model, features, ctc.osm_frame_log_probs_vjp(scores, hp, log_prob_grad))
        analytic = np.concatenate([np.ravel(grads[name]) for name in model.param_names])
        end_to_end.errors.append(relative_error(analytic, central_difference(objective, flatten_params(model))))
    return [on_log_probs, end_to_end]


def run_all(seed: int, count: int) -> List[SuiteResult]:
    results = check_losses(seed, count) + check_models(seed, count) + check_ctc(seed, count)
    for result in results:
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, str(result), extra={'suite': result.name, 'max_error': result.max_error})
    return results
