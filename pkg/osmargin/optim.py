"""Optimizers and learning-rate schedules.

Optimizers are pure: ``step`` returns new parameters and new state and never
mutates its inputs. Weight decay is classic L2, added to the gradient.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Tuple, Union

import numpy as np

from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPSILON,
    DEFAULT_DECAY_RATE,
    DEFAULT_LR,
    DEFAULT_MIN_LR,
    DEFAULT_MOMENTUM,
    DEFAULT_PERIOD_EPOCHS,
    DEFAULT_WARMUP_EPOCHS,
    DEFAULT_WEIGHT_DECAY,
    ERROR_MESSAGES,
    OCR_LR,
    OPTIMIZER_ADAM,
    OPTIMIZER_SGD,
    SCHEDULE_COSINE,
    SCHEDULE_EXPONENTIAL,
)
from .exceptions import ContractViolationError

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


def _invalid(field, reason):
    return ContractViolationError(ERROR_MESSAGES['config_field'].format(field=field, reason=reason))


@dataclass(frozen=True)
class SgdConfig:
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    initial_lr: float = DEFAULT_LR

    name = OPTIMIZER_SGD

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise _invalid('momentum', 'must be in [0, 1)')
        if not self.weight_decay >= 0.0:
            raise _invalid('weight_decay', 'must be >= 0')
        if not self.initial_lr > 0.0:
            raise _invalid('lr', 'must be > 0')


@dataclass(frozen=True)
class AdamConfig:
    initial_lr: float = OCR_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    weight_decay: float = 0.0

    name = OPTIMIZER_ADAM

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise _invalid('beta', 'must be in [0, 1)')
        if not self.epsilon > 0.0:
            raise _invalid('epsilon', 'must be > 0')
        if not self.weight_decay >= 0.0:
            raise _invalid('weight_decay', 'must be >= 0')
        if not self.initial_lr > 0.0:
            raise _invalid('lr', 'must be > 0')


OptimizerConfig = Union[SgdConfig, AdamConfig]


@dataclass(frozen=True)
class LrSchedule:
    """Learning rate as a function of the epoch.

    Cosine warm restarts ramp linearly over ``warmup_epochs`` at the start of
    every ``period_epochs`` cycle, then anneal from the base rate to
    ``min_lr``. Exponential decay multiplies by ``decay_rate`` each epoch.
    """
    kind: str = SCHEDULE_COSINE
    period_epochs: int = DEFAULT_PERIOD_EPOCHS
    warmup_epochs: int = DEFAULT_WARMUP_EPOCHS
    decay_rate: float = DEFAULT_DECAY_RATE
    min_lr: float = DEFAULT_MIN_LR

    def __post_init__(self):
        if self.kind not in (SCHEDULE_COSINE, SCHEDULE_EXPONENTIAL):
            raise _invalid('schedule', f'unknown kind {self.kind!r}')
        if self.period_epochs < 1:
            raise _invalid('period', 'must be >= 1')
        if not 0 <= self.warmup_epochs < self.period_epochs:
            raise _invalid('warmup', 'must be in [0, period)')
        if not 0.0 < self.decay_rate <= 1.0:
            raise _invalid('decay_rate', 'must be in (0, 1]')
        if not self.min_lr >= 0.0:
            raise _invalid('min_lr', 'must be >= 0')


def lr_at(schedule: LrSchedule, base_lr: float, epoch: int) -> float:
    if epoch < 0:
        raise _invalid('epoch', 'must be >= 0')
    if schedule.kind == SCHEDULE_EXPONENTIAL:
        return base_lr * schedule.decay_rate ** epoch

    t = epoch % schedule.period_epochs
    warmup = schedule.warmup_epochs
    if t < warmup:
        return base_lr * (t + 1) / warmup
    progress = (t - warmup) / (schedule.period_epochs - warmup)
    return schedule.min_lr + (base_lr - schedule.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def _check_shapes(**trees: Params) -> None:
    names = list(trees)
    reference = trees[names[0]]
    for name in names[1:]:
        other = trees[name]
        if other.keys() != reference.keys():
            raise ContractViolationError(
                ERROR_MESSAGES['shape'].format(what=name, expected=sorted(reference), actual=sorted(other))
            )
        for key, value in reference.items():
            if np.shape(other[key]) != np.shape(value):
                raise ContractViolationError(
                    ERROR_MESSAGES['shape'].format(what=f'{name}[{key}]', expected=np.shape(value),
                                                   actual=np.shape(other[key]))
                )


def sgd_step(params: Params, grads: Params, velocity: Params, config: SgdConfig,
             lr: float) -> Tuple[Params, Params]:
    """One momentum step: v <- mu*v - lr*(g + wd*p); p <- p + v"""
    _check_shapes(params=params, grads=grads, velocity=velocity)
    new_params, new_velocity = {}, {}
    for name, param in params.items():
        g = grads[name] + config.weight_decay * param
        v = config.momentum * velocity[name] - lr * g
        new_velocity[name] = v
        new_params[name] = param + v
    return new_params, new_velocity


@dataclass(frozen=True)
class AdamState:
    first: Params
    second: Params
    step: int = 0


def adam_step(params: Params, grads: Params, state: AdamState, config: AdamConfig,
              lr: float) -> Tuple[Params, AdamState]:
    """Bias-corrected Adam step with L2 decay folded into the gradient"""
    _check_shapes(params=params, grads=grads, first=state.first, second=state.second)
    step = state.step + 1
    first, second, new_params = {}, {}, {}
    for name, param in params.items():
        g = grads[name] + config.weight_decay * param
        m = config.beta1 * state.first[name] + (1.0 - config.beta1) * g
        v = config.beta2 * state.second[name] + (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1 ** step)
        v_hat = v / (1.0 - config.beta2 ** step)
        new_params[name] = param - lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
        first[name], second[name] = m, v
    return new_params, AdamState(first, second, step)


def _zeros_like(params: Params) -> Params:
    return {name: np.zeros_like(value) for name, value in params.items()}


class Optimizer:
    """Binds an optimizer config to its state layout"""

    def __init__(self, config: OptimizerConfig):
        self.config = config

    @property
    def initial_lr(self) -> float:
        return self.config.initial_lr

    def init_state(self, params: Params):
        if isinstance(self.config, AdamConfig):
            return AdamState(_zeros_like(params), _zeros_like(params))
        return _zeros_like(params)

    def step(self, params: Params, grads: Params, state, lr: float):
        if isinstance(self.config, AdamConfig):
            return adam_step(params, grads, state, self.config, lr)
        return sgd_step(params, grads, state, self.config, lr)
