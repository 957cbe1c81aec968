"""Score functions f(x) -> s with exact backward passes.

Checkpoint layout (text, one model per file)::

    osmargin-checkpoint 1 <kind>
    <param name> <dim> [<dim>]
    <row-major values, space separated, 17 significant digits>
    ...

Parameters appear in the order of ``param_names`` for the model kind.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .constants import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    DEFAULT_HIDDEN,
    ERROR_MESSAGES,
    FLOAT_FORMAT,
    MODEL_LINEAR,
    MODEL_MLP,
)
from .exceptions import CheckpointError, ContractViolationError

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    output_dim: int
    kind: str = MODEL_LINEAR
    hidden: int = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.kind not in (MODEL_LINEAR, MODEL_MLP):
            raise ContractViolationError(
                ERROR_MESSAGES['config_field'].format(field='model.kind', reason=f'unknown kind {self.kind!r}')
            )
        if self.input_dim < 1 or self.output_dim < 1 or self.hidden < 1:
            raise ContractViolationError(
                ERROR_MESSAGES['config_field'].format(field='model', reason='dimensions must be >= 1')
            )


def _check_param(name: str, value, shape: Tuple[int, ...]) -> np.ndarray:
    value = np.asarray(value, dtype=np.float64)
    if value.shape != shape:
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(what=name, expected=shape, actual=value.shape)
        )
    if not np.all(np.isfinite(value)):
        raise ContractViolationError(f'{name} has non-finite entries')
    return value


class _ParamsMixin:
    param_names: Tuple[str, ...] = ()
    kind = ''

    def parameters(self) -> Params:
        return {name: getattr(self, name) for name in self.param_names}

    def with_parameters(self, params: Params):
        return replace(self, **{name: params[name] for name in self.param_names})

    def __repr__(self):
        shapes = ', '.join(f'{name}={getattr(self, name).shape}' for name in self.param_names)
        return f'{type(self).__name__}({shapes})'


@dataclass(frozen=True, eq=False, repr=False)
class LinearModel(_ParamsMixin):
    """s = W x + b"""
    weights: np.ndarray
    bias: np.ndarray = field(default=None)

    param_names = ('weights', 'bias')
    kind = MODEL_LINEAR

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ContractViolationError(
                ERROR_MESSAGES['shape'].format(what='weights', expected='(C, D)', actual=weights.shape)
            )
        bias = np.zeros(weights.shape[0]) if self.bias is None else self.bias
        object.__setattr__(self, 'weights', _check_param('weights', weights, weights.shape))
        object.__setattr__(self, 'bias', _check_param('bias', bias, (weights.shape[0],)))

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False, repr=False)
class MlpModel(_ParamsMixin):
    """s = W_out relu(W_hidden x + b_hidden) + b_out"""
    hidden_weights: np.ndarray
    hidden_bias: np.ndarray
    out_weights: np.ndarray
    out_bias: np.ndarray

    param_names = ('hidden_weights', 'hidden_bias', 'out_weights', 'out_bias')
    kind = MODEL_MLP

    def __post_init__(self):
        hidden_weights = np.asarray(self.hidden_weights, dtype=np.float64)
        out_weights = np.asarray(self.out_weights, dtype=np.float64)
        if hidden_weights.ndim != 2 or out_weights.ndim != 2:
            raise ContractViolationError(
                ERROR_MESSAGES['shape'].format(what='MLP weights', expected='(H, D) and (C, H)',
                                               actual=(hidden_weights.shape, out_weights.shape))
            )
        hidden, inputs = hidden_weights.shape
        outputs = out_weights.shape[0]
        object.__setattr__(self, 'hidden_weights', _check_param('hidden_weights', hidden_weights, (hidden, inputs)))
        object.__setattr__(self, 'hidden_bias', _check_param('hidden_bias', self.hidden_bias, (hidden,)))
        object.__setattr__(self, 'out_weights', _check_param('out_weights', out_weights, (outputs, hidden)))
        object.__setattr__(self, 'out_bias', _check_param('out_bias', self.out_bias, (outputs,)))

    @property
    def input_dim(self) -> int:
        return self.hidden_weights.shape[1]

    @property
    def hidden(self) -> int:
        return self.hidden_weights.shape[0]

    @property
    def output_dim(self) -> int:
        return self.out_weights.shape[0]


Model = Union[LinearModel, MlpModel]


def _as_batch(model: Model, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != model.input_dim:
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(what='input', expected=f'(..., {model.input_dim})', actual=x.shape)
        )
    single = x.ndim == 1
    return (x.reshape(1, -1) if single else x), single


def forward(model: Model, x) -> np.ndarray:
    """Scores for one input ``(D,)`` or a batch ``(N, D)``.

    Raises:
        ContractViolationError: if the trailing dimension of x is not D
    """
    x2, single = _as_batch(model, x)
    if isinstance(model, LinearModel):
        scores = x2 @ model.weights.T + model.bias
    else:
        hidden = np.maximum(x2 @ model.hidden_weights.T + model.hidden_bias, 0.0)
        scores = hidden @ model.out_weights.T + model.out_bias
    return scores[0] if single else scores


def backward(model: Model, x, upstream) -> Tuple[Params, np.ndarray]:
    """Gradients of sum(upstream * forward(model, x)).

    For a batch the parameter gradients are summed over the rows; callers
    pass a mean-scaled upstream to get batch-mean gradients.

    Returns:
        (parameter gradients keyed like ``model.parameters()``, input gradient)
    """
    x2, single = _as_batch(model, x)
    g = np.asarray(upstream, dtype=np.float64).reshape(x2.shape[0], -1)
    if g.shape[1] != model.output_dim:
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(what='upstream gradient', expected=(x2.shape[0], model.output_dim),
                                           actual=np.shape(upstream))
        )

    if isinstance(model, LinearModel):
        grads = {'weights': g.T @ x2, 'bias': g.sum(axis=0)}
        input_grad = g @ model.weights
    else:
        pre = x2 @ model.hidden_weights.T + model.hidden_bias
        hidden = np.maximum(pre, 0.0)
        # relu'(0) = 0
        d_pre = (g @ model.out_weights) * (pre > 0.0)
        grads = {
            'hidden_weights': d_pre.T @ x2,
            'hidden_bias': d_pre.sum(axis=0),
            'out_weights': g.T @ hidden,
            'out_bias': g.sum(axis=0),
        }
        input_grad = d_pre @ model.hidden_weights
    return grads, (input_grad[0] if single else input_grad)


def init_model(config: ModelConfig, seed: int) -> Model:
    """He-initialized model: weights ~ N(0, 2/fan_in), biases zero"""
    rng = np.random.Generator(np.random.PCG64(seed))

    def he(rows, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(rows, fan_in))

    if config.kind == MODEL_LINEAR:
        return LinearModel(he(config.output_dim, config.input_dim), np.zeros(config.output_dim))
    return MlpModel(
        hidden_weights=he(config.hidden, config.input_dim),
        hidden_bias=np.zeros(config.hidden),
        out_weights=he(config.output_dim, config.hidden),
        out_bias=np.zeros(config.output_dim),
    )


def flatten_params(model: Model) -> np.ndarray:
    return np.concatenate([np.ravel(value) for value in model.parameters().values()])


def unflatten_params(model: Model, vector: np.ndarray) -> Model:
    """Model of the same shapes with parameters read from a flat vector"""
    vector = np.asarray(vector, dtype=np.float64)
    params, offset = {}, 0
    for name, value in model.parameters().items():
        params[name] = vector[offset:offset + value.size].reshape(value.shape)
        offset += value.size
    if offset != vector.size:
        raise ContractViolationError(
            ERROR_MESSAGES['shape'].format(what='parameter vector', expected=(offset,), actual=vector.shape)
        )
    return model.with_parameters(params)


def save_checkpoint(model: Model, path: Union[str, Path]) -> None:
    lines = [f'{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {model.kind}']
    for name, value in model.parameters().items():
        lines.append(' '.join([name] + [str(dim) for dim in value.shape]))
        lines.append(' '.join(format(float(v), FLOAT_FORMAT) for v in value.ravel()))
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')
    logger.info(f"Checkpoint written to {path}", extra={'path': str(path), 'kind': model.kind})


def load_checkpoint(path: Union[str, Path]) -> Model:
    """Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: on a missing file, unknown header or malformed parameter block
    """
    def fail(reason):
        return CheckpointError(ERROR_MESSAGES['checkpoint'].format(path=path, reason=reason))

    try:
        lines = Path(path).read_text(encoding='utf-8').splitlines()
    except OSError as e:
        raise fail(str(e)) from e
    if not lines:
        raise fail('empty file')

    header = lines[0].split()
    if len(header) != 3 or header[0] != CHECKPOINT_MAGIC or header[1] != str(CHECKPOINT_VERSION):
        raise fail(f'bad header {lines[0]!r}')
    model_type = {MODEL_LINEAR: LinearModel, MODEL_MLP: MlpModel}.get(header[2])
    if model_type is None:
        raise fail(f'unknown model kind {header[2]!r}')

    body = lines[1:]
    if len(body) != 2 * len(model_type.param_names):
        raise fail(f'expected {len(model_type.param_names)} parameter blocks')
    params = {}
    for expected, (spec, values) in zip(model_type.param_names, zip(body[0::2], body[1::2])):
        parts = spec.split()
        if not parts or parts[0] != expected:
            raise fail(f'expected parameter {expected!r}, got {spec!r}')
        try:
            shape = tuple(int(dim) for dim in parts[1:])
            flat = np.array([float(v) for v in values.split()], dtype=np.float64)
            params[expected] = flat.reshape(shape)
        except ValueError as e:
            raise fail(f'{expected}: {e}') from e

    try:
        return model_type(**params)
    except ContractViolationError as e:
        raise fail(str(e)) from e
