"""One-sided margin losses, OSM-CTC and the experiment harness around them."""

__version__ = '1.0.0'

from .exceptions import (  # noqa: E402
    CheckpointError,
    ConfigError,
    ContractViolationError,
    DatasetError,
    InfeasibleTargetError,
    InvalidHyperParamsError,
    OsmarginError,
    SearchSpaceTooLargeError,
)
from .losses import HyperParams, get_loss, osm_log_probs, predict_osm, soft_osm  # noqa: E402

__all__ = [
    '__version__',
    'CheckpointError',
    'ConfigError',
    'ContractViolationError',
    'DatasetError',
    'HyperParams',
    'InfeasibleTargetError',
    'InvalidHyperParamsError',
    'OsmarginError',
    'SearchSpaceTooLargeError',
    'get_loss',
    'osm_log_probs',
    'predict_osm',
    'soft_osm',
]
