# OSM hyperparameters (classification defaults)
DEFAULT_ALPHA = 0.1
DEFAULT_LAMBDA = 1.0
DEFAULT_LAMBDA_MIN = 100.0
DEFAULT_LAMBDA_MAX = 600.0

# OCR runs: stronger Lagrange weight, margin planes on the O(1) scale of fresh frame scores
OCR_ALPHA = 1.0
OCR_LAMBDA_MIN = 1.0
OCR_LAMBDA_MAX = 6.0

# Hinge baseline
DEFAULT_HINGE_MARGIN = 1.0

# Loss kinds
LOSS_SOFT_OSM = 'soft-osm'
LOSS_HARD_OSM = 'hard-osm'
LOSS_BINARY_OSM = 'binary-osm'
LOSS_CE = 'ce'
LOSS_BINARY_CE = 'binary-ce'
LOSS_HINGE = 'hinge'
LOSS_OSM_CTC = 'osm-ctc'
LOSS_CTC = 'ctc'

CLASSIFICATION_LOSSES = (
    LOSS_SOFT_OSM,
    LOSS_HARD_OSM,
    LOSS_BINARY_OSM,
    LOSS_CE,
    LOSS_BINARY_CE,
    LOSS_HINGE,
)
BINARY_LOSSES = (LOSS_BINARY_OSM, LOSS_BINARY_CE)
OSM_LOSSES = (LOSS_SOFT_OSM, LOSS_HARD_OSM, LOSS_BINARY_OSM)
SEQUENCE_LOSSES = (LOSS_OSM_CTC, LOSS_CTC)
ALL_LOSSES = CLASSIFICATION_LOSSES + SEQUENCE_LOSSES

# Optimizer defaults
DEFAULT_MOMENTUM = 0.9
DEFAULT_WEIGHT_DECAY = 0.0005
DEFAULT_LR = 0.01
OCR_LR = 0.001
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

OPTIMIZER_SGD = 'sgd'
OPTIMIZER_ADAM = 'adam'

# Learning-rate schedules
SCHEDULE_COSINE = 'cosine-warm-restart'
SCHEDULE_EXPONENTIAL = 'exponential-decay'
DEFAULT_PERIOD_EPOCHS = 100
DEFAULT_WARMUP_EPOCHS = 5
DEFAULT_DECAY_RATE = 0.97
DEFAULT_MIN_LR = 0.0

# Training loop
DEFAULT_EPOCHS = 300
DEFAULT_BATCH_SIZE = 32
OCR_BATCH_SIZE = 60
DEFAULT_SEED = 0
MARGIN_QUANTILES = (5, 25, 50, 75, 95)

# Models
MODEL_LINEAR = 'linear'
MODEL_MLP = 'mlp'
DEFAULT_HIDDEN = 32
CHECKPOINT_MAGIC = 'osmargin-checkpoint'
CHECKPOINT_VERSION = 1

# CTC
# Stand-in for log(0); large enough that exp() of any sum involving it is 0.
LOG_ZERO = -1e30
BRUTE_FORCE_MAX_PATHS = 10_000_000

# Synthetic data
BLOB_RADIUS = 10.0
RING_RADII = (4.0, 8.0)
RING_HALF_WIDTH = 0.5
DEFAULT_ALPHABET = '0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ'
EVAL_SEED_OFFSET = 10_007
FLOAT_FORMAT = '.17g'

# Gradient checks
FD_STEP = 1e-4
GRADCHECK_TOLERANCE = 1e-6
GRADCHECK_CTC_TOLERANCE = 1e-5
GRADCHECK_SCORE_STD = 300.0
GRADCHECK_MAX_CLASSES = 10
KINK_GUARD = 1e-2

# CLI
EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2
THREADS_ENV_VAR = 'OSMARGIN_THREADS'

REPORT_FILE = 'report.csv'
SUMMARY_FILE = 'summary.txt'
CHECKPOINT_FILE = 'model.ckpt'
SWEEP_FILE = 'sweep.csv'
COMPARE_FILE = 'compare.csv'
OCR_FILE = 'ocr.csv'

SCALED_DOWN_LABEL = 'scaled-down'
FULL_SIZE_LABEL = 'full'

# Hyperparameters a sweep may vary, in output column order
SWEEP_KEYS = ('alpha', 'lambda', 'lambda_max', 'lambda_min')

# Logging
LOG_FORMAT = '%(asctime)s %(levelname)s [%(name)s] %(message)s'

# Error messages
ERROR_MESSAGES = {
    'label_range': 'Label {label} is outside [0, {classes})',
    'shape': '{what}: expected shape {expected}, got {actual}',
    'empty': '{what} must not be empty',
    'length_mismatch': '{what}: {left} items vs {right} items',
    'hyperparams': 'Invalid OSM hyperparameters: {reason}',
    'infeasible': 'Target of length {length} needs at least {required} frames, got {frames}',
    'search_space': 'Brute-force search over {paths} paths exceeds the limit of {limit}',
    'missing_file': 'Dataset file not found: {path}',
    'empty_file': 'Dataset file has no rows: {path}',
    'ragged_row': 'Line {line}: expected {expected} fields, got {actual}',
    'non_numeric': 'Line {line}: field {field} is not numeric: {value!r}',
    'unknown_label': 'Line {line}: label {label} does not occur in the training file',
    'checkpoint': 'Malformed checkpoint {path}: {reason}',
    'config_field': 'Invalid value for {field}: {reason}',
    'config_missing': 'Missing required setting {field}',
    'sweep_rejected': 'lambda_max must exceed lambda_min',
    'binary_classes': 'Loss {loss} needs exactly 2 classes, dataset has {classes}',
}
