"""Synthetic datasets and CSV ingestion.

Random streams come from numpy's PCG64 generator seeded through
``SeedSequence(seed, spawn_key=key)``, one independent stream per class or
per example, so every generator is a pure function of its arguments and
gives the same arrays on every platform.

CSV rows are ``label,f1,f2,...`` with integer labels and a constant feature
count; labels are remapped to ``0..C-1`` in order of first occurrence.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import (
    BLOB_RADIUS,
    ERROR_MESSAGES,
    FLOAT_FORMAT,
    RING_HALF_WIDTH,
    RING_RADII,
)
from .ctc import Alphabet, required_frames
from .exceptions import (
    ContractViolationError,
    EmptyDatasetError,
    MissingDatasetFileError,
    NonNumericFieldError,
    RaggedRowError,
    UnknownLabelError,
)

logger = logging.getLogger(__name__)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream for (seed, key...)"""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ContractViolationError(
                ERROR_MESSAGES['shape'].format(what='features', expected='(N, D), N >= 1', actual=features.shape)
            )
        if labels.shape != (features.shape[0],):
            raise ContractViolationError(
                ERROR_MESSAGES['shape'].format(what='labels', expected=(features.shape[0],), actual=labels.shape)
            )
        if np.any(labels < 0) or np.any(labels >= self.class_count):
            bad = labels[(labels < 0) | (labels >= self.class_count)][0]
            raise ContractViolationError(ERROR_MESSAGES['label_range'].format(label=bad, classes=self.class_count))
        if not np.all(np.isfinite(features)):
            raise ContractViolationError('features contain non-finite values')
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> 'LabeledDataset':
        return LabeledDataset(self.features[indices], self.labels[indices], self.class_count)


@dataclass(frozen=True, eq=False)
class SequenceExample:
    features: np.ndarray
    target: str

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ContractViolationError(
                ERROR_MESSAGES['shape'].format(what='sequence features', expected='(T, D), T >= 1',
                                               actual=features.shape)
            )
        object.__setattr__(self, 'features', features)

    @property
    def frames(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True, eq=False)
class SequenceDataset:
    examples: Tuple[SequenceExample, ...]
    alphabet: Alphabet
    encoded: Tuple[Tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        examples = tuple(self.examples)
        if not examples:
            raise ContractViolationError(ERROR_MESSAGES['empty'].format(what='sequence dataset'))
        dims = {example.features.shape[1] for example in examples}
        if len(dims) != 1:
            raise ContractViolationError(f'inconsistent feature dimensions {sorted(dims)}')
        object.__setattr__(self, 'examples', examples)
        object.__setattr__(self, 'encoded', tuple(self.alphabet.encode(e.target) for e in examples))

    def __len__(self):
        return len(self.examples)

    @property
    def dim(self) -> int:
        return self.examples[0].features.shape[1]

    def infeasible_indices(self) -> List[int]:
        return [i for i, (example, target) in enumerate(zip(self.examples, self.encoded))
                if example.frames < required_frames(target)]


def gen_blobs(n_per_class: int, classes: int, dim: int, spread: float, seed: int) -> LabeledDataset:
    """Gaussian blobs with class means on a circle of radius 10 in the first two dims"""
    if classes < 2 or dim < 2:
        raise ContractViolationError('gen_blobs needs classes >= 2 and dim >= 2')
    if n_per_class < 1 or spread < 0:
        raise ContractViolationError('gen_blobs needs n_per_class >= 1 and spread >= 0')
    features, labels = [], []
    for c in range(classes):
        angle = 2.0 * np.pi * c / classes
        mean = np.zeros(dim)
        mean[0], mean[1] = BLOB_RADIUS * np.cos(angle), BLOB_RADIUS * np.sin(angle)
        noise = stream(seed, c).standard_normal((n_per_class, dim))
        features.append(mean + spread * noise)
        labels.append(np.full(n_per_class, c))
    return LabeledDataset(np.vstack(features), np.concatenate(labels), classes)


def gen_rings(n_per_class: int, seed: int) -> LabeledDataset:
    """Two concentric annuli in 2-D (radii 4 and 8, half-width 0.5)"""
    if n_per_class < 1:
        raise ContractViolationError('gen_rings needs n_per_class >= 1')
    features, labels = [], []
    for c, radius in enumerate(RING_RADII):
        rng = stream(seed, c)
        r = rng.uniform(radius - RING_HALF_WIDTH, radius + RING_HALF_WIDTH, n_per_class)
        theta = rng.uniform(0.0, 2.0 * np.pi, n_per_class)
        features.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        labels.append(np.full(n_per_class, c))
    return LabeledDataset(np.vstack(features), np.concatenate(labels), len(RING_RADII))


def gen_ocr_sequences(count: int, alphabet_size: int, min_len: int, max_len: int,
                      repeats: int, noise: float, seed: int) -> SequenceDataset:
    """Synthetic OCR strings rendered as one-hot frame templates.

    Every character emits ``repeats`` frames of its one-hot template plus
    Gaussian noise; a clean all-zero frame separates adjacent duplicate
    characters so every target stays alignable.
    """
    if alphabet_size < 2 or repeats < 1:
        raise ContractViolationError('gen_ocr_sequences needs alphabet_size >= 2 and repeats >= 1')
    if not 1 <= min_len <= max_len or count < 1 or noise < 0:
        raise ContractViolationError('gen_ocr_sequences needs 1 <= min_len <= max_len, count >= 1, noise >= 0')
    alphabet = Alphabet.of_size(alphabet_size)
    templates = np.eye(alphabet_size)
    examples = []
    for i in range(count):
        rng = stream(seed, i)
        length = int(rng.integers(min_len, max_len + 1))
        labels = rng.integers(0, alphabet_size, size=length)
        frames = []
        for position, label in enumerate(labels):
            if position > 0 and label == labels[position - 1]:
                frames.append(np.zeros((1, alphabet_size)))
            frames.append(templates[label] + noise * rng.standard_normal((repeats, alphabet_size)))
        examples.append(SequenceExample(np.vstack(frames), alphabet.decode(labels.tolist())))
    return SequenceDataset(tuple(examples), alphabet)


def split_dataset(dataset: LabeledDataset, eval_fraction: float, seed: int) -> Tuple[LabeledDataset, LabeledDataset]:
    """Seeded shuffle split into (train, eval)"""
    if not 0.0 < eval_fraction < 1.0:
        raise ContractViolationError('eval_fraction must be in (0, 1)')
    order = stream(seed).permutation(len(dataset))
    n_eval = max(1, int(round(eval_fraction * len(dataset))))
    if n_eval >= len(dataset):
        raise ContractViolationError('dataset too small to split')
    return dataset.subset(np.sort(order[n_eval:])), dataset.subset(np.sort(order[:n_eval]))


def load_csv(path: Union[str, Path],
             label_map: Optional[Mapping[int, int]] = None) -> Tuple[LabeledDataset, Dict[int, int]]:
    """Parse ``label,f1,f2,...`` rows.

    Labels are remapped to class indices in order of first appearance, or
    through ``label_map`` (the mapping of another file) when it is given.

    Returns:
        (dataset, mapping from original label to class index)
    Raises:
        MissingDatasetFileError, EmptyDatasetError, RaggedRowError, NonNumericFieldError,
        UnknownLabelError
    """
    path = Path(path)
    if not path.is_file():
        raise MissingDatasetFileError(ERROR_MESSAGES['missing_file'].format(path=path))

    fixed = label_map is not None
    label_map = dict(label_map) if fixed else {}
    labels: List[int] = []
    rows: List[List[float]] = []
    width = None
    with path.open(newline='', encoding='utf-8') as f:
        for line, record in enumerate(csv.reader(f), start=1):
            if not record or all(not value.strip() for value in record):
                continue
            if width is None:
                width = len(record)
                if width < 2:
                    raise RaggedRowError(line, 2, width)
            elif len(record) != width:
                raise RaggedRowError(line, width, len(record))

            try:
                label = int(record[0].strip())
            except ValueError:
                raise NonNumericFieldError(line, 1, record[0])
            values = []
            for position, value in enumerate(record[1:], start=2):
                try:
                    values.append(float(value))
                except ValueError:
                    raise NonNumericFieldError(line, position, value)
            if not np.all(np.isfinite(values)):
                raise NonNumericFieldError(line, 2, ','.join(record[1:]))

            if fixed and label not in label_map:
                raise UnknownLabelError(line, label)
            labels.append(label_map.setdefault(label, len(label_map)))
            rows.append(values)

    if not rows:
        raise EmptyDatasetError(ERROR_MESSAGES['empty_file'].format(path=path))
    logger.info(f"Loaded {len(rows)} rows from {path}", extra={'path': str(path), 'classes': len(label_map)})
    return LabeledDataset(np.array(rows), np.array(labels), len(label_map)), label_map


def save_csv(dataset: LabeledDataset, path: Union[str, Path], label_names: Sequence[int] = ()) -> None:
    """Write ``label,f1,...`` rows with 17 significant digits.

    ``label_names[i]`` replaces class index ``i`` when given.
    """
    with Path(path).open('w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        for label, row in zip(dataset.labels, dataset.features):
            name = label_names[label] if label_names else label
            writer.writerow([int(name)] + [format(float(v), FLOAT_FORMAT) for v in row])
