import csv
from pathlib import Path
from typing import List, Optional

import numpy as np

from osmargin.losses import HyperParams


def create_test_rng(seed: int = 0) -> np.random.Generator:
    """PCG64 generator for test fixtures"""
    return np.random.Generator(np.random.PCG64(seed))


def create_margin_satisfying_scores(rng: np.random.Generator, classes: int, label: int,
                                    hp: Optional[HyperParams] = None) -> np.ndarray:
    """Scores on the zero plateau: 0 <= s_y <= lambda_min and s_j >= lambda_max"""
    hp = hp or HyperParams()
    scores = hp.lambda_max + rng.uniform(0.0, 1000.0, classes)
    scores[label] = rng.uniform(0.0, hp.lambda_min)
    return scores


def create_test_log_probs(rng: np.random.Generator, frames: int, width: int) -> np.ndarray:
    """Row-normalized log-probabilities with every probability well above zero"""
    logits = rng.standard_normal((frames, width))
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def create_test_config(tmp_path: Path, body: str, name: str = 'run.cfg') -> Path:
    """Write a run configuration file and return its path"""
    path = tmp_path / name
    path.write_text(body, encoding='utf-8')
    return path


def read_csv_rows(path: Path) -> List[List[str]]:
    with Path(path).open(newline='', encoding='utf-8') as f:
        return list(csv.reader(f))
