"""The small local dataset: scikit-learn's 8x8 handwritten digits.

Pixels arrive as integer ink counts in [0, 16]; we rescale to [0, 1] floats
and reshape to planar [1, 8, 8]. The split is stratified so every class
keeps its share of the (rather small) 1797 samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split

IMAGE_SHAPE = (1, 8, 8)
NUM_CLASSES = 10


@dataclass
class Split:
    train_x: np.ndarray  # [n, 1, 8, 8] float32 in [0, 1]
    train_y: np.ndarray  # [n] int64
    val_x: np.ndarray
    val_y: np.ndarray


def load_split(val_fraction: float = 0.2, seed: int = 0) -> Split:
    bunch = load_digits()
    x = (bunch.data.astype(np.float32) / 16.0).reshape(-1, *IMAGE_SHAPE)
    y = bunch.target.astype(np.int64)
    train_x, val_x, train_y, val_y = train_test_split(
        x, y, test_size=val_fraction, random_state=seed, stratify=y
    )
    return Split(train_x, train_y, val_x, val_y)


def batches(x: np.ndarray, y: np.ndarray, batch_size: int,
            rng: np.random.Generator | None = None):
    """Yield (x, y) minibatches; shuffled when an rng is given."""
    order = np.arange(len(x))
    if rng is not None:
        rng.shuffle(order)
    for lo in range(0, len(order), batch_size):
        idx = order[lo:lo + batch_size]
        yield x[idx], y[idx]
