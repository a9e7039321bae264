import numpy as np
import pytest
import torch

from adens.evaluation import ConfusionMatrix
from adens.labels import ClassLabel
from adens.models import DenseNetConfig, ModelHandle, build_densenet

# Confusion counts consistent with the published four-class test-fold report:
# 88 items, 82 correct, the very-mild row split 2/2/2.
REFERENCE_ENSEMBLE_ROWS = (
    (73, 0, 0, 0),
    (2, 2, 2, 0),
    (0, 0, 6, 1),
    (0, 0, 1, 1),
)


@pytest.fixture
def reference_matrix() -> ConfusionMatrix:
    return ConfusionMatrix(np.array(REFERENCE_ENSEMBLE_ROWS))


@pytest.fixture
def reference_pairs() -> list[tuple[ClassLabel, ClassLabel]]:
    pairs = []
    for t, row in enumerate(REFERENCE_ENSEMBLE_ROWS):
        for p, count in enumerate(row):
            pairs.extend([(ClassLabel(t), ClassLabel(p))] * count)
    return pairs


TINY_CONFIG = DenseNetConfig("tiny21", (2, 2, 2, 2), 8, 16, 4, False)


@pytest.fixture
def tiny_handle() -> ModelHandle:
    torch.manual_seed(0)
    return build_densenet(TINY_CONFIG)


@pytest.fixture
def labeled_arrays() -> tuple[np.ndarray, np.ndarray]:
    """Small separable patch arrays: class k gets a bright k-quadrant blob."""
    rng = np.random.default_rng(5)
    side = 32
    xs, ys = [], []
    for label in range(4):
        for _ in range(12):
            img = rng.normal(0.0, 0.2, size=(side, side)).astype(np.float32)
            r0 = (label // 2) * (side // 2)
            c0 = (label % 2) * (side // 2)
            img[r0 : r0 + side // 2, c0 : c0 + side // 2] += 2.0
            xs.append(np.repeat(img[None], 3, axis=0))
            ys.append(label)
    order = rng.permutation(len(xs))
    return np.stack(xs)[order].astype(np.float32), np.array(ys)[order]
