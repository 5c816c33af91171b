"""Shared fixtures for the heavy end-to-end tests plus a result banner.

The banner prints one [PASS]/[FAIL]/[SKIP] line per numbered guarantee in
test_acceptance.py so a full run ends with a scannable scorecard.
"""

import re

import numpy as np
import pytest

from saol.data import make_shapes
from saol.head import BackboneConfig, HeadConfig, SaolClassifier
from saol.train import TrainConfig, train

TOY_CLASSES = 3
TOY_IMAGE_SIZE = 32
TOY_TRAIN = 2000
TOY_TEST = 500
# shapes span 16..24 px so a ground-truth box covers several output cells
TOY_SIZE_RANGE = (16, 24)


@pytest.fixture(scope="session")
def toy_data():
    """Deterministic shapes dataset: 2,000 train / 500 test, 3 classes."""
    ds = make_shapes(
        TOY_TRAIN + TOY_TEST,
        num_classes=TOY_CLASSES,
        image_size=TOY_IMAGE_SIZE,
        seed=0,
        size_range=TOY_SIZE_RANGE,
    )
    return {
        "train_x": ds.images[:TOY_TRAIN].astype(np.float32),
        "train_y": ds.labels[:TOY_TRAIN],
        "test_x": ds.images[TOY_TRAIN:].astype(np.float32),
        "test_y": ds.labels[TOY_TRAIN:],
        "test_boxes": ds.boxes[TOY_TRAIN:],
    }


def toy_model(*, out_hw=None, seed=0):
    """Tiny three-block backbone used by every toy training run."""
    backbone = BackboneConfig(channels=(8, 16, 32), strides=(1, 2, 2), layers_per_block=1)
    head = HeadConfig(num_classes=TOY_CLASSES, out_hw=out_hw)
    return SaolClassifier(backbone, head, seed=seed, dtype=np.float32)


@pytest.fixture(scope="session")
def toy_run(toy_data):
    """One converged 30-epoch training run on the toy dataset."""
    import time

    model = toy_model()
    config = TrainConfig(epochs=30, batch_size=64, lr=0.05, seed=0)
    start = time.monotonic()
    train(model, toy_data["train_x"], toy_data["train_y"], config)
    return {"model": model, "seconds": time.monotonic() - start}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = {}
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("skipped", "SKIP")):
        for rep in terminalreporter.stats.get(status, []):
            match = re.search(r"test_criterion_(\d+)", rep.nodeid)
            if match is None:
                continue
            num = int(match.group(1))
            if label == "FAIL" or verdicts.get(num) != "FAIL":
                verdicts.setdefault(num, label)
                if label == "FAIL":
                    verdicts[num] = "FAIL"
    if not verdicts:
        return
    terminalreporter.write_sep("-", "acceptance scorecard")
    for num in sorted(verdicts):
        terminalreporter.write_line(f"[{verdicts[num]}] criterion {num}")
