"""Shared fixtures; trained models are session-scoped because GAN and
inverter training dominate suite runtime. The acceptance criteria print
one verdict line each, collected and echoed in the terminal summary."""

import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nadv import data, gan, inverter  # noqa: E402


# ----------------------------------------------------- verdict capture

ACCEPTANCE_LINES: list[str] = []


def record_criterion(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {num:2d} [{name}]: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


# ------------------------------------------------------ swiss fixtures


@pytest.fixture(scope="session")
def swiss_train():
    return data.gen_swiss_roll(5000, seed=1)


@pytest.fixture(scope="session")
def swiss_held():
    return data.gen_swiss_roll(1000, seed=2)


@pytest.fixture(scope="session")
def swiss_gan(swiss_train):
    spec = gan.GanSpec(2, 2, gen_hidden=(128, 128, 128),
                       critic_hidden=(128, 128, 128))
    # low penalty weight + decaying lr: the defaults stall off-manifold
    # on this 2-D toy
    cfg = gan.GanTrainConfig(steps=10000, batch_size=256, lr=5e-4,
                             lr_decay=True, gp_weight=0.1, seed=0)
    model, _ = gan.train_wgan(swiss_train.x, spec, cfg)
    return model


@pytest.fixture(scope="session")
def swiss_inverter(swiss_gan, swiss_train):
    cfg = inverter.InverterTrainConfig(steps=6000, batch_size=256,
                                       hidden=(128, 128, 128), lr=5e-4,
                                       seed=0)
    model, _ = inverter.train_inverter(swiss_gan, swiss_train.x, cfg)
    return model


# ------------------------------------------------------ digit fixtures


def write_idx_images(path, images_u8):
    n, rows, cols = images_u8.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images_u8.tobytes())


def write_idx_labels(path, labels_u8):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels_u8.shape[0]))
        f.write(labels_u8.tobytes())


@pytest.fixture(scope="session")
def digits(tmp_path_factory):
    """8x8 digit images routed through the IDX reader, as a real corpus
    would be; pixel counts 0..16 are rescaled to the full byte range."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    images = np.round(raw.images * (255.0 / 16.0)).astype(np.uint8)
    labels = raw.target.astype(np.uint8)
    d = tmp_path_factory.mktemp("digits")
    write_idx_images(d / "images.idx", images)
    write_idx_labels(d / "labels.idx", labels)
    return data.load_idx(str(d / "images.idx"), str(d / "labels.idx"))


@pytest.fixture(scope="session")
def digits_split(digits):
    rng = np.random.default_rng(0)
    perm = rng.permutation(digits.n)
    cut = digits.n - 360
    train = data.Dataset(digits.x[perm[:cut]], digits.norm_lo,
                         digits.norm_hi, y=digits.y[perm[:cut]],
                         provenance=digits.provenance + "|train")
    held = data.Dataset(digits.x[perm[cut:]], digits.norm_lo,
                        digits.norm_hi, y=digits.y[perm[cut:]],
                        provenance=digits.provenance + "|held")
    return train, held


@pytest.fixture(scope="session")
def digit_gan(digits_split):
    train, _ = digits_split
    spec = gan.GanSpec(16, 64, gen_hidden=(128, 128, 128),
                       critic_hidden=(128, 128, 128))
    cfg = gan.GanTrainConfig(steps=4000, batch_size=128, lr=5e-4,
                             lr_decay=True, gp_weight=0.1, seed=0)
    model, _ = gan.train_wgan(train.x, spec, cfg)
    return model


@pytest.fixture(scope="session")
def digit_inverter(digit_gan, digits_split):
    train, _ = digits_split
    cfg = inverter.InverterTrainConfig(steps=4000, batch_size=128,
                                       hidden=(128, 128, 128), lr=5e-4,
                                       seed=0)
    model, _ = inverter.train_inverter(digit_gan, train.x, cfg)
    return model
