"""Shared fixtures and the acceptance-summary hook."""

import numpy as np
import pytest

from boostprop.channels import FilterBank, ImagePlanes, synth_filter_bank

# Filled by tests/test_acceptance.py; printed after the run.
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[criterion {key}] {status}: {detail}")


@pytest.fixture(scope="session")
def bank_gray():
    """Small single-plane bank for unit tests."""
    return synth_filter_bank(3, 3, 3, 3, 1)


@pytest.fixture(scope="session")
def bank_rgb():
    return synth_filter_bank(4, 4, 3, 3, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def identity_bank(cin: int = 1) -> FilterBank:
    """1x1 pass-through kernel: responses equal the image, rf half-width 0."""
    w = np.zeros((1, cin, 1, 1), dtype=np.float64)
    w[:, 0, 0, 0] = 1.0
    return FilterBank(weights=w, biases=np.zeros(1), provenance="test")


def random_image(rng, c: int, h: int, w: int) -> ImagePlanes:
    return ImagePlanes(rng.random((c, h, w)))
