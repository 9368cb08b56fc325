"""Shared test helpers: finite-difference checking and tiny fixture datasets."""

import numpy as np
import pytest

from gbsr.data import Dataset


def central_diff(f, x, h=1e-6):
    """Gradient of scalar f() w.r.t. array x, mutating x in place per entry."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f()
        flat[k] = orig - h
        fm = f()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(a, b, guard=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), guard)


# Release-criterion status lines collected by test_acceptance; relayed in the
# terminal summary so they stay visible without -s.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_dataset():
    """3 users, 3 items; every user keeps at least one non-train item."""
    return Dataset(3, 3,
                   train=[(0, 0), (0, 1), (1, 1), (2, 0)],
                   test=[(1, 0)],
                   social=[(0, 1), (1, 2)])


@pytest.fixture
def small_synthetic():
    from gbsr.data import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(cluster_count=2, users_per_cluster=12,
                         items_per_cluster=10, interaction_rate=0.4,
                         intra_social_rate=0.3, noise_edge_fraction=0.5,
                         seed=11)
    return generate_synthetic(spec)
