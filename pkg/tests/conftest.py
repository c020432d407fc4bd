import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(n_classes, per_class, n_features=4, months=None, seed=0, kind="real"):
    from malcl.data import LabeledDataset

    r = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), per_class)
    if kind == "boolean":
        X = (r.random((labels.size, n_features)) < 0.5).astype(np.float32)
    else:
        X = r.normal(size=(labels.size, n_features)).astype(np.float32)
    month = None if months is None else r.integers(0, months, labels.size)
    return LabeledDataset(X, labels, month, [f"c{i}" for i in range(n_classes)], kind)


ACCEPTANCE_LINES = []


def pytest_runtest_logreport(report):
    if report.when in ("call", "setup"):
        ACCEPTANCE_LINES.extend(value for key, value in report.user_properties if key == "acceptance")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(ACCEPTANCE_LINES), key=ACCEPTANCE_LINES.index):
            terminalreporter.write_line(line)
