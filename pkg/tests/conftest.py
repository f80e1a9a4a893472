import numpy as np
import pytest

from tpower_uap.diffnet import AvgPool, Conv2d, Dense, Flatten, MaxPool, Model, ReLU, build_model


def tiny_models(rng):
    """One small model per layer kind plus a mixed conv net, all with random weights."""
    models = []
    models.append(Model([Dense(rng.normal(size=(4, 6)), rng.normal(size=4))], (6,), 4))
    models.append(Model([Dense(rng.normal(size=(5, 6)), rng.normal(size=5)), ReLU(),
                         Dense(rng.normal(size=(3, 5)), rng.normal(size=3))], (6,), 3))
    models.append(Model([Conv2d(rng.normal(size=(3, 3, 2, 3)), rng.normal(size=3), stride=1, padding=1),
                         MaxPool(2), Flatten(), Dense(rng.normal(size=(3, 48)))], (8, 8, 2), 3))
    models.append(Model([Conv2d(rng.normal(size=(2, 2, 2, 2)), rng.normal(size=2), stride=2, padding=0),
                         AvgPool(2), Flatten(), Dense(rng.normal(size=(2, 8)))], (8, 8, 2), 2))
    arch = [{"kind": "conv2d", "filters": 3, "kernel": 3, "padding": 1}, {"kind": "relu"},
            {"kind": "maxpool", "window": 2}, {"kind": "conv2d", "filters": 4, "kernel": 3},
            {"kind": "avgpool", "window": 1}, {"kind": "flatten"}, {"kind": "dense"}]
    models.append(build_model(arch, (8, 8, 3), 5, seed=int(rng.integers(1 << 31))))
    return models


def smooth_enough(model, x, margin=1e-3):
    """True when no ReLU pre-activation is near 0 and every MaxPool argmax is clear."""
    A = x[None]
    for layer in model.layers:
        if isinstance(layer, ReLU) and np.min(np.abs(A)) < margin:
            return False
        if isinstance(layer, MaxPool):
            w = layer.window
            n, h, wd, c = A.shape
            B = A[:, : h // w * w, : wd // w * w].reshape(n, h // w, w, wd // w, w, c)
            B = np.sort(B.transpose(0, 1, 3, 5, 2, 4).reshape(n, h // w, wd // w, c, w * w), axis=-1)
            if np.min(B[..., -1] - B[..., -2]) < margin:
                return False
        A, _ = layer.forward(A)
    return True


@pytest.fixture(scope="session")
def small_models():
    return tiny_models(np.random.default_rng(1234))


# ---- acceptance reporting: tests marked with @pytest.mark.criterion(n, text)
# get one PASS/FAIL line each in the terminal summary

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    key = tuple(mark.args)
    # a failure in setup, call or teardown fails the criterion
    if key not in _outcomes or not report.passed:
        _outcomes[key] = report.passed and not report.skipped


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (number, text), ok in sorted(_outcomes.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {text}")
