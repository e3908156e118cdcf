import numpy as np
import pytest

from xdistill.data import Dataset
from xdistill.distill import TrainConfig, train_teacher
from xdistill.models import build_teacher_mnist


def quadrant_dataset(n, seed=0, classes=4):
    """28x28 images whose label is the quadrant holding a bright square."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, n)
    images = rng.uniform(0, 0.1, size=(n, 1, 28, 28)).astype(np.float32)
    for i, lab in enumerate(labels):
        y, x = divmod(int(lab), 2)
        oy, ox = rng.integers(0, 5, size=2)
        images[i, 0, 3 + 14 * y + oy:9 + 14 * y + oy, 3 + 14 * x + ox:9 + 14 * x + ox] = 1.0
    return Dataset(images, labels)


@pytest.fixture(scope="session")
def toy_data():
    return quadrant_dataset(256)


@pytest.fixture(scope="session")
def toy_teacher(toy_data):
    model, _ = train_teacher(toy_data, build_teacher_mnist(0), TrainConfig(epochs=3, batch_size=32))
    return model


# ---------------------------------------------------------------- acceptance reporting

_VERDICTS = {}



@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (report.when == "call" or report.skipped or report.failed):
        return
    n, title = marker.args
    verdict = "BLOCKED" if report.skipped else ("PASS" if report.passed else "FAIL")
    detail = []
    if report.skipped and isinstance(report.longrepr, tuple):
        detail.append(report.longrepr[2].removeprefix("Skipped: "))
    detail += [f"{k}={v}" for k, v in item.user_properties]
    _VERDICTS.setdefault(n, (title, {}))[1][item.nodeid] = (verdict, "; ".join(detail))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    rank = {"PASS": 0, "BLOCKED": 1, "FAIL": 2}
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        title, results = _VERDICTS[n]
        verdicts = [v for v, _ in results.values()]
        verdict = max(verdicts, key=rank.get)
        if len(results) == 1:
            detail = next(iter(results.values()))[1]
        else:
            worst = [d for v, d in results.values() if v == verdict and d]
            detail = "; ".join([f"{verdicts.count('PASS')}/{len(verdicts)} tests pass"] + worst[:1])
        line = f"criterion {n:>2} {verdict:<7} {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
