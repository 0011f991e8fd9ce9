import numpy as np
import pytest
from PIL import Image

from tripletclass.synthetic import make_synthetic_dataset


def write_image(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)
    return path


@pytest.fixture
def small_tree(tmp_path):
    """3 class folders x 4 random 16x16 RGB PNGs, named out of order on purpose."""
    rng = np.random.default_rng(0)
    root = tmp_path / "data"
    for name in ("lung_scc", "lung_aca", "lung_n"):
        for i in range(4):
            write_image(root / name / f"img_{i}.png", rng.integers(0, 256, (16, 16, 3)))
    return root


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    """The 300-image, 64x64, three-texture desk-scale dataset."""
    return make_synthetic_dataset(tmp_path_factory.mktemp("synthetic"), per_class=100, size=64, seed=0)


_criteria: dict[int, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if marker:
        number, title = marker
        _criteria[number] = (title, report.passed)


def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark:
        item.user_properties.append(("criterion", tuple(mark.args)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}")
