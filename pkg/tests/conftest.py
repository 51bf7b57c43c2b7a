import os

import pytest

from spincim.config import parse_config

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

_ACCEPTANCE = []


def ini(sections):
    """Render {section: {key: value}} as INI text."""
    lines = []
    for name, keys in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in keys.items())
    return "\n".join(lines) + "\n"


def make_config(seed=0, **sections):
    return parse_config(ini(sections), seed)


def moons_config(method, seed=0, epochs=100, layers="dense:32, dense:32, dense:2", **method_keys):
    return make_config(seed, model={"input_shape": 2, "layers": layers},
                       method={"name": method, "mc_passes": 10, **method_keys},
                       train={"epochs": epochs, "dataset": "two_moons", "n_train": 600, "n_test": 600,
                              "noise": 0.1, "data_seed": seed})


def mnist_config(seed=0, epochs=30):
    return make_config(
        seed,
        model={"input_shape": "1,28,28", "layers": "flatten, dense:256, dense:10", "real_first_last": "false",
               "input_map": "bipolar"},
        method={"name": "scaledrop", "adaptive": "true", "mc_passes": 20},
        train={"epochs": epochs, "lr": 0.01, "dataset": "idx",
               "train_images": os.path.join(DATA_DIR, "mnist1k-train-images-idx3-ubyte.gz"),
               "train_labels": os.path.join(DATA_DIR, "mnist1k-train-labels-idx1-ubyte.gz"),
               "test_images": os.path.join(DATA_DIR, "mnist1k-t10k-images-idx3-ubyte.gz"),
               "test_labels": os.path.join(DATA_DIR, "mnist1k-t10k-labels-idx1-ubyte.gz")})


@pytest.fixture
def acceptance():
    """Register a criterion outcome; the summary prints one line per criterion."""
    def record(number, name, passed, detail=""):
        _ACCEPTANCE.append((number, name, bool(passed), detail))
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}  {detail}"
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}  {detail}")
