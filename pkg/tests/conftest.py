from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from decwatt.simlab import GeneratorConfig, generate_dataset  # noqa: E402


@pytest.fixture(scope="session")
def fs_clean():
    return generate_dataset(GeneratorConfig(model_id="FS", seed=11), 500)


@pytest.fixture(scope="session")
def fs_noisy():
    return generate_dataset(GeneratorConfig(model_id="FS", seed=5, noise_rel_sigma=0.03))


@pytest.fixture(scope="session")
def clean_by_model():
    cache = {}

    def get(model_id, n_rows=None, seed=3):
        key = (model_id, n_rows, seed)
        if key not in cache:
            cache[key] = generate_dataset(GeneratorConfig(model_id=model_id, seed=seed), n_rows)
        return cache[key]

    return get


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
