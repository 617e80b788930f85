from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from pdr.config import load_config
from pdr.llm import Gateway
from pdr.mock import MockBackend

FIXTURES = Path(__file__).parent / "fixtures"

_criteria: list[tuple[str, str, str, float]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion exit check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _criteria.append((str(marker.args[0]), marker.args[1], rep.outcome, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, outcome, dur in sorted(_criteria, key=lambda c: int(c[0])):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {num}: {title} ({dur:.3f}s)")


def mock_gateway(script: dict, seed: int = 0) -> Gateway:
    return Gateway(MockBackend(script, seed=seed), sleep=lambda s: None)


@pytest.fixture
def gateway_factory():
    return mock_gateway


@pytest.fixture
def fixture_config(tmp_path):
    """The fixture dataset copied into tmp_path with a config pointing at it."""
    for name in ("dataset.jsonl", "public.jsonl", "config.txt"):
        shutil.copy(FIXTURES / name, tmp_path / name)

    def make(run_name: str = "run", **overrides):
        cfg = load_config(tmp_path / "config.txt", env={})
        cfg.run_dir = tmp_path / run_name
        for k, v in overrides.items():
            setattr(cfg, k, v)
        cfg.validate()
        return cfg

    return make


def read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
