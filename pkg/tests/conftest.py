from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def oru_text():
    return (FIXTURES / "oru_r01.hl7").read_text(encoding="utf-8")


@pytest.fixture
def bundle_text():
    return (FIXTURES / "message_bundle.json").read_text(encoding="utf-8")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        status, title = mod.RESULTS[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {title}")
