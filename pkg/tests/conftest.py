import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS: dict[int, str] = {}


def record_verdict(n: int, ok: bool, detail: str) -> None:
    _VERDICTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[n])
