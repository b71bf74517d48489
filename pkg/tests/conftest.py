import json
from pathlib import Path

GOLDEN = Path(__file__).parent / "golden" / "corpus.json"

# criterion number -> (passed, summary), filled by test_acceptance
ACCEPTANCE: dict = {}


def load_golden() -> dict:
    return json.loads(GOLDEN.read_text())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {line}")
