import sys
from pathlib import Path

# shared helpers (gradcheck) live next to the tests
sys.path.insert(0, str(Path(__file__).resolve().parent))

CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
