from pathlib import Path

DATA = Path(__file__).parent / "data"

# Verdict lines appended by the acceptance suite, echoed after the run.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
