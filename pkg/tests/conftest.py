import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines even when stdout capture is on."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)
