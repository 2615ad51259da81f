import sys


def pytest_terminal_summary(terminalreporter):
    """Print one PASS/FAIL line per acceptance criterion that ran."""
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    rows = getattr(module, "RESULTS", None)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(rows):
        title, passed, detail = rows[number]
        terminalreporter.write_line(f"CRITERION {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
