"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(name: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[name] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
