import re

CRITERIA: dict[str, str] = {}


def record_criterion(number, name: str, passed, detail: str) -> str:
    """``passed`` is True, False or None (skipped)."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[None if passed is None else bool(passed)]
    number = str(number)
    line = f"criterion {number:>3} {status}  {name}: {detail}"
    CRITERIA[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA, key=_order):
            terminalreporter.write_line(CRITERIA[number])


def _order(number: str):
    m = re.match(r"(\d+)(.*)", number)
    return int(m.group(1)), m.group(2)
