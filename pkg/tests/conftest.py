import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_log  # noqa: E402


def _key(item):
    head = item[0].split()[0]
    return (int(head), item[0]) if head.isdigit() else (99, item[0])


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in sorted(acceptance_log.RESULTS.items(), key=_key):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"{status}  {name}: {detail}")
