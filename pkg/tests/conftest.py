"""Shared pytest hooks: the acceptance suite reports one verdict line per criterion."""

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        verdict, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"CRITERION {k}: {verdict}  {detail}")
