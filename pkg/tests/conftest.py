import scenarios


def pytest_terminal_summary(terminalreporter):
    if scenarios.RESULTS:
        terminalreporter.section("acceptance criteria and scenario examples")
        for line in scenarios.RESULTS:
            terminalreporter.write_line(line)
