import pytest

GATE_LINES = []


@pytest.fixture
def gate(request):
    """Record one acceptance line: gate(ok, detail, seconds)."""
    name = request.node.name.split("_")[1].upper().replace("AC", "AC-")

    def record(ok, detail, seconds):
        line = f"{name:<6} {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f} s]"
        GATE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance gate")
        for line in sorted(GATE_LINES, key=lambda s: int(s.split()[0][3:])):
            terminalreporter.write_line(line)
