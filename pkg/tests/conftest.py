import numpy as np
import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training runs (minutes)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props:
                continue
            name = props["criterion"]
            status = "PASS" if rep.passed and rep.when == "call" else "FAIL"
            if status == "PASS" and name in lines:
                continue
            lines[name] = f"{status}  criterion {name}: {props.get('detail', rep.when + ' error')}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for name in sorted(lines, key=lambda s: int(s.split(".")[0])):
            terminalreporter.write_line(lines[name])
