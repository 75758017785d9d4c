import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    CRITERIA[number] = (name, bool(passed), detail)
    print(f"CRITERION {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        name, ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"CRITERION {k:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
