import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=1000, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 11):
        if number not in module.RESULTS:
            terminalreporter.write_line(f"[{number:2d}] not run (skipped or deselected)")
            continue
        title, ok, elapsed, note = module.RESULTS[number]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{number:2d}] {status} {title} ({elapsed:.1f}s) {note}")
