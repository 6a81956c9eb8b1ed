import pytest
import torch

torch.set_num_threads(1)

_acceptance: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    entry = _acceptance.setdefault(number, {"title": title, "passed": True, "detail": ""})
    if rep.when == "call" or rep.failed:
        entry["passed"] = entry["passed"] and rep.passed
        details = [v for k, v in item.user_properties if k == "detail"]
        if details:
            entry["detail"] = details[-1]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        e = _acceptance[number]
        status = "PASS" if e["passed"] else "FAIL"
        line = f"[{status}] {number:>2}. {e['title']}"
        if e["detail"]:
            line += f" -- {e['detail']}"
        terminalreporter.write_line(line)
