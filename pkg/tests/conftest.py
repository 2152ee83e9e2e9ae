import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = "test_acceptance.py::test_criterion_"


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    results = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if _ACCEPTANCE not in nodeid or (rep.when != "call" and outcome == "passed"):
                continue
            name = nodeid.split(_ACCEPTANCE, 1)[1]
            number = int(name.split("_", 1)[0])
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            status = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
            if results.get(number, ("PASS",))[0] == "PASS" or status == "FAIL":
                results[number] = (status, name.split("_", 1)[1].replace("_", " "), detail)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
