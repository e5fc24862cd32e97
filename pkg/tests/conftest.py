"""Shared pytest wiring: the acceptance-criteria summary block.

Acceptance tests carry ``critN`` in their names; after a run the hook
prints one PASS/FAIL line per criterion so the gate is readable at a
glance without digging through the test list.
"""

import re

CRITERIA = {
    1: "attack efficacy and baseline sanity on the planted corpus",
    2: "adversary ordering: A1 beats A2 given personal hashtags",
    3: "metric correctness: haversine, expected distance, binary kind",
    4: "enumerator cardinalities match brute force",
    5: "recommendations equal the brute-force optimum",
    6: "bound-2 defense pushes the attack to baseline level",
    7: "replacement wins most protected posts",
    8: "bound-2 utility near unbounded, advise latency in budget",
    9: "pipeline stages are bit-identical across same-seed runs",
}

_PATTERN = re.compile(r"test_acceptance\.py::.*crit(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts: dict = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            found = _PATTERN.search(getattr(report, "nodeid", ""))
            if found:
                num = int(found.group(1))
                verdicts.setdefault(num, []).append(outcome == "passed")
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        if num not in verdicts:
            continue
        verdict = "PASS" if all(verdicts[num]) else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {CRITERIA[num]}: {verdict}")
