"""Session-level acceptance reporting.

Acceptance tests record one verdict per criterion through the
`criterion` fixture; the terminal summary prints a PASS/FAIL line for
each so the gate can be read off the bottom of any pytest run. A
criterion whose test never reported (crashed before recording, or was
deselected) shows up as "not evaluated" rather than silently missing.
"""
from __future__ import annotations

import pytest

_TITLES = {
    1: "renderer matches the no-shortcut oracle",
    2: "analytic gradients match finite differences",
    3: "zero loss on an exact scene with exact priors",
    4: "motion recovery from corrupted tracks/depth",
    5: "semantic recovery from corrupted masks",
    6: "rendered confidence flags outlier supervision",
    7: "adaptive resampling repairs deleted geometry",
    8: "full pipeline beats every ablation (3 seeds)",
    9: "metric examples and brute-force equivalence",
    10: "bitwise deterministic runs",
    11: "segmenter bridge protocol and integration",
}

_report: dict[int, dict] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record (criterion number, ok, detail). Multiple records AND together."""

    def record(num: int, ok: bool, detail: str = "") -> None:
        entry = _report.setdefault(num, {"ok": True, "details": []})
        entry["ok"] = entry["ok"] and bool(ok)
        if detail:
            entry["details"].append(detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _report:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_TITLES):
        title = _TITLES[num]
        entry = _report.get(num)
        if entry is None:
            terminalreporter.write_line(
                f"criterion {num:2d} FAIL  {title}  [not evaluated]")
            continue
        verdict = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["details"])
        line = f"criterion {num:2d} {verdict}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
