import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# acceptance results, filled by test_acceptance.report()
CRITERIA: dict = {}
FULL_SUITE_BUDGET_S = 300.0
_START = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        name, ok, detail, secs = CRITERIA[n]
        tr.write_line(f"CRITERION {n:2d} {'PASS' if ok else 'FAIL'}: {name}: {detail} [{secs:.3f} s]")
    elapsed = time.perf_counter() - _START
    ok = elapsed < FULL_SUITE_BUDGET_S and exitstatus == 0
    tr.write_line(f"full session {'PASS' if ok else 'FAIL'}: {elapsed:.1f} s "
                  f"(budget {FULL_SUITE_BUDGET_S:.0f} s, exit status {int(exitstatus)})")
