"""Re-check every reference row against its target set and list disagreeing cells."""

import sys

from sizeloop.golden import GROUP_TARGETS, ROWS, mismatches
from sizeloop.spec import check_spec, evaluate_success


def main():
    bad = []
    for row in ROWS:
        flags = check_spec(row.results(), GROUP_TARGETS[row.group])
        verdict = evaluate_success(flags, None)
        failing = ",".join(f.metric for f in flags if not f.passed) or "-"
        print(f"{row.label:<16} succeed={str(verdict.succeed):<5} failing={failing}")
        bad += mismatches(row, flags)
    print(f"\n{len(bad)} mismatched cells")
    for m in bad:
        print("  " + m)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
