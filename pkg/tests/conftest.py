"""Collects acceptance results and prints one line per criterion at the end of the run."""

ACCEPTANCE = {}

TITLES = {
    1: "kernel exactness",
    2: "conservation suite",
    3: "gradient correctness",
    4: "projection and natural-gradient algebra",
    5: "Mobius invariance",
    6: "self-consistency shooting oracle",
    7: "ellipse sweep",
    8: "hyperbolicity (triangle angle sums)",
    9: "welding contract",
}


def record(number, checks, detail=""):
    """Store the outcome of criterion ``number``; ``checks`` maps a label to a bool."""
    failed = [k for k, ok in checks.items() if not ok]
    ACCEPTANCE[number] = (not failed, detail, failed)
    return failed


def pytest_terminal_summary(terminalreporter):
    if not any(("test_acceptance" in str(i.nodeid)) for i in terminalreporter.stats.get("passed", []) +
               terminalreporter.stats.get("failed", [])):
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in TITLES.items():
        if n not in ACCEPTANCE:
            tr.write_line(f"criterion {n} {title}: FAIL (no result: errored or deselected)")
            continue
        ok, detail, failed = ACCEPTANCE[n]
        status = "PASS" if ok else "FAIL [" + "; ".join(failed) + "]"
        tr.write_line(f"criterion {n} {title}: {status} | {detail}")
