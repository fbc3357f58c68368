"""Collects one PASS/FAIL/SKIP line per acceptance criterion for the terminal summary."""
LINES = []


def record(number, ok, summary, seconds, limit):
    timed = seconds < limit
    status = "PASS" if ok and timed else "FAIL"
    line = f"[{status}] criterion {number:>2}: {summary} ({seconds:.2f}s, limit {limit:g}s)"
    LINES.append(line)
    print(line)
    return ok and timed


def skip(number, summary):
    line = f"[SKIP] criterion {number:>2}: {summary}"
    LINES.append(line)
    print(line)
