"""One pass/fail line per acceptance criterion, printed at the end of the run."""

RESULTS = {}


def check(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line
