"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

RESULTS: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    RESULTS[criterion] = (bool(passed), detail)
    return bool(passed)


def lines() -> list[str]:
    return [
        f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        for n, (ok, detail) in sorted(RESULTS.items())
    ]
