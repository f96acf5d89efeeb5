"""Collects one PASS/FAIL line per acceptance criterion for the session summary."""

LINES: list[str] = []


def record(criterion: str, ok: bool | None, detail: str) -> str:
    status = "PASS" if ok else ("WARN" if ok is None else "FAIL")
    line = f"{status}  criterion {criterion}: {detail}"
    LINES.append(line)
    return line
