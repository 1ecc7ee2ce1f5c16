"""Shared sink for the per-criterion result lines, printed in the
terminal summary so they survive output capture."""

LINES = []


def record(line: str) -> None:
    LINES.append(line)
