import dataclasses
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from editgrpo.ontology import build_default_ontology  # noqa: E402


@pytest.fixture(scope="session")
def onto():
    return build_default_ontology(7)


@pytest.fixture(scope="session")
def onto29(onto):
    """First 29 templates only: 30 tokens with END, the size used in the uniform-policy examples."""
    return dataclasses.replace(onto, templates=onto.templates[:29])


# Acceptance verdicts, one line per criterion, repeated in the terminal summary.
VERDICTS: list[str] = []


def record(criterion: int, ok: bool, detail: str, soft: bool = False) -> None:
    tag = "PASS" if ok else ("SOFT-FAIL" if soft else "FAIL")
    line = f"criterion {criterion:>2}: {tag}  {detail}"
    VERDICTS.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
