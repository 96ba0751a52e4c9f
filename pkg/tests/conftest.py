import functools
from pathlib import Path

from pndsim.harness import load_scenario, prepare

DATA = Path(__file__).parent / "data"


@functools.lru_cache(maxsize=None)
def prepared(name: str):
    """Label and lower a corpus scenario (or a file under tests/data) once per session."""
    path = DATA / f"{name}.ini"
    return prepare(load_scenario(path if path.exists() else name))


# acceptance results, echoed once more at the end of the run
ACCEPTANCE: list[str] = []


def report(name: str, ok: bool, detail: str = "") -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
