import pytest

CRITERIA = {
    1: "marginal-cost alignment",
    2: "oracle equivalence",
    3: "wardrop certificate",
    4: "stability in eta",
    5: "beta-sweep trend",
    6: "convergence-time ordering",
    7: "robustness to demand",
    8: "numerical hygiene",
}


@pytest.fixture
def acceptance(request):
    """Record one criterion outcome; the summary prints a PASS/FAIL line per criterion."""
    results = request.config.stash.setdefault(_KEY, {})

    def record(number: int, ok: bool, detail: str) -> None:
        results[number] = (bool(ok), detail)

    return record


_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_KEY, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        ok, detail = results.get(n, (False, "not run or errored before reporting"))
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n}. {name}: {detail}")
