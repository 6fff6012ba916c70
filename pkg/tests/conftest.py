import time

import numpy as np
import pytest

from dcdgd import graph

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def w1():
    return graph.load_matrix(graph.read_matrix_file(graph.data_path("w1.txt")))


@pytest.fixture(scope="session")
def w2():
    return graph.load_matrix(graph.read_matrix_file(graph.data_path("w2.txt")))


@pytest.fixture
def timed(request):
    """Yields a callable returning seconds since the test started."""
    start = time.perf_counter()
    return lambda: time.perf_counter() - start


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    if call.when == "setup" and call.excinfo is None:
        return
    if call.excinfo is None:
        status = "PASS"
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        status = "SKIP"
    else:
        status = "FAIL"
    detail = ""
    if status == "SKIP":
        detail = str(call.excinfo.value)
    _CRITERIA[number] = (title, status, call.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, duration, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}: {title} ({duration:.1f} s)"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)


def write_classification_csv(path, rows=800, features=57, seed=1):
    """Linearly separable-ish 0/1 data in the Spambase layout."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((rows, features))
    w = rng.standard_normal(features)
    y = (X @ w + rng.standard_normal(rows) > 0).astype(int)
    np.savetxt(path, np.column_stack([X, y]), delimiter=",", fmt=["%.6f"] * features + ["%d"])
    return path


def real_data_verdict(outcome, milestone=0.1):
    """Checks shared by the real-data acceptance run and its fixture twin.

    Returns a dict of named booleans plus a detail string per check.
    """
    from dcdgd import harness

    res = outcome.results
    tops = sorted({cid.split("__")[0] for cid in res})
    checks = {}
    for top in tops:
        for kind in ("identity", "hybrid_C5"):
            r = res[f"{top}__{kind}"]
            checks[f"{top}/{kind} converges"] = (not r.any_diverged and r.final_mean_gap() < r.initial_gap,
                                                f"final {r.final_mean_gap():.4g} vs initial {r.initial_gap:.4g}")
    tern = res["negative__ternary"]
    flagged = any(n.startswith("negative/ternary: infeasible") for n in outcome.notes)
    checks["negative/ternary diverges or flagged"] = (tern.any_diverged or flagged,
                                                      f"diverged {tern.diverged_count}, flagged {flagged}")
    for top in tops:
        ident = res[f"{top}__identity"]
        level = milestone * ident.initial_gap
        hyb = harness.bits_to_reach(res[f"{top}__hybrid_C5"], level)
        spa_id = next(cid for cid in res if cid.startswith(f"{top}__sparsifier"))
        spa = harness.bits_to_reach(res[spa_id], level)
        reached = harness.bits_to_reach(ident, level) < float("inf")
        checks[f"{top} hybrid bits < sparsifier bits"] = (reached and hyb < spa,
                                                          f"hybrid {hyb:.0f} vs sparsifier {spa:.0f}")
    return checks
