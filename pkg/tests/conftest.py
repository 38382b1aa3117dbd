import numpy as np
import pytest

from gazefocal.tensor import Tape, Tensor, no_grad


def fd_check(fn, arrays, rng, eps=1e-6, max_coords=40):
    """Max relative error of tape gradients against central differences.

    ``fn`` maps Tensors to a Tensor; it is scalarized with a fixed random
    weighting. Everything runs in float64. For large inputs a random subset
    of coordinates is probed. The error of each input is normalized by the
    largest finite-difference magnitude seen for that input, so entries that
    are tiny by coincidence do not dominate.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    with no_grad():
        out_shape = fn(*[Tensor(a) for a in arrays]).shape
    weights = rng.standard_normal(out_shape)

    def value(arrs):
        with no_grad():
            return float((fn(*[Tensor(a) for a in arrs]).data * weights).sum())

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = (fn(*leaves) * Tensor(weights)).sum()
    tape.backward(loss)

    worst = 0.0
    for k, a in enumerate(arrays):
        grad = tape.grad(leaves[k])
        coords = list(np.ndindex(a.shape))
        if len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in pick]
        fd = []
        for idx in coords:
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            fd.append((value(plus) - value(minus)) / (2 * eps))
        fd = np.array(fd)
        an = np.array([grad[idx] for idx in coords])
        scale = max(np.abs(fd).max(), np.abs(an).max(), 1e-12)
        worst = max(worst, float(np.abs(an - fd).max() / scale))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion at the end of the run
_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    title = dict(report.user_properties).get("criterion")
    if title is None:
        return
    if report.when == "call" or report.failed:
        previous = _criteria.get(report.nodeid, (title, "passed"))[1]
        _criteria[report.nodeid] = (title, "failed" if report.failed or previous == "failed" else report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for title, outcome in sorted(_criteria.values()):
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {title}")
