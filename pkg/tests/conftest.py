import numpy as np
import pytest

from edgepop.rng import RngStream
from edgepop.tensor import Tensor, backward


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f with respect to every entry of x (in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def check_grads(build, *arrays, tol=1e-6):
    """Compare autodiff of build(*leaves) to central differences for every leaf."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    grads = backward(build(*leaves))
    for leaf in leaves:
        num = numeric_grad(lambda: float(build(*[Tensor(l.data) for l in leaves]).data), leaf.data)
        np.testing.assert_allclose(grads[leaf], num, rtol=tol, atol=tol)


@pytest.fixture
def rng():
    return RngStream(1234, ("tests",))


ACCEPTANCE: dict[int, str] = {}


def record(number: int, passed: bool | None, detail: str) -> None:
    """Store and print one acceptance line; the terminal summary repeats them in order.

    ``passed=None`` marks a criterion that was not run.
    """
    status = "NOT RUN" if passed is None else "PASS" if passed else "FAIL"
    line = f"criterion {number}: {status}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
