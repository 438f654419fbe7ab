import numpy as np
import pytest

from mltet import refelement as ref


@pytest.fixture(scope="session")
def p2():
    return ref.build_element("p2n15", "rule")


@pytest.fixture(scope="session")
def p2_exact():
    return ref.build_element("p2n15", "exact")


@pytest.fixture(scope="session")
def p3_data_dir(tmp_path_factory):
    """Directory holding a finder-derived, validated p3n32 mass data file."""
    result = ref.find_mass_rule("p3n32", max_trials=100)
    if not result.success:
        pytest.skip("mass rule search for p3n32 found nothing")
    d = tmp_path_factory.mktemp("element-data")
    ref.write_element_data(d / "p3n32.mass.json", "p3n32", result.rule)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_affine_vertices(rng, n):
    """n positively oriented, not too flat tetrahedra, shape (n, 4, 3)."""
    out = []
    while len(out) < n:
        v = rng.uniform(-1.0, 1.0, (4, 3))
        det = np.linalg.det((v[1:] - v[0]).T)
        if abs(det) < 0.05:
            continue
        if det < 0:
            v[[1, 2]] = v[[2, 1]]
        out.append(v)
    return np.array(out)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def report_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
