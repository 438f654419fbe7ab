import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mltet import dispersion as disp
from mltet.errors import DegenerateFit, NotHermitian


@pytest.fixture(scope="module")
def op14():
    return disp.assemble_bloch_operator("2n15q14")


def cubic_roots_hermitian(h):
    """Eigenvalues of a 3x3 Hermitian matrix by the trigonometric cubic formula."""
    q = np.trace(h).real / 3
    p2 = np.sum(np.abs(h - q * np.eye(3)) ** 2) / 6
    p = math.sqrt(p2)
    b = (h - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(b).real / 2, -1, 1)
    phi = math.acos(r) / 3
    e1 = q + 2 * p * math.cos(phi)
    e3 = q + 2 * p * math.cos(phi + 2 * math.pi / 3)
    return np.sort([e1, 3 * q - e1 - e3, e3])


def test_parse_method():
    assert disp.parse_method("2n15") == ("p2n15", "exact")
    assert disp.parse_method("2n15q14") == ("p2n15", "rule")
    assert disp.parse_method("2n15q15") == ("p2n15", "mass")
    assert disp.parse_method("3n32q21") == ("p3n32", "rule")
    with pytest.raises(ValueError):
        disp.parse_method("quadratic")


@settings(max_examples=25)
@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9))
def test_hermitian_eigenvalues_match_cubic_formula(vals):
    a = np.array(vals[:9]).reshape(3, 3)
    h = a + a.T + 1j * (a - a.T)
    h = 0.5 * (h + h.conj().T)
    if np.abs(h).max() < 1e-3:
        return
    # the cubic formula loses sqrt(eps) at double roots
    np.testing.assert_allclose(disp.hermitian_eigenvalues(h), cubic_roots_hermitian(h),
                               atol=1e-6 * max(1.0, np.abs(h).max()))


def test_not_hermitian():
    with pytest.raises(NotHermitian):
        disp.hermitian_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_bloch_matrix_hermitian_and_constant_mode(op14):
    h = disp.bloch_matrix(op14, [0.3, -0.2, 0.7])
    np.testing.assert_allclose(h, h.conj().T, atol=1e-13)
    s0 = disp.hermitian_eigenvalues(disp.bloch_matrix(op14, np.zeros(3)))
    assert abs(s0[0]) < 1e-10 and s0[1] > 1e-3
    assert s0.min() > -1e-10


def test_brillouin_periodicity(op14):
    rng = np.random.default_rng(5)
    recip = 2 * np.pi * np.linalg.inv(op14.transform).T
    for _ in range(5):
        kappa = rng.uniform(-3, 3, 3)
        base = disp.hermitian_eigenvalues(disp.bloch_matrix(op14, kappa))
        for i in range(3):
            shifted = disp.hermitian_eigenvalues(disp.bloch_matrix(op14, kappa + recip[:, i]))
            np.testing.assert_allclose(shifted, base, atol=1e-9 * base.max())


def test_blocks_are_transposes(op14):
    for k, shift in enumerate(disp.SHIFTS):
        np.testing.assert_allclose(op14.block(-shift), op14.blocks[k].T, atol=1e-13)


def test_numerical_omega():
    s = np.array([1e-6, 1.0])
    np.testing.assert_allclose(disp.numerical_omega(s, 1e-3, 2), np.sqrt(s), rtol=1e-6)
    assert np.isnan(disp.numerical_omega(1.01 * 12.0, 1.0, 2))
    for K, c in disp.C_K.items():
        assert not np.isnan(disp.numerical_omega(0.999 * c, 1.0, K))
    with pytest.raises(ValueError):
        disp.numerical_omega(1.0, 0.1, 7)


def test_fibonacci_directions():
    d = disp.fibonacci_directions(100)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    assert np.abs(d.mean(axis=0)).max() < 0.02


def test_wavelength_conversion_round_trip():
    n = np.array([4.0, 16.0, 100.0])
    np.testing.assert_allclose(disp.elements_per_wavelength(disp.wavelength_for(n)), n)


def test_fit_power_law():
    n = np.array([10.0, 20.0, 40.0, 80.0])
    c, r = disp.fit_power_law(zip(n, 3.0 * n ** -4))
    assert c == pytest.approx(3.0, rel=1e-10) and r == pytest.approx(4.0, rel=1e-12)
    with pytest.raises(DegenerateFit):
        disp.fit_power_law([(10.0, 1e-3), (10.0, 2e-3), (10.0, 3e-3)])
    with pytest.raises(DegenerateFit):
        disp.fit_power_law([(10.0, 1e-3)])


def test_dispersion_error_decreases_with_resolution(op14):
    e = [disp.dispersion_error(op14, float(disp.wavelength_for(n)), n_directions=16)
         for n in (4.0, 8.0, 16.0)]
    assert e[0] > e[1] > e[2] > 0
    # fourth order for degree 2
    assert math.log2(e[1] / e[2]) == pytest.approx(4.0, abs=0.3)
    with pytest.raises(ValueError):
        disp.dispersion_error(op14, -1.0)


def test_max_spatial_eigenvalue_resolution_guard(op14):
    with pytest.raises(ValueError):
        disp.max_spatial_eigenvalue(op14, resolution=4)
