import json

import numpy as np
import pytest

from mltet import poly
from mltet import quadrature as quad
from mltet import refelement as ref
from mltet.errors import (InvalidElementData, MissingElementData, NotUnisolvent,
                          SystemInconsistent)
from mltet.refgeom import REFERENCE_VOLUME, T4, T22, T31, SymmetricOrbit


@pytest.fixture
def no_data_env(monkeypatch):
    monkeypatch.delenv(ref.DATA_ENV, raising=False)


def test_space_dimensions():
    for eid, n in ref.ELEMENT_DIM.items():
        assert ref.element_space(eid).dim == n


def test_linear_element_by_hand():
    el = ref.linear_element()
    # the nodal basis of P1 on the vertices is the barycentric coordinates:
    # w_i(x) = nodes[i] . (x1, x2, x3, x4)
    pts = np.random.default_rng(0).dirichlet(np.ones(4), 5)
    np.testing.assert_allclose(el.basis.values(pts), pts @ el.nodes.T, atol=1e-12)
    np.testing.assert_allclose(el.tables.mass_weights, 1 / 24, rtol=1e-14)
    # d/dx1 of (x1, x2, x3, x4) is (1, 0, 0, -1): B11 = (1/6) g g^T by hand
    g = el.nodes @ np.array([1.0, 0.0, 0.0, -1.0])
    np.testing.assert_allclose(el.tables.B[0, 0], np.outer(g, g) / 6.0, atol=1e-14)
    assert np.count_nonzero(np.round(np.diag(el.tables.B[0, 0]), 12)) == 2
    np.testing.assert_allclose(el.tables.D[0], g[None, :], atol=1e-14)


def test_derive_mass_weights_p1_and_p2():
    w = ref.derive_mass_weights(ref.polynomial_space(1),
                                ref.NodeSet((SymmetricOrbit(T31, (0.0,)),)))
    assert w.entries[0][1] == pytest.approx(1 / 24, rel=1e-14)
    rule = ref.derive_mass_weights(ref.element_space("p2n15"), ref.p2n15_nodes())
    assert len(rule.entries) == 4
    assert all(wi > 0 for _, wi in rule.entries)
    assert rule.weights().sum() == pytest.approx(1 / 6, rel=1e-13)


def test_non_unisolvent_nodes():
    space = ref.element_space("p2n15")
    centroids = np.tile([0.25, 0.25, 0.25, 0.25], (15, 1))
    with pytest.raises(NotUnisolvent):
        ref.build_nodal_basis(space, centroids)
    bad = ref.NodeSet((SymmetricOrbit(T31, (0.0,)), SymmetricOrbit(T31, (0.1,)),
                       SymmetricOrbit(T31, (0.2,)), SymmetricOrbit(T31, (0.3,))))
    with pytest.raises(SystemInconsistent):
        ref.derive_mass_weights(space, bad)


def test_p2n15_basis_delta_property(p2):
    vals = p2.basis.values(p2.nodes)
    np.testing.assert_allclose(vals, np.eye(15), atol=1e-10)


def test_face_conformity():
    assert ref.check_face_conforming(ref.element_space("p2n15"), ref.p2n15_nodes())
    assert ref.check_face_conforming(ref.polynomial_space(1),
                                     ref.NodeSet((SymmetricOrbit(T31, (0.0,)),)))
    interior = ref.NodeSet((SymmetricOrbit(T31, (0.1,)), SymmetricOrbit(T22, (0.15,))))
    assert not ref.check_face_conforming(ref.polynomial_space(2), interior)


def test_spurious_free_screens(p2):
    rule = quad.builtin_stiffness_rule("p2n15")
    assert ref.check_spurious_free(p2.basis, rule, "scalar") == (True, 1)
    assert ref.check_spurious_free(p2.basis, rule, "elastic") == (True, 6)
    ok, null = ref.check_spurious_free(p2.basis, quad.centroid_rule(), "scalar")
    assert not ok and null >= 2


def test_B_and_D_tables(p2):
    B, D = p2.tables.B, p2.tables.D
    np.testing.assert_allclose(B.sum(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(B[0, 1], B[1, 0].T, atol=1e-14)
    assert D.shape == (3, 14, 15)
    np.testing.assert_allclose(D.sum(axis=-1), 0.0, atol=1e-13)
    # the stiffness rule reproduces B on the products it integrates exactly:
    # v^T B u for u interpolating P_p (gradient in P_(p-1)) and any v
    w = p2.tables.stiffness_rule.weights()
    mons = poly.monomials(2)
    u = poly.vandermonde(p2.nodes, 2)            # columns: nodal values of monomials
    for a in range(3):
        for b in range(3):
            np.testing.assert_allclose(D[a].T @ (w[:, None] * (D[b] @ u)), B[a, b] @ u,
                                       atol=1e-13)
    assert u.shape[1] == len(mons)


def test_mass_gram_positive_definite(p2):
    w = p2.tables.mass_weights
    vals = p2.basis.values(p2.nodes)
    gram = vals.T @ (w[:, None] * vals)
    assert np.linalg.eigvalsh(gram).min() > 0


def test_stiffness_rule_seminorm_null_space_is_constants(p2):
    D, w = p2.tables.D, p2.tables.stiffness_rule.weights()
    s = sum(D[a].T @ (w[:, None] * D[a]) for a in range(3))
    ev, vec = np.linalg.eigh(s)
    assert ev[0] > -1e-13 and ev[1] > 1e-8
    np.testing.assert_allclose(np.abs(vec[:, 0]), 1 / np.sqrt(15), atol=1e-10)


def test_interpolation_reproduces_space(p2):
    rows = ref.element_space("p2n15").rows
    vals = poly.evaluate(rows, ref.element_space("p2n15").degree, p2.nodes)
    coeffs = ref.interpolate(p2.basis, vals)
    np.testing.assert_allclose(coeffs, rows, atol=1e-9)


@pytest.mark.parametrize("element_id", quad.ELEMENT_IDS)
def test_stiffness_exactness_space_inside_generators(element_id):
    space = ref.element_space(element_id)
    gens = quad.builtin_generator_set(element_id)
    assert ref.exactness_containment(space, gens) < 1e-9
    rule = quad.builtin_stiffness_rule(element_id)
    assert ref.space_exactness_defect(rule, ref.stiffness_exactness_space(space)) < 1e-13


def test_missing_element_data(no_data_env):
    with pytest.raises(MissingElementData):
        ref.mass_node_set("p3n32")
    assert len(ref.mass_node_set("p2n15")) == 15


def test_mass_symmetric_generators_p3():
    gens = ref.mass_symmetric_generators("p3n32")
    assert len(gens) == 7
    # every permuted copy of a symmetric generator is the same function
    pts = np.random.default_rng(0).dirichlet(np.ones(4), 20)
    for g in gens:
        base = poly.bary_eval(g.as_poly(), pts)
        for copy in g.copies():
            np.testing.assert_allclose(poly.bary_eval(copy, pts), base, atol=1e-12)


def test_finder_derived_p3n32_mass_rule(p3_data_dir):
    rule = ref.mass_rule("p3n32", p3_data_dir)
    assert rule.n_points == 32
    assert ref.validate_mass_rule("p3n32", rule) == []
    nodes = ref.mass_node_set("p3n32", p3_data_dir)
    assert len(nodes) == 32
    # the weights are the ones derive_mass_weights gives for these nodes
    derived = ref.derive_mass_weights(ref.element_space("p3n32"), nodes)
    np.testing.assert_allclose(derived.weights(), rule.weights(), rtol=1e-9)
    el = ref.build_element("p3n32", "rule", p3_data_dir)
    srule = quad.builtin_stiffness_rule("p3n32")
    assert ref.check_spurious_free(el.basis, srule, "scalar") == (True, 1)
    assert ref.check_spurious_free(el.basis, srule, "elastic") == (True, 6)


def test_invalid_element_data_rejected(tmp_path, p3_data_dir):
    d = json.loads((p3_data_dir / "p3n32.mass.json").read_text())
    d["orbits"][0]["weight"] *= 1.5
    path = tmp_path / "p3n32.mass.json"
    path.write_text(json.dumps(d))
    with pytest.raises(InvalidElementData, match="accuracy"):
        ref.load_element_data(path, "p3n32")
    d["element_id"] = "p4n60"
    path.write_text(json.dumps(d))
    with pytest.raises(InvalidElementData):
        ref.load_element_data(path, "p3n32")


def test_validate_reports_wrong_node_count():
    rule = quad.QuadratureRule(((SymmetricOrbit(T4), 1 / 6),), "one point")
    assert ref.validate_mass_rule("p2n15", rule)[0].startswith("unisolvence")
