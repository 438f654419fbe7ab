import numpy as np
import pytest

from mltet import kernels, poly
from mltet.errors import InvertedElement, NonpositiveDensity

from conftest import random_affine_vertices


def nodal_monomials(element, degree):
    """Columns: nodal values of all monomials of degree <= ``degree`` (reference coords)."""
    return poly.vandermonde(element.nodes, degree)


def rigid_motions(element, geom, origin):
    x = geom.map(element.nodes[:, :3], origin)            # physical node positions
    n = element.n
    out = []
    for k in range(3):
        t = np.zeros((3, n))
        t[k] = 1.0
        out.append(t.reshape(-1))
    for a, b in [(0, 1), (1, 2), (0, 2)]:
        r = np.zeros((3, n))
        r[a], r[b] = -x[:, b], x[:, a]
        out.append(r.reshape(-1))
    return out


def test_geometry_of_reference_element():
    g = kernels.element_geometry(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))
    np.testing.assert_allclose(g.jacobian, np.eye(3))
    assert g.det == pytest.approx(1.0)


def test_inverted_element():
    with pytest.raises(InvertedElement):
        kernels.element_geometry(np.array([[0, 0, 0], [0, 1, 0], [1, 0, 0], [0, 0, 1.0]]))


def test_nonpositive_density(p2):
    g = kernels.element_geometry(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))
    with pytest.raises(NonpositiveDensity):
        kernels.mass_diagonal(p2.tables.mass_weights, g, -1.0)


def test_transform_scalar_rejects_nonpositive_c():
    g = kernels.element_geometry(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))
    with pytest.raises(ValueError):
        kernels.transform_scalar(np.array([1.0, 0.0]), g)


def test_exact_kernel_matches_direct_double_sum(p2, rng):
    for v in random_affine_vertices(rng, 5):
        g = kernels.element_geometry(v)
        c = kernels.reference_coefficient(g) * rng.uniform(0.5, 2.0)
        u = rng.standard_normal(p2.n)
        np.testing.assert_allclose(kernels.matvec_exact_scalar(p2.tables, c, u),
                                   kernels.matvec_direct_scalar(p2.tables, c, u), atol=1e-12)


@pytest.mark.parametrize("use_p3", [False, True])
def test_scalar_kernel_equivalence(use_p3, p2, p3_data_dir, rng):
    from mltet import refelement as ref
    el = ref.build_element("p3n32", "rule", p3_data_dir) if use_p3 else p2
    U = nodal_monomials(el, el.p)
    w = el.tables.stiffness_rule.weights()
    for v in random_affine_vertices(rng, 50):
        g = kernels.element_geometry(v)
        c = rng.uniform(0.5, 2.0)
        exact = np.column_stack([kernels.matvec_exact_scalar(
            el.tables, c * kernels.reference_coefficient(g), u) for u in U.T])
        samples = kernels.transform_scalar(np.full(len(w), c), g, w)
        quadv = np.column_stack([kernels.matvec_quad_scalar(el.tables, samples, u) for u in U.T])
        scale = np.abs(exact).max()
        np.testing.assert_allclose(quadv, exact, atol=1e-12 * scale)


def test_elastic_kernel_equivalence_and_rigid_motions(p2, rng):
    w = p2.tables.stiffness_rule.weights()
    U = nodal_monomials(p2, 2)
    for v in random_affine_vertices(rng, 50):
        g = kernels.element_geometry(v)
        lam, mu = rng.uniform(0.5, 2.0, 2)
        C = kernels.isotropic_tensor(lam, mu)
        Ct = kernels.transform_elastic(C, g)
        samples = kernels.transform_elastic(C, g, w)
        scale = None
        for comp in range(3):
            for u in U.T:
                full = np.zeros((3, p2.n))
                full[comp] = u
                full = full.reshape(-1)
                exact = kernels.matvec_exact_elastic(p2.tables, Ct, full)
                q = kernels.matvec_quad_elastic(p2.tables, samples, full)
                iso = kernels.matvec_exact_elastic_isotropic(p2.tables, lam, mu, g, full)
                qiso = kernels.matvec_quad_elastic_isotropic(p2.tables, lam, mu, g, w, full)
                scale = max(scale or 0.0, np.abs(exact).max())
                np.testing.assert_allclose(q, exact, atol=1e-12 * max(scale, 1.0))
                np.testing.assert_allclose(iso, exact, atol=1e-12 * max(scale, 1.0))
                np.testing.assert_allclose(qiso, exact, atol=1e-12 * max(scale, 1.0))
        for r in rigid_motions(p2, g, v[0]):
            assert np.abs(kernels.matvec_quad_elastic(p2.tables, samples, r)).max() < 1e-11
            assert np.abs(kernels.matvec_exact_elastic(p2.tables, Ct, r)).max() < 1e-11


def test_operation_count_audit(p2):
    g = kernels.element_geometry(np.array([[0, 0, 0], [1, 0.1, 0], [0, 1, 0.2], [0.1, 0, 1.0]]))
    w = p2.tables.stiffness_rule.weights()
    C = kernels.isotropic_tensor(1.0, 1.0)
    u = np.ones(3 * p2.n)
    nq, n = len(w), p2.n
    cq = kernels.MatvecCounter()
    kernels.matvec_quad_elastic(p2.tables, kernels.transform_elastic(C, g, w), u, cq)
    assert dict(cq) == {(nq, n): 9, (n, nq): 9}
    ce = kernels.MatvecCounter()
    kernels.matvec_exact_elastic(p2.tables, kernels.transform_elastic(C, g), u, ce)
    assert dict(ce) == {(n, n): 27}
    cs = kernels.MatvecCounter()
    kernels.matvec_quad_scalar(p2.tables, kernels.transform_scalar(np.ones(nq), g, w), u[:n], cs)
    assert sum(cs.values()) == 6
    cx = kernels.MatvecCounter()
    kernels.matvec_exact_scalar(p2.tables, kernels.reference_coefficient(g), u[:n], cx)
    assert dict(cx) == {(n, n): 6}


def test_batched_kernels_match_single(p2, rng):
    verts = random_affine_vertices(rng, 7)
    jac, inv, det = kernels.batch_geometry(verts)
    w = p2.tables.stiffness_rule.weights()
    U = rng.standard_normal((7, p2.n))
    ct = np.array([kernels.reference_coefficient(kernels.element_geometry(v)) for v in verts])
    samples = np.array([kernels.transform_scalar(np.ones(len(w)), kernels.element_geometry(v), w)
                        for v in verts])
    be = kernels.batch_exact_scalar(p2.tables, ct, U)
    bq = kernels.batch_quad_scalar(p2.tables, samples, U)
    lam, mu = np.full((7, len(w)), 1.5), np.full((7, len(w)), 0.7)
    Ue = rng.standard_normal((7, 3, p2.n))
    bel = kernels.batch_quad_elastic_isotropic(p2.tables, lam, mu, inv, det, w, Ue)
    for e, v in enumerate(verts):
        g = kernels.element_geometry(v)
        np.testing.assert_allclose(be[e], kernels.matvec_exact_scalar(p2.tables, ct[e], U[e]),
                                   atol=1e-12)
        np.testing.assert_allclose(bq[e], kernels.matvec_quad_scalar(p2.tables, samples[e], U[e]),
                                   atol=1e-12)
        single = kernels.matvec_quad_elastic_isotropic(p2.tables, 1.5, 0.7, g, w,
                                                       Ue[e].reshape(-1))
        np.testing.assert_allclose(bel[e].reshape(-1), single, atol=1e-11)


def test_element_operator_is_symmetric_psd(p2, rng):
    g = kernels.element_geometry(random_affine_vertices(rng, 1)[0])
    w = p2.tables.stiffness_rule.weights()
    eye = np.eye(p2.n)
    samples = kernels.transform_scalar(np.ones(len(w)), g, w)
    k = np.column_stack([kernels.matvec_quad_scalar(p2.tables, samples, e) for e in eye])
    np.testing.assert_allclose(k, k.T, atol=1e-12)
    ev = np.linalg.eigvalsh(k)
    assert ev[0] > -1e-12 * ev[-1] and ev[1] > 1e-8 * ev[-1]
