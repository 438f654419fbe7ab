"""Element stiffness matrix-vector products, computed on the fly.

Two families per physics:

* exact integration with element-constant material (precomputed B tables),
* quadrature with material sampled per point (precomputed D tables).

Jacobians follow the usual convention ``J[p, a] = dx_p / dx~_a``; physical
derivatives are ``d_p = sum_a Jinv[a, p] d~_a``.  With this convention the
reference-space scalar coefficient is ``c det(J) Jinv Jinv^T``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import InvertedElement, NonpositiveDensity
from .refelement import KernelTables, symmetrized_B


@dataclass(frozen=True)
class ElementGeometry:
    jacobian: np.ndarray
    inverse: np.ndarray
    det: float

    @property
    def inverse_transpose(self) -> np.ndarray:
        return self.inverse.T

    @property
    def volume_ratio(self) -> float:
        """|e| / |e~|, equal to det(J)."""
        return self.det

    def map(self, ref_points, origin) -> np.ndarray:
        pts = np.atleast_2d(ref_points)[:, :3]
        return np.asarray(origin) + pts @ self.jacobian.T


def element_geometry(vertices) -> ElementGeometry:
    """Affine map data for a tetrahedron given its 4 vertices (rows).

    Raises
    ------
    InvertedElement
        if the vertex ordering gives a non-positive Jacobian determinant.
    """
    v = np.asarray(vertices, dtype=float)
    jac = (v[1:] - v[0]).T
    det = float(np.linalg.det(jac))
    if not det > 0:
        raise InvertedElement(f"element has det(J) = {det:.3e}")
    return ElementGeometry(jac, np.linalg.inv(jac), det)


def batch_geometry(vertices: np.ndarray):
    """Jacobians, inverses and determinants for an (E, 4, 3) vertex array."""
    v = np.asarray(vertices, dtype=float)
    jac = np.transpose(v[:, 1:] - v[:, :1], (0, 2, 1))
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        bad = int(np.argmin(det))
        raise InvertedElement(f"element {bad} has det(J) = {det[bad]:.3e}")
    return jac, np.linalg.inv(jac), det


# -- materials -----------------------------------------------------------------

def reference_coefficient(geom: ElementGeometry) -> np.ndarray:
    """det(J) Jinv Jinv^T: the scalar coefficient map for c = 1."""
    return geom.det * geom.inverse @ geom.inverse.T


def transform_scalar(c_values, geom: ElementGeometry, weights=None) -> np.ndarray:
    """Per-point reference tensors w_k c(x_k) det(J) Jinv Jinv^T, shape (npts, 3, 3)."""
    c = np.atleast_1d(np.asarray(c_values, dtype=float))
    if np.any(c <= 0):
        raise ValueError("coefficient c must be positive")
    w = np.ones_like(c) if weights is None else np.asarray(weights, dtype=float)
    return (w * c)[:, None, None] * reference_coefficient(geom)[None]


def isotropic_tensor(lam: float, mu: float) -> np.ndarray:
    """C_ijkl = lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk)."""
    d = np.eye(3)
    return (lam * np.einsum("ij,kl->ijkl", d, d)
            + mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)))


def transform_elastic(C, geom: ElementGeometry, weights=None) -> np.ndarray:
    """Reference elasticity tensors Ct[a, i, j, b] = det sum_pq Jinv[a,p] C[p,i,j,q] Jinv[b,q].

    ``C`` is a single (3,3,3,3) tensor or a per-point stack (npts,3,3,3,3);
    with ``weights`` the result is per point and scaled by the weights.
    """
    C = np.asarray(C, dtype=float)
    ji = geom.inverse
    if C.ndim == 4:
        out = geom.det * np.einsum("ap,pijq,bq->aijb", ji, C, ji)
        if weights is None:
            return out
        return np.asarray(weights)[:, None, None, None, None] * out[None]
    out = geom.det * np.einsum("ap,kpijq,bq->kaijb", ji, C, ji)
    if weights is not None:
        out = np.asarray(weights)[:, None, None, None, None] * out
    return out


# -- operation counting --------------------------------------------------------------

class MatvecCounter(Counter):
    """Counts dense matrix-vector products by matrix shape."""

    def product(self, mat, vec, transpose=False):
        self[mat.shape[::-1] if transpose else mat.shape] += 1
        return mat.T @ vec if transpose else mat @ vec


def _mv(counter, mat, vec, transpose=False):
    if counter is not None:
        return counter.product(mat, vec, transpose)
    return mat.T @ vec if transpose else mat @ vec


# -- scalar kernels ---------------------------------------------------------------------

def matvec_exact_scalar(tables: KernelTables, c_tensor, u, counter: MatvecCounter | None = None):
    """Exact-integral product for an element-constant reference coefficient (A1-A2)."""
    bhat = symmetrized_B(tables.B)
    c = np.asarray(c_tensor, dtype=float)
    out = np.zeros(tables.n)
    for (a, b), mat in bhat.items():
        eps = _mv(counter, mat, u)      # A1
        out += c[a, b] * eps             # A2
    return out


def matvec_quad_scalar(tables: KernelTables, samples, u, counter: MatvecCounter | None = None):
    """Quadrature product with per-point reference tensors ``samples`` (B1-B3)."""
    D = tables.D
    eps = np.array([_mv(counter, D[j], u) for j in range(3)])       # B1: (3, n')
    sigma = np.einsum("kij,jk->ik", samples, eps)                   # B2
    return sum(_mv(counter, D[i], sigma[i], transpose=True) for i in range(3))  # B3


def matvec_direct_scalar(tables: KernelTables, c_tensor, u):
    """Plain double sum over B (no symmetrization); reference for A1-A2."""
    return np.einsum("ab,abij,j->i", np.asarray(c_tensor), tables.B, u)


# -- elastic kernels ---------------------------------------------------------------------

def _components(u, n):
    return np.asarray(u, dtype=float).reshape(3, n)


def matvec_exact_elastic(tables: KernelTables, C_tensor, u, counter: MatvecCounter | None = None):
    """A1*-A2*: 27 products with the n x n B tables, then the tensor contraction.

    ``u`` is the concatenation (u_1, u_2, u_3) of nodal component vectors.
    """
    n = tables.n
    uc = _components(u, n)
    eps = np.empty((3, 3, 3, n))
    for a in range(3):
        for b in range(3):
            for jv in range(3):
                eps[a, b, jv] = _mv(counter, tables.B[a, b], uc[jv])   # A1*
    v = np.einsum("aijb,abjn->in", C_tensor, eps)                      # A2*
    return v.reshape(-1)


def matvec_exact_elastic_isotropic(tables: KernelTables, lam: float, mu: float,
                                   geom: ElementGeometry, u):
    """A1*-A2* with the isotropic contraction written out in lam, mu."""
    n = tables.n
    uc = _components(u, n)
    ji = geom.inverse
    eps = np.einsum("abmn,jn->abjm", tables.B, uc)      # eps[a, b, component, node]
    k = ji @ ji.T
    v = (lam * np.einsum("ai,bj,abjm->im", ji, ji, eps)
         + mu * np.einsum("aj,bi,abjm->im", ji, ji, eps)
         + mu * np.einsum("ab,abim->im", k, eps))
    return geom.det * v.reshape(-1)


def matvec_quad_elastic(tables: KernelTables, samples, u, counter: MatvecCounter | None = None):
    """B1*-B3*: 9 + 9 products with the n' x n D tables.

    ``samples`` holds per-point reference tensors Ct[k, a, i, j, b].
    """
    D = tables.D
    n = tables.n
    uc = _components(u, n)
    eps = np.array([[_mv(counter, D[b], uc[jv]) for jv in range(3)] for b in range(3)])  # B1*
    sigma = np.einsum("kaijb,bjk->aik", samples, eps)                                      # B2*
    v = np.array([sum(_mv(counter, D[a], sigma[a, iv], transpose=True) for a in range(3))
                  for iv in range(3)])                                                      # B3*
    return v.reshape(-1)


def matvec_quad_elastic_isotropic(tables: KernelTables, lam, mu, geom: ElementGeometry,
                                  weights, u):
    """B1*-B3* with per-point Lame parameters; stress formed in physical axes."""
    D = tables.D
    n = tables.n
    uc = _components(u, n)
    eps = np.einsum("bkn,jn->kbj", D, uc)             # reference gradients (k, b, jV)
    grad = np.einsum("bq,kbj->kqj", geom.inverse, eps)  # physical d_q u_j
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (D.shape[1],))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (D.shape[1],))
    div = np.trace(grad, axis1=1, axis2=2)
    stress = (lam * div)[:, None, None] * np.eye(3) + mu[:, None, None] * (
        grad + np.transpose(grad, (0, 2, 1)))
    scale = geom.det * np.asarray(weights, dtype=float)
    sig_ref = scale[:, None, None] * np.einsum("ap,kpi->kai", geom.inverse, stress)
    return np.einsum("akn,kai->in", D, sig_ref).reshape(-1)


# -- mass ----------------------------------------------------------------------------------

def mass_diagonal(mass_weights, geom: ElementGeometry, rho_at_nodes) -> np.ndarray:
    """Lumped mass entries det(J) w_i rho(x_i)."""
    rho = np.broadcast_to(np.asarray(rho_at_nodes, dtype=float), np.shape(mass_weights))
    if np.any(rho <= 0):
        raise NonpositiveDensity("density must be positive at every node")
    return geom.det * np.asarray(mass_weights) * rho


# -- batched forms (one call per element block) ------------------------------------------------

def batch_exact_scalar(tables: KernelTables, c_tensors: np.ndarray, U: np.ndarray,
                       bhat_stack: np.ndarray | None = None) -> np.ndarray:
    """A1-A2 for many elements: c_tensors (E, 3, 3), U (E, n).

    ``bhat_stack`` may pass the (6, n, n) symmetrized tables precomputed.
    """
    n = tables.n
    if bhat_stack is None:
        bhat_stack = np.array(list(symmetrized_B(tables.B).values()))
    coef = c_tensors[:, _TRIL[0], _TRIL[1]]                         # (E, 6)
    eps = (U @ bhat_stack.reshape(-1, n).T).reshape(len(U), 6, n)  # A1
    return np.einsum("es,esi->ei", coef, eps)                       # A2


# (a, b) pairs in the iteration order of symmetrized_B
_TRIL = np.array([(a, b) for a in range(3) for b in range(a + 1)]).T


def batch_quad_scalar(tables: KernelTables, samples: np.ndarray, U: np.ndarray) -> np.ndarray:
    """B1-B3 for many elements: samples (E, n', 3, 3), U (E, n)."""
    D = tables.D
    nq, n = D.shape[1], D.shape[2]
    dm = D.reshape(3 * nq, n)
    eps = (U @ dm.T).reshape(len(U), 3, nq)                          # B1
    sigma = np.einsum("ekab,ebk->eak", samples, eps)                 # B2
    return sigma.reshape(len(U), 3 * nq) @ dm                        # B3


def batch_quad_elastic_isotropic(tables: KernelTables, lam, mu, jinv, det, weights, U):
    """Isotropic B1*-B3* for many elements: lam, mu (E, n'), U (E, 3, n)."""
    D = tables.D
    eps = np.einsum("bkn,ejn->ekbj", D, U)
    grad = np.einsum("ebq,ekbj->ekqj", jinv, eps)
    div = np.trace(grad, axis1=2, axis2=3)
    stress = (lam * div)[..., None, None] * np.eye(3) + mu[..., None, None] * (
        grad + np.swapaxes(grad, 2, 3))
    scale = det[:, None] * np.asarray(weights)[None, :]
    sig_ref = scale[..., None, None] * np.einsum("eap,ekpi->ekai", jinv, stress)
    return np.einsum("akn,ekai->ein", D, sig_ref)
