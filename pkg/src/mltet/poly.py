"""Polynomials on the reference tetrahedron as monomial-coefficient vectors.

A polynomial of total degree <= D in the Cartesian reference coordinates
(x1, x2, x3) is a vector of coefficients over ``monomials(D)``.  Barycentric
polynomials (dicts ``{(a, b, c, d): coeff}``) are converted by expanding
``x4 = 1 - x1 - x2 - x3``.  Everything here is plain linear algebra, so
derivatives, products with monomials, evaluation and exact integration are
matrices acting on coefficient vectors.
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from .refgeom import PERMUTATIONS, integrate_monomial

BaryPoly = Mapping[tuple[int, int, int, int], float]


@lru_cache(maxsize=None)
def monomials(degree: int) -> tuple[tuple[int, int, int], ...]:
    """Exponent triples of total degree <= degree, graded order."""
    out = []
    for total in range(degree + 1):
        for a in range(total, -1, -1):
            for b in range(total - a, -1, -1):
                out.append((a, b, total - a - b))
    return tuple(out)


@lru_cache(maxsize=None)
def monomial_index(degree: int) -> dict[tuple[int, int, int], int]:
    return {m: i for i, m in enumerate(monomials(degree))}


def dim(degree: int) -> int:
    return (degree + 1) * (degree + 2) * (degree + 3) // 6


@lru_cache(maxsize=None)
def derivative_matrix(degree: int, axis: int) -> np.ndarray:
    """Matrix of d/dx_axis on coefficient vectors (degree -> degree)."""
    mons = monomials(degree)
    idx = monomial_index(degree)
    m = np.zeros((len(mons), len(mons)))
    for j, e in enumerate(mons):
        if e[axis] > 0:
            f = list(e)
            f[axis] -= 1
            m[idx[tuple(f)], j] = e[axis]
    m.flags.writeable = False
    return m


@lru_cache(maxsize=None)
def _integrals(degree: int) -> np.ndarray:
    v = np.array([integrate_monomial(e) for e in monomials(degree)])
    v.flags.writeable = False
    return v


def integrate(coeffs: np.ndarray, degree: int) -> np.ndarray:
    """Exact integral over the reference tetrahedron (last axis = coefficients)."""
    return np.asarray(coeffs) @ _integrals(degree)


@lru_cache(maxsize=None)
def gram_matrix(degree: int) -> np.ndarray:
    """G[i, j] = integral of m_i * m_j for monomials of degree <= degree."""
    mons = monomials(degree)
    n = len(mons)
    g = np.empty((n, n))
    cache: dict[tuple[int, int, int], float] = {}
    for i, a in enumerate(mons):
        for j in range(i, n):
            b = mons[j]
            e = (a[0] + b[0], a[1] + b[1], a[2] + b[2])
            if e not in cache:
                cache[e] = integrate_monomial(e)
            g[i, j] = g[j, i] = cache[e]
    g.flags.writeable = False
    return g


def vandermonde(points, degree: int) -> np.ndarray:
    """V[k, i] = m_i(points[k]); points are Cartesian (k, 3) or barycentric (k, 4)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :3]
    mons = np.array(monomials(degree))
    powers = [np.power.outer(pts[:, ax], np.arange(degree + 1)) for ax in range(3)]
    return powers[0][:, mons[:, 0]] * powers[1][:, mons[:, 1]] * powers[2][:, mons[:, 2]]


def evaluate(coeffs: np.ndarray, degree: int, points) -> np.ndarray:
    """Values at points; coeffs (..., m) -> (..., npts)."""
    return np.asarray(coeffs) @ vandermonde(points, degree).T


def gradient(coeffs: np.ndarray, degree: int, points) -> np.ndarray:
    """Reference gradients; coeffs (n, m) -> array (3, npts, n)."""
    v = vandermonde(points, degree)
    c = np.atleast_2d(coeffs)
    return np.stack([v @ (derivative_matrix(degree, ax) @ c.T) for ax in range(3)])


def embed(coeffs: np.ndarray, src: int, dst: int) -> np.ndarray:
    """Re-express coefficient vectors of degree src in the degree-dst basis (dst >= src)."""
    if dst < src:
        raise ValueError("cannot embed into a lower degree")
    c = np.atleast_2d(coeffs)
    out = np.zeros(c.shape[:-1] + (dim(dst),))
    out[..., : dim(src)] = c  # graded order makes the low block a prefix
    return out


def shift_by_monomial(coeffs: np.ndarray, degree: int, exps, out_degree: int) -> np.ndarray:
    """Multiply coefficient vectors by the monomial x^exps."""
    c = np.atleast_2d(coeffs)
    src = monomials(degree)
    dst_idx = monomial_index(out_degree)
    cols = np.array([dst_idx[(e[0] + exps[0], e[1] + exps[1], e[2] + exps[2])] for e in src])
    out = np.zeros(c.shape[:-1] + (dim(out_degree),))
    out[..., cols] = c
    return out


def _multinomial_x4(power: int, degree: int) -> np.ndarray:
    """Coefficients of (1 - x1 - x2 - x3)^power."""
    idx = monomial_index(degree)
    out = np.zeros(dim(degree))
    for j in range(power + 1):
        for k in range(power - j + 1):
            for l in range(power - j - k + 1):
                i = power - j - k - l
                coef = math.factorial(power) // (
                    math.factorial(i) * math.factorial(j) * math.factorial(k) * math.factorial(l))
                out[idx[(j, k, l)]] += coef * (-1) ** (j + k + l)
    return out


def bary_to_cart(poly: BaryPoly, degree: int | None = None) -> np.ndarray:
    """Convert a barycentric polynomial into Cartesian coefficients."""
    if degree is None:
        degree = max((sum(e) for e in poly), default=0)
    out = np.zeros(dim(degree))
    for (a, b, c, d), coef in poly.items():
        if coef == 0:
            continue
        base = _multinomial_x4(d, d)
        out += coef * shift_by_monomial(base, d, (a, b, c), degree)[0]
    return out


def bary_degree(poly: BaryPoly) -> int:
    return max((sum(e) for e, c in poly.items() if c != 0), default=0)


def bary_mul(*polys: BaryPoly) -> dict[tuple[int, int, int, int], float]:
    out: dict[tuple[int, int, int, int], float] = {(0, 0, 0, 0): 1.0}
    for p in polys:
        nxt: dict[tuple[int, int, int, int], float] = {}
        for e1, c1 in out.items():
            for e2, c2 in p.items():
                e = tuple(x + y for x, y in zip(e1, e2))
                nxt[e] = nxt.get(e, 0.0) + c1 * c2
        out = nxt
    return out


def bary_permute(poly: BaryPoly, perm) -> dict[tuple[int, int, int, int], float]:
    """The polynomial f(x_perm[0], ..., x_perm[3]) as a dict."""
    out: dict[tuple[int, int, int, int], float] = {}
    for e, c in poly.items():
        new = [0, 0, 0, 0]
        for slot, var in enumerate(perm):
            new[var] += e[slot]
        key = tuple(new)
        out[key] = out.get(key, 0.0) + c
    return out


def bary_orbit(poly: BaryPoly) -> list[dict]:
    """All distinct permuted copies of a barycentric polynomial."""
    seen = {}
    for perm in PERMUTATIONS:
        q = bary_permute(poly, perm)
        key = tuple(sorted((e, round(c, 14)) for e, c in q.items() if c != 0))
        seen.setdefault(key, q)
    return list(seen.values())


def bary_eval(poly: BaryPoly, bary_points) -> np.ndarray:
    b = np.atleast_2d(np.asarray(bary_points, dtype=float))
    out = np.zeros(len(b))
    for e, c in poly.items():
        out += c * np.prod(b ** np.asarray(e), axis=1)
    return out


def bary_grad(poly: BaryPoly, bary_points) -> np.ndarray:
    """Gradient w.r.t. the four barycentric variables, shape (npts, 4)."""
    b = np.atleast_2d(np.asarray(bary_points, dtype=float))
    out = np.zeros((len(b), 4))
    for e, c in poly.items():
        for v in range(4):
            if e[v] == 0:
                continue
            f = list(e)
            f[v] -= 1
            out[:, v] += c * e[v] * np.prod(b ** np.asarray(f), axis=1)
    return out


def bary_integrate(poly: BaryPoly) -> float:
    return float(sum(c * integrate_monomial(e) for e, c in poly.items()))


def orthonormal_span(rows: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (as rows) of the row space of ``rows``."""
    rows = np.atleast_2d(rows)
    if rows.size == 0:
        return rows[:0]
    _, s, vt = np.linalg.svd(rows, full_matrices=False)
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return vt[:r]


def span_residual(rows: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Relative norm of each row's component outside span(basis rows)."""
    rows = np.atleast_2d(rows)
    proj = rows - (rows @ basis.T) @ basis
    norms = np.linalg.norm(rows, axis=1)
    norms[norms == 0] = 1.0
    return np.linalg.norm(proj, axis=1) / norms


def monomial_bary(exps: Iterable[int]) -> dict[tuple[int, int, int, int], float]:
    e = tuple(exps)
    return {e + (0,) * (4 - len(e)): 1.0}
