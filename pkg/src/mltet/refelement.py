"""Enriched mass-lumped element spaces, nodal bases, and precomputed kernel tables."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from . import poly
from .errors import (
    InvalidElementData,
    MissingElementData,
    NoPositiveSolution,
    NotUnisolvent,
    SystemInconsistent,
    UnknownElement,
)
from .quadrature import (
    ELEMENT_IDS,
    FindResult,
    OrbitTemplate,
    QuadratureRule,
    SymmetricGenerator,
    builtin_stiffness_rule,
    check_positivity,
    rule_from_dict,
    rule_to_dict,
    search_rule,
)
from .refgeom import (PERMUTATIONS, REFERENCE_VOLUME, T4, T22, T31, T211, SymmetricOrbit,
                      expand_orbit)

DATA_ENV = "MLTET_DATA_DIR"

ELEMENT_DEGREE = {"p2n15": 2, "p3n32": 3, "p4n60": 4, "p4n61": 4, "p4n65": 4}
ELEMENT_DIM = {"p2n15": 15, "p3n32": 32, "p4n60": 60, "p4n61": 61, "p4n65": 65}


@dataclass(frozen=True)
class PolySpace:
    """Span of polynomials given by orthonormal Cartesian coefficient rows."""

    degree: int
    rows: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.rows)

    def residual(self, coeffs: np.ndarray, degree: int | None = None) -> np.ndarray:
        degree = self.degree if degree is None else degree
        if degree > self.degree:
            return poly.span_residual(coeffs, poly.embed(self.rows, self.degree, degree))
        return poly.span_residual(poly.embed(coeffs, degree, self.degree), self.rows)

    def contains(self, coeffs: np.ndarray, degree: int | None = None, tol: float = 1e-9) -> bool:
        return bool(np.all(self.residual(coeffs, degree) < tol))


@dataclass(frozen=True)
class ElementSpace(PolySpace):
    """Reference space of a mass-lumped element: P_p plus bubble enrichment."""

    element_id: str = ""
    p: int = 1


# -- space construction ---------------------------------------------------------

def _homogeneous(q: int) -> list[dict]:
    """All barycentric monomials of degree exactly q; their span is P_q."""
    out = []
    for a in range(q + 1):
        for b in range(q - a + 1):
            for c in range(q - a - b + 1):
                out.append({(a, b, c, q - a - b - c): 1.0})
    return out


_FACE_BUBBLES = [{(1, 1, 1, 0): 1.0}, {(1, 1, 0, 1): 1.0}, {(1, 0, 1, 1): 1.0}, {(0, 1, 1, 1): 1.0}]
_ELEMENT_BUBBLE = [{(1, 1, 1, 1): 1.0}]


def _products(*factor_lists) -> list[dict]:
    out = [{(0, 0, 0, 0): 1.0}]
    for fl in factor_lists:
        out = [poly.bary_mul(a, b) for a in out for b in fl]
    return out


def _space_polys(element_id: str) -> tuple[int, list[dict]]:
    P = _homogeneous
    Bf, Be = _FACE_BUBBLES, _ELEMENT_BUBBLE
    if element_id == "p2n15":
        return 2, P(2) + Bf + Be
    if element_id == "p3n32":
        return 3, P(3) + _products(Bf, P(1)) + _products(Be, P(1))
    if element_id == "p4n60":
        return 4, P(4) + _products(Bf, P(2)) + _products(Be, P(2) + Bf)
    if element_id == "p4n61":
        return 4, P(4) + _products(Bf, P(2)) + _products(Be, P(2) + Bf + Be)
    if element_id == "p4n65":
        return 4, P(4) + _products(Bf, P(2) + Bf) + _products(Be, P(2) + Bf + Be)
    raise UnknownElement(f"unknown element {element_id!r}; expected one of {ELEMENT_IDS}")


def space_from_polys(polys: Sequence[dict], element_id: str = "", p: int = 1,
                     rtol: float = 1e-10) -> ElementSpace:
    degree = max(poly.bary_degree(q) for q in polys)
    rows = np.array([poly.bary_to_cart(q, degree) for q in polys])
    return ElementSpace(degree, poly.orthonormal_span(rows, rtol), element_id, p)


@lru_cache(maxsize=None)
def element_space(element_id: str) -> ElementSpace:
    """The reference space of one of the five mass-lumped tetrahedra."""
    p, polys = _space_polys(element_id)
    space = space_from_polys(polys, element_id, p)
    if space.dim != ELEMENT_DIM[element_id]:
        raise RuntimeError(f"{element_id}: built space has dimension {space.dim}")
    return space


@lru_cache(maxsize=None)
def polynomial_space(p: int) -> ElementSpace:
    """Plain P_p, e.g. the linear element used as a hand-checkable case."""
    return space_from_polys(_homogeneous(p), f"P{p}", p)


def derivative_space(space: PolySpace) -> PolySpace:
    """Span of all first partial derivatives (Cartesian reference coordinates)."""
    d = space.degree
    rows = np.vstack([space.rows @ poly.derivative_matrix(d, ax).T for ax in range(3)])
    return PolySpace(d, poly.orthonormal_span(rows))


def product_with_polynomials(space: PolySpace, q: int) -> np.ndarray:
    """Coefficient rows spanning P_q (x) space, in degree ``space.degree + q``."""
    out_deg = space.degree + q
    rows = [poly.shift_by_monomial(space.rows, space.degree, e, out_deg)
            for e in poly.monomials(q)] if q >= 0 else []
    return np.vstack(rows) if rows else np.zeros((0, poly.dim(out_deg)))


def stiffness_exactness_space(space: ElementSpace) -> PolySpace:
    """P_{p-1} (x) D U, the space a stiffness rule must integrate exactly."""
    ds = derivative_space(space)
    rows = product_with_polynomials(ds, space.p - 1)
    return PolySpace(ds.degree + space.p - 1, poly.orthonormal_span(rows))


def mass_exactness_space(space: ElementSpace) -> PolySpace:
    """P_{p-2} (x) U (constants only when p < 2)."""
    if space.p < 2:
        return PolySpace(0, np.ones((1, 1)))
    rows = product_with_polynomials(space, space.p - 2)
    return PolySpace(space.degree + space.p - 2, poly.orthonormal_span(rows))


def exactness_containment(space: ElementSpace, gens, rtol: float = 1e-9) -> float:
    """Largest relative residual of P_{p-1} (x) D U outside the span of ``gens``.

    ``gens`` is a GeneratorSet; its span includes every permuted copy.
    """
    target = stiffness_exactness_space(space)
    deg = max(target.degree, gens.max_degree)
    basis = poly.orthonormal_span(gens.span_rows(deg), rtol=rtol)
    rows = poly.embed(target.rows, target.degree, deg)
    return float(poly.span_residual(rows, basis).max())


def space_exactness_defect(rule: QuadratureRule, space: PolySpace) -> float:
    """Largest |Q(f) - integral f| over an orthonormal coefficient basis of ``space``."""
    approx = rule.weights() @ poly.evaluate(space.rows, space.degree, rule.points()).T
    return float(np.max(np.abs(approx - poly.integrate(space.rows, space.degree))))


# -- nodes and nodal bases --------------------------------------------------------

@dataclass(frozen=True)
class NodeSet:
    """Reference nodes, normally a union of symmetric orbits."""

    orbits: tuple[SymmetricOrbit, ...] = ()
    explicit: np.ndarray | None = None

    def points(self) -> np.ndarray:
        """Barycentric node coordinates, shape (n, 4)."""
        if self.explicit is not None:
            return np.asarray(self.explicit, dtype=float)
        return np.vstack([expand_orbit(o) for o in self.orbits])

    def __len__(self):
        return len(self.points())

    def orbit_slices(self) -> list[slice]:
        out, start = [], 0
        for o in self.orbits:
            out.append(slice(start, start + o.size))
            start += o.size
        return out


@dataclass(frozen=True)
class NodalBasis:
    """Lagrange basis w_i(x_j) = delta_ij; row i of ``coeffs`` is w_i."""

    degree: int
    coeffs: np.ndarray
    nodes: np.ndarray  # barycentric (n, 4)
    condition: float = 1.0

    @property
    def n(self) -> int:
        return len(self.coeffs)

    def values(self, points) -> np.ndarray:
        """(npts, n) basis values at Cartesian or barycentric points."""
        return poly.evaluate(self.coeffs, self.degree, points).T

    def gradients(self, points) -> np.ndarray:
        """(3, npts, n) reference gradients."""
        return poly.gradient(self.coeffs, self.degree, points)

    def space(self) -> PolySpace:
        return PolySpace(self.degree, poly.orthonormal_span(self.coeffs))


def build_nodal_basis(space: PolySpace, nodes: NodeSet | np.ndarray,
                      rtol: float = 1e-10) -> NodalBasis:
    """Solve the generalized Vandermonde system for the Lagrange basis.

    Raises
    ------
    NotUnisolvent
        if the node count differs from the space dimension or the system is singular.
    """
    pts = nodes.points() if isinstance(nodes, NodeSet) else np.asarray(nodes, dtype=float)
    if len(pts) != space.dim:
        raise NotUnisolvent(f"{len(pts)} nodes for a space of dimension {space.dim}")
    a = poly.evaluate(space.rows, space.degree, pts).T  # a[j, k] = phi_k(x_j)
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] <= rtol * s[0]:
        raise NotUnisolvent(f"Vandermonde matrix is singular (sigma_min/sigma_max = {s[-1] / s[0]:.2e})")
    lu = scipy.linalg.lu_factor(a)
    eye = np.eye(len(pts))
    c = scipy.linalg.lu_solve(lu, eye)
    c += scipy.linalg.lu_solve(lu, eye - a @ c)  # one refinement step
    return NodalBasis(space.degree, c.T @ space.rows, pts, float(s[0] / s[-1]))


def interpolate(basis: NodalBasis, values: np.ndarray) -> np.ndarray:
    """Coefficients of the interpolant with the given nodal values."""
    return np.asarray(values) @ basis.coeffs


# -- mass nodes and weights ---------------------------------------------------

def p2n15_nodes() -> NodeSet:
    return NodeSet((
        SymmetricOrbit(T31, (0.0,)),        # vertices
        SymmetricOrbit(T22, (0.0,)),        # edge midpoints
        SymmetricOrbit(T31, (1.0 / 3.0,)),  # face centroids
        SymmetricOrbit(T4),                 # centroid
    ))


def data_dir(explicit=None) -> Path | None:
    d = explicit if explicit is not None else os.environ.get(DATA_ENV)
    return Path(d) if d else None


def element_data_path(element_id: str, directory=None) -> Path | None:
    d = data_dir(directory)
    if d is None:
        return None
    return d / f"{element_id}.mass.json"


def mass_rule(element_id: str, directory=None) -> QuadratureRule:
    """Mass-lumping nodes and weights of an element.

    The degree-2 element is built in; the others are read from
    ``$MLTET_DATA_DIR/<element_id>.mass.json`` and validated.
    """
    if element_id == "p2n15":
        return _p2n15_mass_rule()
    if element_id not in ELEMENT_IDS:
        raise UnknownElement(f"unknown element {element_id!r}")
    path = element_data_path(element_id, directory)
    if path is None or not path.exists():
        raise MissingElementData(
            f"no mass node data for {element_id}; set {DATA_ENV} to a directory "
            f"containing {element_id}.mass.json")
    return load_element_data(path, element_id)


def mass_node_set(element_id: str, directory=None) -> NodeSet:
    return NodeSet(tuple(mass_rule(element_id, directory).orbits))


@lru_cache(maxsize=None)
def _p2n15_mass_rule() -> QuadratureRule:
    return derive_mass_weights(element_space("p2n15"), p2n15_nodes(), label="p2n15q15")


def derive_mass_weights(space: ElementSpace, nodes: NodeSet, label: str = "mass",
                        tol: float = 1e-11) -> QuadratureRule:
    """Orbit weights making the nodes a rule exact on P_{p-2} (x) U.

    Raises
    ------
    SystemInconsistent
        if the nodes are not unisolvent or no weights reproduce the integrals.
    NoPositiveSolution
        if the unique solution has a nonpositive weight.
    """
    try:
        build_nodal_basis(space, nodes)
    except NotUnisolvent as exc:
        raise SystemInconsistent(str(exc)) from exc
    if not nodes.orbits:
        raise SystemInconsistent("weights are derived per symmetric orbit; node orbits required")
    target = mass_exactness_space(space)
    exact = poly.integrate(target.rows, target.degree)
    cols = [poly.evaluate(target.rows, target.degree, expand_orbit(o)).sum(axis=1)
            for o in nodes.orbits]
    mat = np.column_stack(cols)
    w, *_ = np.linalg.lstsq(mat, exact, rcond=None)
    w += np.linalg.lstsq(mat, exact - mat @ w, rcond=None)[0]
    if np.linalg.matrix_rank(mat) < len(nodes.orbits):
        raise SystemInconsistent("orbit weights are not determined by the exactness conditions")
    if np.max(np.abs(mat @ w - exact)) > tol * max(1.0, np.max(np.abs(exact))):
        raise SystemInconsistent("no weights integrate P_{p-2} (x) U exactly on these nodes")
    rule = QuadratureRule(tuple(zip(nodes.orbits, w)), label)
    if not check_positivity(rule):
        raise NoPositiveSolution(f"derived weights {w} are not all positive")
    return rule


def check_face_conforming(space: PolySpace, nodes: NodeSet, n_samples: int = 100,
                          tol: float = 1e-9, seed: int = 0) -> bool:
    """Basis functions of nodes off a face must vanish on that face."""
    basis = build_nodal_basis(space, nodes)
    pts = basis.nodes
    rng = np.random.default_rng(seed)
    for face in range(4):
        off = np.abs(pts[:, face]) > 1e-12
        if not off.any():
            continue
        bary = rng.dirichlet(np.ones(3), n_samples)
        face_pts = np.insert(bary, face, 0.0, axis=1)
        vals = basis.values(face_pts)[:, off]
        if np.max(np.abs(vals)) > tol:
            return False
    return True


def _basis_gradients(basis, points) -> np.ndarray:
    if isinstance(basis, NodalBasis):
        return basis.gradients(points)
    return poly.gradient(basis.rows, basis.degree, points)


def check_spurious_free(basis: NodalBasis | PolySpace, rule: QuadratureRule,
                        mode: str = "scalar", rtol: float = 1e-8) -> tuple[bool, int]:
    """Null-space test of the gradient (or strain) sampled at the rule's points.

    Only the span of ``basis`` matters, so an ElementSpace works as well.
    Returns (passes, null space dimension).
    """
    g = _basis_gradients(basis, rule.points())  # (3, npts, n)
    npts, n = g.shape[1], g.shape[2]
    if mode == "scalar":
        mat = g.reshape(3 * npts, n)
        expected = 1
    elif mode == "elastic":
        # strain e_ab = (d_a u_b + d_b u_a)/2 for u = (u_1, u_2, u_3), u_c = sum w_i u_ci
        pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)]
        mat = np.zeros((6, npts, 3, n))
        for r, (a, b) in enumerate(pairs):
            mat[r, :, b, :] += 0.5 * g[a]
            mat[r, :, a, :] += 0.5 * g[b]
        mat = mat.reshape(6 * npts, 3 * n)
        expected = 6
    else:
        raise ValueError(f"mode must be 'scalar' or 'elastic', not {mode!r}")
    s = np.linalg.svd(mat, compute_uv=False)
    nullity = mat.shape[1] - int(np.sum(s > rtol * s[0]))
    return nullity == expected, nullity


# -- kernel tables -----------------------------------------------------------------

@dataclass(frozen=True)
class KernelTables:
    B: np.ndarray            # (3, 3, n, n)
    D: np.ndarray | None     # (3, n', n)
    mass_weights: np.ndarray  # (n,)
    stiffness_rule: QuadratureRule | None = None

    @property
    def n(self) -> int:
        return self.B.shape[-1]

    @property
    def Bhat(self) -> dict[tuple[int, int], np.ndarray]:
        return symmetrized_B(self.B)


def precompute_B(basis: NodalBasis) -> np.ndarray:
    """B[a, b, i, j] = integral of d_a w_i * d_b w_j over the reference element."""
    d = basis.degree
    gram = poly.gram_matrix(d)
    dc = [basis.coeffs @ poly.derivative_matrix(d, ax).T for ax in range(3)]
    return np.array([[dc[a] @ gram @ dc[b].T for b in range(3)] for a in range(3)])


def symmetrized_B(B: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """Bhat(a, b) = B(a, b) + B(b, a) for b < a, and B(a, a) on the diagonal."""
    out = {}
    for a in range(3):
        for b in range(a + 1):
            out[(a, b)] = B[a, a] if a == b else B[a, b] + B[b, a]
    return out


def precompute_D(basis: NodalBasis, rule: QuadratureRule) -> np.ndarray:
    """D[a, k, i] = d_a w_i at quadrature point k."""
    return basis.gradients(rule.points())


# -- element assembly and data files ------------------------------------------------

@dataclass(frozen=True)
class Element:
    """Everything the kernels need for one element type."""

    element_id: str
    space: ElementSpace
    mass: QuadratureRule
    basis: NodalBasis
    tables: KernelTables
    extra: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.space.p

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def nodes(self) -> np.ndarray:
        return self.basis.nodes


def resolve_stiffness_rule(element_id: str, stiffness, directory=None) -> QuadratureRule | None:
    """Map 'exact' / 'rule' / 'mass' / a QuadratureRule to the rule used for D tables."""
    if isinstance(stiffness, QuadratureRule):
        return stiffness
    if stiffness in (None, "exact"):
        return None
    if stiffness in ("rule", "builtin"):
        return builtin_stiffness_rule(element_id)
    if stiffness == "mass":
        return mass_rule(element_id, directory)
    raise ValueError(f"unknown stiffness mode {stiffness!r}")


def build_element(element_id: str, stiffness="rule", directory=None) -> Element:
    """Basis, mass weights and kernel tables of an element.

    ``stiffness`` selects the quadrature rule for the D tables: 'rule' (the
    builtin rule), 'mass' (the mass rule reused), a QuadratureRule, or
    'exact' (no D tables; exact kernels only).
    """
    mrule = mass_rule(element_id, directory)
    return _build(element_id, mrule, resolve_stiffness_rule(element_id, stiffness, directory))


def _build(element_id, mrule, srule) -> Element:
    key = (element_id, _rule_key(mrule), _rule_key(srule))
    if key in _ELEMENT_CACHE:
        return _ELEMENT_CACHE[key]
    space = element_space(element_id)
    nodes = NodeSet(tuple(mrule.orbits))
    basis = build_nodal_basis(space, nodes)
    B = precompute_B(basis)
    D = precompute_D(basis, srule) if srule is not None else None
    el = Element(element_id, space, mrule, basis, KernelTables(B, D, mrule.weights(), srule))
    _ELEMENT_CACHE[key] = el
    return el


_ELEMENT_CACHE: dict = {}


def _rule_key(rule):
    if rule is None:
        return None
    return tuple((o.type.tag, o.params, w) for o, w in rule.entries)


def linear_element() -> Element:
    """P1 with vertex nodes and the vertex (Newton-Cotes) rule; used for hand checks."""
    space = polynomial_space(1)
    nodes = NodeSet((SymmetricOrbit(T31, (0.0,)),))
    mrule = derive_mass_weights(space, nodes, label="P1 vertices")
    basis = build_nodal_basis(space, nodes)
    centroid = QuadratureRule(((SymmetricOrbit(T4), REFERENCE_VOLUME),), "centroid")
    return Element("P1", space, mrule, basis,
                   KernelTables(precompute_B(basis), precompute_D(basis, centroid),
                                mrule.weights(), centroid))


def validate_mass_rule(element_id: str, rule: QuadratureRule, tol: float = 1e-11) -> list[str]:
    """Problems found when checking a candidate mass rule (unisolvence, symmetric
    node placement, face conformity, positive weights, mass accuracy) (empty if fine)."""
    problems = []
    space = element_space(element_id)
    nodes = NodeSet(tuple(rule.orbits))
    try:
        pts = nodes.points()
    except Exception as exc:  # degenerate orbit
        return [f"symmetry: {exc}"]
    if len(pts) != space.dim:
        return [f"unisolvence: {len(pts)} nodes for a {space.dim}-dimensional space"]
    if np.any(pts < -1e-12):
        problems.append("symmetry: node outside the reference tetrahedron")
    try:
        build_nodal_basis(space, nodes)
    except NotUnisolvent as exc:
        return problems + [f"unisolvence: {exc}"]
    if not check_face_conforming(space, nodes):
        problems.append("conformity: space is not face-conforming on these nodes")
    if not check_positivity(rule):
        problems.append("positivity: nonpositive mass weight")
    target = mass_exactness_space(space)
    exact = poly.integrate(target.rows, target.degree)
    approx = poly.evaluate(target.rows, target.degree, pts) @ rule.weights()
    defect = float(np.max(np.abs(exact - approx)))
    if defect > tol:
        problems.append(f"accuracy: mass rule not exact on P_(p-2) x U (defect {defect:.2e})")
    return problems


def load_element_data(path, element_id: str | None = None) -> QuadratureRule:
    """Read and validate an element data file (role 'mass').

    Raises
    ------
    InvalidElementData
        if the file fails any mass-rule check.
    """
    d = json.loads(Path(path).read_text())
    eid = d.get("element_id", element_id)
    if element_id is not None and eid != element_id:
        raise InvalidElementData(f"{path}: file is for {eid}, expected {element_id}")
    if d.get("role", "mass") != "mass":
        raise InvalidElementData(f"{path}: role must be 'mass'")
    rule = rule_from_dict(d)
    problems = validate_mass_rule(eid, rule)
    if problems:
        raise InvalidElementData(f"{path}: " + "; ".join(problems))
    return rule


# -- finder-derived mass rules -------------------------------------------------------

# Orbit layouts that a mass-rule search has been observed to solve.  Fixed
# parameters put nodes on vertices, edges and faces, as face conformity requires.
MASS_SEARCH_TEMPLATES = {
    "p3n32": (
        OrbitTemplate(T31, (0.0,)),           # vertices
        OrbitTemplate(T211, (0.0, None)),     # two nodes per edge
        OrbitTemplate(T211, (None, 0.0)),     # three nodes per face
        OrbitTemplate(T31),                   # interior
    ),
}


def _cart_to_bary(row: np.ndarray, degree: int) -> dict:
    return {(a, b, c, 0): float(v) for (a, b, c), v in zip(poly.monomials(degree), row)
            if abs(v) > 1e-15}


def mass_symmetric_generators(element_id: str) -> list[SymmetricGenerator]:
    """Orthonormal basis of the permutation-invariant part of P_{p-2} (x) U.

    A symmetric rule integrates the whole mass exactness space exactly iff
    it integrates these invariant polynomials exactly.
    """
    target = mass_exactness_space(element_space(element_id))
    sym = []
    for row in target.rows:
        f = _cart_to_bary(row, target.degree)
        acc: dict = {}
        for perm in PERMUTATIONS:
            for e, c in poly.bary_permute(f, perm).items():
                acc[e] = acc.get(e, 0.0) + c / len(PERMUTATIONS)
        sym.append(poly.bary_to_cart(acc, target.degree))
    basis = poly.orthonormal_span(np.array(sym))
    return [SymmetricGenerator.from_poly(_cart_to_bary(r, target.degree), f"m{i}")
            for i, r in enumerate(basis)]


def find_mass_rule(element_id: str, templates: Sequence[OrbitTemplate] | None = None,
                   max_trials: int = 300, max_newton_iters: int = 200, seed: int = 0,
                   selection: str = "first") -> FindResult:
    """Search mass-lumping nodes and weights that pass every mass-rule check.

    Newton restarts solve the symmetric moment equations of
    ``mass_symmetric_generators``; a converged candidate is admissible only
    if ``validate_mass_rule`` finds no problem.
    """
    if templates is None:
        if element_id not in MASS_SEARCH_TEMPLATES:
            raise UnknownElement(f"no mass search layout known for {element_id!r}")
        templates = MASS_SEARCH_TEMPLATES[element_id]
    gens = mass_symmetric_generators(element_id)
    return search_rule(templates, gens, max_trials, max_newton_iters, seed,
                       admissibility=lambda r: not validate_mass_rule(element_id, r),
                       label=f"{element_id}q{ELEMENT_DIM[element_id]}", selection=selection)


def write_element_data(path, element_id: str, rule: QuadratureRule, **extra) -> None:
    """Write a role-tagged mass data file readable by ``load_element_data``."""
    d = {"element_id": element_id, "role": "mass"}
    d.update(rule_to_dict(rule, **extra))
    Path(path).write_text(json.dumps(d, indent=2) + "\n")
