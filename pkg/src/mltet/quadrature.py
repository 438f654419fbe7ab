"""Symmetric quadrature rules on the reference tetrahedron.

Contains the stiffness-matrix rules of the mass-lumped elements, the
generator sets the rules are exact for, exactness and positivity checks, a
Newton-based finder for new symmetric rules, and a JSON rule-file format.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import poly
from .errors import ConfigMismatch, DegenerateOrbit, UnknownElement
from .refgeom import (
    ORBIT_PERMS,
    ORBIT_TYPES,
    REFERENCE_VOLUME,
    T4,
    T22,
    T31,
    T211,
    T1111,
    OrbitType,
    SymmetricOrbit,
    canonical_orbit,
    expand_orbit,
    generating_point,
    generating_point_jacobian,
    orbit_type,
)

log = logging.getLogger(__name__)

ELEMENT_IDS = ("p2n15", "p3n32", "p4n60", "p4n61", "p4n65")


@dataclass(frozen=True)
class QuadratureRule:
    """Orbits with one weight each; weights are per point, in reference volume units."""

    entries: tuple[tuple[SymmetricOrbit, float], ...]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "entries", tuple((o, float(w)) for o, w in self.entries))

    @property
    def orbits(self) -> list[SymmetricOrbit]:
        return [o for o, _ in self.entries]

    @property
    def n_points(self) -> int:
        return sum(o.size for o, _ in self.entries)

    def points(self) -> np.ndarray:
        """Barycentric coordinates of all points, shape (n_points, 4)."""
        return np.vstack([expand_orbit(o) for o, _ in self.entries])

    def cartesian_points(self) -> np.ndarray:
        return self.points()[:, :3]

    def weights(self) -> np.ndarray:
        return np.concatenate([np.full(o.size, w) for o, w in self.entries])

    def configuration(self) -> "Configuration":
        counts = {t.tag: 0 for t in ORBIT_TYPES}
        for o, _ in self.entries:
            counts[o.type.tag] += 1
        return Configuration(*(counts[t.tag] for t in ORBIT_TYPES))

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights() @ values)


@dataclass(frozen=True)
class Configuration:
    """Number of distinct orbits of each type in a rule."""

    K4: int = 0
    K31: int = 0
    K22: int = 0
    K211: int = 0
    K1111: int = 0

    @property
    def parameter_count(self) -> int:
        return self.K4 + 2 * self.K31 + 2 * self.K22 + 3 * self.K211 + 4 * self.K1111

    @property
    def n_points(self) -> int:
        return self.K4 + 4 * self.K31 + 6 * self.K22 + 12 * self.K211 + 24 * self.K1111

    def orbit_types(self) -> list[OrbitType]:
        counts = (self.K4, self.K31, self.K22, self.K211, self.K1111)
        return [t for t, k in zip(ORBIT_TYPES, counts) for _ in range(k)]


@dataclass(frozen=True)
class SymmetricGenerator:
    """Barycentric polynomial standing for the span of all its permuted copies."""

    terms: tuple[tuple[tuple[int, int, int, int], float], ...]
    name: str = ""

    @classmethod
    def from_poly(cls, p: poly.BaryPoly, name: str = "") -> "SymmetricGenerator":
        terms = tuple(sorted((tuple(e), float(c)) for e, c in p.items() if c != 0))
        if not terms:
            raise ValueError("empty generator")
        return cls(terms, name)

    def as_poly(self) -> dict:
        return dict(self.terms)

    @property
    def degree(self) -> int:
        return max(sum(e) for e, _ in self.terms)

    def copies(self) -> list[dict]:
        return poly.bary_orbit(self.as_poly())


@dataclass(frozen=True)
class GeneratorSet:
    generators: tuple[SymmetricGenerator, ...]
    label: str = ""

    def __len__(self):
        return len(self.generators)

    def __iter__(self):
        return iter(self.generators)

    @property
    def max_degree(self) -> int:
        return max(g.degree for g in self.generators)

    def span_rows(self, degree: int | None = None) -> np.ndarray:
        """Cartesian coefficient rows of every permuted copy of every generator."""
        degree = self.max_degree if degree is None else degree
        return np.array([poly.bary_to_cart(c, degree)
                         for g in self.generators for c in g.copies()])


# -- generator vocabulary ----------------------------------------------------

def _x(*exps) -> dict:
    e = tuple(exps) + (0,) * (4 - len(exps))
    return {e: 1.0}


BETA_F = _x(1, 1, 1)
BETA_E = _x(1, 1, 1, 1)


def _gen(name: str, *factors) -> SymmetricGenerator:
    return SymmetricGenerator.from_poly(poly.bary_mul(*factors), name)


def _common_head(p8: bool):
    gens = [
        _gen("x1", _x(1)),
        _gen("x1^2 x2", _x(2, 1)),
        _gen("x1^3 x2^2", _x(3, 2)),
        _gen("x1^4 x2^3", _x(4, 3)),
    ]
    if p8:
        gens.append(_gen("x1^4 x2^4", _x(4, 4)))
    return gens


def _generators_q14():
    return GeneratorSet((
        _gen("x1", _x(1)),
        _gen("x1^2 x2", _x(2, 1)),
        _gen("x1^3 x2^2", _x(3, 2)),
        _gen("bf x1", BETA_F, _x(1)),
        _gen("bf x1 x2", BETA_F, _x(1, 1)),
        _gen("be x1", BETA_E, _x(1)),
    ), "P5")


def _generators_q21():
    return GeneratorSet((
        _gen("x1", _x(1)),
        _gen("x1^2 x2", _x(2, 1)),
        _gen("x1^3 x2^2", _x(3, 2)),
        _gen("bf x1", BETA_F, _x(1)),
        _gen("bf x1^2 x2", BETA_F, _x(2, 1)),
        _gen("bf^2", BETA_F, BETA_F),
        _gen("be x1", BETA_E, _x(1)),
        _gen("be x1 x2", BETA_E, _x(1, 1)),
    ), "P5 + Bf P3")


def _generators_q51():
    return GeneratorSet(tuple(_common_head(False)) + (
        _gen("bf x1", BETA_F, _x(1)),
        _gen("bf x1^2 x2", BETA_F, _x(2, 1)),
        _gen("bf x1^3 x2^2", BETA_F, _x(3, 2)),
        _gen("bf^2 x1", BETA_F, BETA_F, _x(1)),
        _gen("bf^2 x1^2 x2", BETA_F, BETA_F, _x(2, 1)),
        _gen("bf^3", BETA_F, BETA_F, BETA_F),
        _gen("be x1", BETA_E, _x(1)),
        _gen("be x1^2 x2", BETA_E, _x(2, 1)),
        _gen("be x1^3 x2^2", BETA_E, _x(3, 2)),
        _gen("be bf x1", BETA_E, BETA_F, _x(1)),
        _gen("be bf x1 x2", BETA_E, BETA_F, _x(1, 1)),
        _gen("be^2 x1", BETA_E, BETA_E, _x(1)),
    ), "P7 + Bf(P5 + Bf P3) + Be P5")


def _generators_q60():
    return GeneratorSet(tuple(_common_head(True)) + (
        _gen("bf x1", BETA_F, _x(1)),
        _gen("bf x1^2 x2", BETA_F, _x(2, 1)),
        _gen("bf x1^3 x2^2", BETA_F, _x(3, 2)),
        _gen("bf^2 x1", BETA_F, BETA_F, _x(1)),
        _gen("bf^2 x1^2 x2", BETA_F, BETA_F, _x(2, 1)),
        _gen("bf^3", BETA_F, BETA_F, BETA_F),
        _gen("be x1", BETA_E, _x(1)),
        _gen("be x1^2 x2", BETA_E, _x(2, 1)),
        _gen("be x1^3 x2^2", BETA_E, _x(3, 2)),
        _gen("be bf x1", BETA_E, BETA_F, _x(1)),
        _gen("be bf x1^2 x2", BETA_E, BETA_F, _x(2, 1)),
        _gen("be bf^2", BETA_E, BETA_F, BETA_F),
        _gen("be^2 x1", BETA_E, BETA_E, _x(1)),
        _gen("be^2 x1 x2", BETA_E, BETA_E, _x(1, 1)),
    ), "P8 + Bf^2 P3 + Be(P5 + Bf P3)")


# -- tabulated stiffness rules ----------------------------------------------

_RULE_Q14 = [
    (T31, (0.09273525031089123,), 0.01224884051939366),
    (T31, (0.3108859192633006,), 0.01878132095300264),
    (T22, (0.04550370412564965,), 0.007091003462846911),
]

_RULE_Q21 = [
    (T31, (0.08360982293995379,), 0.008382813462606309),
    (T31, (0.3195556046935656,), 0.01062803097330636),
    (T211, (0.06366100187501753, 0.3362519222398494), 0.005973459577178217),
    (T4, (), 0.01894177399687740),
]

_RULE_Q51 = [
    (T31, (0.04010756377220036,), 0.001076330088382485),
    (T31, (0.1881144601918900,), 0.006422430307819483),
    (T22, (0.1124010568611476,), 0.003859721113202450),
    (T211, (0.04781990270450464, 0.2053222493389064), 0.003162722714222902),
    (T211, (0.2347999378738287, 0.03405863749492695), 0.004715130256124021),
    (T211, (0.4614535776221135, 0.06693547308143162), 0.001320748780834370),
    (T4, (), 0.003130077388468573),
]

_RULE_Q60 = [
    (T31, (0.04091036488546224,), 0.001137453809249273),
    (T31, (0.1942594527940223,), 0.006907244220995018),
    (T31, (0.3166409312612929,), 0.004458749819772567),
    (T22, (0.02776256108257648,), 0.001389883779363477),
    (T22, (0.1022199785693040,), 0.004236295194116969),
    (T211, (0.03511432271187172, 0.2097218125202450), 0.001788418107829456),
    (T211, (0.1790174868402900, 0.03980830656880513), 0.003642034272731381),
    (T211, (0.4192720711456938, 0.008950317872961031), 0.001477531071582210),
]

_RULES = {
    "p2n15": (_RULE_Q14, "q14"),
    "p3n32": (_RULE_Q21, "q21"),
    "p4n60": (_RULE_Q51, "q51"),
    "p4n61": (_RULE_Q60, "q60"),
    "p4n65": (_RULE_Q60, "q60"),
}

_GENERATORS = {
    "p2n15": _generators_q14,
    "p3n32": _generators_q21,
    "p4n60": _generators_q51,
    "p4n61": _generators_q60,
    "p4n65": _generators_q60,
}


def _check_id(element_id: str) -> str:
    if element_id not in ELEMENT_IDS:
        raise UnknownElement(f"unknown element {element_id!r}; expected one of {ELEMENT_IDS}")
    return element_id


def builtin_stiffness_rule(element_id: str) -> QuadratureRule:
    data, tag = _RULES[_check_id(element_id)]
    return QuadratureRule(
        tuple((SymmetricOrbit(t, p), w) for t, p, w in data), label=f"{element_id}{tag}")


def builtin_generator_set(element_id: str) -> GeneratorSet:
    return _GENERATORS[_check_id(element_id)]()


def centroid_rule() -> QuadratureRule:
    return QuadratureRule(((SymmetricOrbit(T4), REFERENCE_VOLUME),), label="centroid")


# -- checks -----------------------------------------------------------------

def exactness_defect(rule: QuadratureRule, gens: GeneratorSet | Iterable[SymmetricGenerator],
                     relative: bool = False) -> float:
    """Largest |exact - quadrature| over every permuted copy of every generator."""
    pts = rule.points()
    w = rule.weights()
    worst = 0.0
    for g in gens:
        for copy in g.copies():
            exact = poly.bary_integrate(copy)
            approx = float(w @ poly.bary_eval(copy, pts))
            err = abs(exact - approx)
            if relative:
                err /= abs(exact) if exact != 0 else 1.0
            worst = max(worst, err)
    return worst


def check_positivity(rule: QuadratureRule) -> bool:
    return all(w > 0 for _, w in rule.entries)


# -- moment system and finder -------------------------------------------------

@dataclass(frozen=True)
class OrbitTemplate:
    """An orbit slot in the moment system.

    ``fixed`` pins location parameters: ``None`` leaves all free, otherwise a
    tuple with one entry per parameter where ``None`` marks a free one, e.g.
    ``(0.0, None)`` is an edge orbit of type [2,1,1].
    """

    type: OrbitType
    fixed: tuple[float | None, ...] | None = None

    @property
    def free_mask(self) -> np.ndarray:
        if self.fixed is None:
            return np.ones(self.type.param_count, dtype=bool)
        return np.array([f is None for f in self.fixed], dtype=bool)

    @property
    def free_count(self) -> int:
        return int(self.free_mask.sum())


class MomentSystem:
    """Moment equations of a symmetric rule: one equation per generator.

    Unknown layout: all orbit weights first, then the free location
    parameters, orbits in the order given.
    """

    def __init__(self, templates: Sequence[OrbitTemplate], gens: Sequence[SymmetricGenerator]):
        self.templates = list(templates)
        self.gens = [g.as_poly() for g in gens]
        self.exact = np.array([poly.bary_integrate(g) for g in self.gens])
        self.scale = np.where(self.exact != 0, np.abs(self.exact), 1.0)
        self.n_weights = len(self.templates)
        self.n_unknowns = self.n_weights + sum(t.free_count for t in self.templates)
        # all generators share one monomial table: values = coef @ monomials
        exps = sorted({e for g in self.gens for e in g})
        col = {e: i for i, e in enumerate(exps)}
        self._exps = np.array(exps, dtype=int).reshape(-1, 4)
        self._coef = np.zeros((len(self.gens), len(exps)))
        for gi, g in enumerate(self.gens):
            for e, c in g.items():
                self._coef[gi, col[e]] += c

    def split(self, x):
        w = x[: self.n_weights]
        params = []
        pos = self.n_weights
        for t in self.templates:
            free = t.free_mask
            vals = np.array([0.0 if f is None else f for f in (t.fixed or [None] * len(free))])
            vals[free] = x[pos: pos + t.free_count]
            pos += t.free_count
            params.append(tuple(float(v) for v in vals))
        return w, params

    def _monomials(self, pts):
        """Monomial values (npts, M) and their barycentric gradients (npts, 4, M)."""
        e = self._exps
        top = int(e.max()) if e.size else 0
        pw = pts[:, :, None] ** np.arange(top + 1)  # (npts, 4, top+1)
        fac = np.stack([pw[:, v, e[:, v]] for v in range(4)], axis=1)  # (npts, 4, M)
        vals = np.prod(fac, axis=1)
        grads = np.empty((len(pts), 4, len(e)))
        for v in range(4):
            lower = pw[:, v, np.maximum(e[:, v] - 1, 0)] * e[:, v]
            others = np.prod(np.delete(fac, v, axis=1), axis=1)
            grads[:, v] = lower * others
        return vals, grads

    def residual_and_jacobian(self, x):
        w, params = self.split(x)
        res = -self.exact.copy()
        jac = np.zeros((len(self.gens), self.n_unknowns))
        pos = self.n_weights
        for o, (t, prm) in enumerate(zip(self.templates, params)):
            perms = np.array(ORBIT_PERMS[t.type.tag])
            pts = generating_point(t.type, prm)[perms]
            vals, grads = self._monomials(pts)
            s = self._coef @ vals.sum(axis=0)
            res += w[o] * s
            jac[:, o] = s
            if t.free_count:
                # d pts[k, slot] / d theta = db[perms[k, slot]]
                dpts = generating_point_jacobian(t.type)[:, t.free_mask][perms]  # (npts, 4, q)
                dmon = np.einsum("ksm,ksq->mq", grads, dpts)
                jac[:, pos: pos + t.free_count] = w[o] * (self._coef @ dmon)
            pos += t.free_count
        return res, jac

    def to_rule(self, x, label="") -> QuadratureRule:
        w, params = self.split(x)
        return QuadratureRule(
            tuple((SymmetricOrbit(t.type, p), wi) for t, p, wi in zip(self.templates, params, w)),
            label=label)

    def random_guess(self, rng: np.random.Generator) -> np.ndarray:
        npts = sum(t.type.orbit_size for t in self.templates)
        w = rng.uniform(0.0, 2.0 * REFERENCE_VOLUME / npts, self.n_weights)
        params = []
        for t in self.templates:
            if t.free_count == 0:
                continue
            if t.type is T31:
                draw = [rng.uniform(0.0, 1.0 / 3.0)]
            elif t.type is T22:
                draw = [rng.uniform(0.0, 0.5)]
            elif t.type is T211:
                f1 = rng.uniform(0.0, 0.5)
                draw = [f1, rng.uniform(0.0, 1.0 - 2.0 * f1)]
            else:
                draw = list(rng.dirichlet(np.ones(4))[:3])
            params += [v for v, free in zip(draw, t.free_mask) if free]
        return np.concatenate([w, np.asarray(params, dtype=float)])


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    history: list[float]


def newton_solve(system: MomentSystem, x0, max_iter: int = 200,
                 tol: float = 1e-13) -> NewtonResult:
    """Damped Newton (least-squares steps, backtracking) on the moment equations.

    Equations are scaled by the exact integrals.  A step is halved until the
    scaled residual norm decreases (Armijo); full steps are taken near the
    root so the final iterations converge quadratically.  Converged means the
    absolute residual dropped below ``tol``; iteration continues while it
    keeps halving, to polish the last digits.
    """
    x = np.array(x0, dtype=float)
    history: list[float] = []
    res, jac = system.residual_and_jacobian(x)
    for _ in range(max_iter):
        r = float(np.max(np.abs(res)))
        if not np.isfinite(r):
            return NewtonResult(x, False, history)
        if history and r < tol and r >= history[-1] * 0.5:
            # no further progress: keep the previous (better or equal) iterate
            return NewtonResult(x_prev, True, history)
        history.append(r)
        if r < 1e-17:
            return NewtonResult(x, True, history)
        scaled = res / system.scale
        f0 = np.linalg.norm(scaled)
        step, *_ = np.linalg.lstsq(jac / system.scale[:, None], -scaled, rcond=None)
        t = 1.0
        while True:
            x_new = x + t * step
            res_new, jac_new = system.residual_and_jacobian(x_new)
            f_new = np.linalg.norm(res_new / system.scale)
            if np.isfinite(f_new) and (f_new < (1.0 - 1e-4 * t) * f0 or r < tol):
                break
            t *= 0.5
            if t < 1e-4:
                return NewtonResult(x, False, history)
        x_prev, x = x, x_new
        res, jac = res_new, jac_new
        if np.max(np.abs(x)) > 10.0:
            return NewtonResult(x, False, history)
    converged = bool(history) and history[-1] < tol
    return NewtonResult(x_prev if converged else x, converged, history)


@dataclass
class FindResult:
    """Outcome of a rule search; ``rule`` is None when no admissible rule was found.

    ``candidates`` lists the distinct admissible rules met during the search
    as ``(first trial index, hit count, rule)``.
    """

    rule: QuadratureRule | None
    trials: int = 0
    trial_index: int | None = None
    converged_inadmissible: int = 0
    diverged: int = 0
    history: list[float] = field(default_factory=list)
    candidates: list[tuple[int, int, QuadratureRule]] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.rule is not None


SELECTIONS = ("first", "max-min-weight")


def _admissible_geometry(rule: QuadratureRule) -> bool:
    for o, _ in rule.entries:
        if not o.is_inside():
            return False
        try:
            expand_orbit(o)
        except DegenerateOrbit:
            return False
    return True


def _min_weight(rule: QuadratureRule) -> float:
    return min(w for _, w in rule.entries)


def search_rule(templates: Sequence[OrbitTemplate], gens: Sequence[SymmetricGenerator],
                max_trials: int = 1000, max_newton_iters: int = 200, seed: int = 0,
                admissibility: Callable[[QuadratureRule], bool] | None = None,
                label: str = "", selection: str = "first") -> FindResult:
    """Random-restart Newton search over a fixed orbit layout.

    Trial ``i`` starts from ``default_rng([seed, i])``, so results do not
    depend on evaluation order.  ``selection="first"`` returns the admissible
    rule with the smallest trial index.  ``"max-min-weight"`` runs every trial
    and returns the distinct admissible rule with the largest minimum weight
    (ties go to the smaller trial index).
    """
    if selection not in SELECTIONS:
        raise ValueError(f"selection must be one of {SELECTIONS}")
    system = MomentSystem(templates, gens)
    result = FindResult(None)
    histories: dict[int, list[float]] = {}
    for trial in range(max_trials):
        rng = np.random.default_rng([seed, trial])
        sol = newton_solve(system, system.random_guess(rng), max_iter=max_newton_iters)
        result.trials = trial + 1
        if not sol.converged:
            result.diverged += 1
            continue
        rule = system.to_rule(sol.x, label=label)
        ok = (check_positivity(rule) and _admissible_geometry(rule)
              and (admissibility is None or admissibility(rule)))
        if not ok:
            result.converged_inadmissible += 1
            continue
        rule = canonical_rule(rule)
        for k, (first, hits, known) in enumerate(result.candidates):
            if rule_distance(known, rule) < 1e-8:
                result.candidates[k] = (first, hits + 1, known)
                break
        else:
            result.candidates.append((trial, 1, rule))
            histories[trial] = sol.history
        if selection == "first":
            break
    if result.candidates:
        if selection == "first":
            trial, _, rule = result.candidates[0]
        else:
            trial, _, rule = max(result.candidates, key=lambda c: (_min_weight(c[2]), -c[0]))
        result.rule, result.trial_index = rule, trial
        result.history = histories[trial]
        log.info("selected admissible rule from trial %d of %d", trial, result.trials)
    return result


def find_rule(config: Configuration, gens: GeneratorSet, max_trials: int = 1000,
              max_newton_iters: int = 200, seed: int = 0,
              admissibility: Callable[[QuadratureRule], bool] | None = None,
              selection: str = "first") -> FindResult:
    """Search a symmetric rule with the given configuration exact on ``gens``.

    Raises
    ------
    ConfigMismatch
        if the configuration's parameter count differs from the number of generators.
    """
    k = len(gens)
    if config.parameter_count != k:
        raise ConfigMismatch(
            f"configuration has {config.parameter_count} parameters but {k} generators were given")
    templates = [OrbitTemplate(t) for t in config.orbit_types()]
    return search_rule(templates, list(gens), max_trials, max_newton_iters, seed,
                       admissibility, label=f"q{config.n_points}", selection=selection)


# -- canonical form and comparison --------------------------------------------

_TYPE_ORDER = {t.tag: i for i, t in enumerate(ORBIT_TYPES)}


def canonical_rule(rule: QuadratureRule) -> QuadratureRule:
    entries = [(canonical_orbit(o), w) for o, w in rule.entries]
    entries.sort(key=lambda e: (_TYPE_ORDER[e[0].type.tag], e[0].params[:1] or (0.0,)))
    return QuadratureRule(tuple(entries), rule.label)


def rule_distance(a: QuadratureRule, b: QuadratureRule) -> float:
    """Max parameter/weight difference after canonical sorting (inf if layouts differ)."""
    ca, cb = canonical_rule(a), canonical_rule(b)
    if len(ca.entries) != len(cb.entries):
        return float("inf")
    worst = 0.0
    for (oa, wa), (ob, wb) in zip(ca.entries, cb.entries):
        if oa.type is not ob.type:
            return float("inf")
        worst = max(worst, abs(wa - wb), *(abs(x - y) for x, y in zip(oa.params, ob.params)))
    return worst


# -- rule files ---------------------------------------------------------------

def rule_to_dict(rule: QuadratureRule, generator_label: str = "", **extra) -> dict:
    d = {"label": rule.label}
    d.update(extra)
    d["orbits"] = [{"type": o.type.tag, "params": list(o.params), "weight": w}
                   for o, w in rule.entries]
    d["generator_label"] = generator_label
    return d


def rule_from_dict(d: dict) -> QuadratureRule:
    entries = []
    for item in d["orbits"]:
        entries.append((SymmetricOrbit(orbit_type(item["type"]), tuple(item.get("params", ()))),
                        float(item["weight"])))
    return QuadratureRule(tuple(entries), d.get("label", ""))


def write_rule(path, rule: QuadratureRule, generator_label: str = "", **extra) -> None:
    # json writes floats with repr, which round-trips binary64 exactly
    Path(path).write_text(json.dumps(rule_to_dict(rule, generator_label, **extra), indent=2) + "\n")


def read_rule(path) -> QuadratureRule:
    return rule_from_dict(json.loads(Path(path).read_text()))
