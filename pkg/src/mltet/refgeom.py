"""Barycentric geometry on the reference tetrahedron.

The reference tetrahedron has vertices (0,0,0), (1,0,0), (0,1,0), (0,0,1).
A point is stored by its four barycentric coordinates ``(x1, x2, x3, x4)``
with ``x4 = 1 - x1 - x2 - x3``; the first three coincide with the Cartesian
coordinates.  The 24 affine self-maps of the tetrahedron act as permutations
of these four numbers.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DegenerateOrbit

REFERENCE_VOLUME = 1.0 / 6.0
DEGENERACY_TOL = 1e-12

#: all 24 permutations of (0, 1, 2, 3)
PERMUTATIONS: tuple[tuple[int, ...], ...] = tuple(itertools.permutations(range(4)))


@dataclass(frozen=True)
class OrbitType:
    tag: str
    param_count: int
    orbit_size: int
    # equal labels mark equal coordinates of the generating point
    pattern: tuple[int, int, int, int]


T4 = OrbitType("[4]", 0, 1, (0, 0, 0, 0))
T31 = OrbitType("[3,1]", 1, 4, (0, 0, 0, 1))
T22 = OrbitType("[2,2]", 1, 6, (0, 0, 1, 1))
T211 = OrbitType("[2,1,1]", 2, 12, (0, 0, 1, 2))
T1111 = OrbitType("[1,1,1,1]", 3, 24, (0, 1, 2, 3))

ORBIT_TYPES = (T4, T31, T22, T211, T1111)
_BY_TAG = {t.tag: t for t in ORBIT_TYPES}
_BY_TAG.update({"4": T4, "31": T31, "22": T22, "211": T211, "1111": T1111})


def orbit_type(tag: str | OrbitType) -> OrbitType:
    if isinstance(tag, OrbitType):
        return tag
    try:
        return _BY_TAG[tag.replace(" ", "")]
    except KeyError:
        raise ValueError(f"unknown orbit type {tag!r}") from None


def _unique_perms(pattern):
    seen = {}
    for perm in PERMUTATIONS:
        key = tuple(pattern[i] for i in perm)
        seen.setdefault(key, perm)
    return tuple(seen.values())


#: for each orbit type, the permutations producing its distinct points
ORBIT_PERMS = {t.tag: _unique_perms(t.pattern) for t in ORBIT_TYPES}


def generating_point(otype: OrbitType, params: Sequence[float]) -> np.ndarray:
    """Barycentric coordinates of the representative point of an orbit."""
    p = list(params)
    if len(p) != otype.param_count:
        raise ValueError(f"{otype.tag} takes {otype.param_count} parameters, got {len(p)}")
    if otype is T4:
        return np.full(4, 0.25)
    if otype is T31:
        c = p[0]
        return np.array([c, c, c, 1.0 - 3.0 * c])
    if otype is T22:
        d = p[0]
        return np.array([d, d, 0.5 - d, 0.5 - d])
    if otype is T211:
        f1, f2 = p
        return np.array([f1, f1, f2, 1.0 - 2.0 * f1 - f2])
    g1, g2, g3 = p
    return np.array([g1, g2, g3, 1.0 - g1 - g2 - g3])


def generating_point_jacobian(otype: OrbitType) -> np.ndarray:
    """d(barycentric coords)/d(params), shape (4, param_count); constant per type."""
    if otype is T4:
        return np.zeros((4, 0))
    if otype is T31:
        return np.array([[1.0], [1.0], [1.0], [-3.0]])
    if otype is T22:
        return np.array([[1.0], [1.0], [-1.0], [-1.0]])
    if otype is T211:
        return np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-2.0, -1.0]])
    return np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [-1.0, -1.0, -1.0]])


@dataclass(frozen=True)
class SymmetricOrbit:
    """A point of the reference tetrahedron together with all its symmetric images."""

    type: OrbitType
    params: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "type", orbit_type(self.type))
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        if len(self.params) != self.type.param_count:
            raise ValueError(
                f"{self.type.tag} takes {self.type.param_count} parameters, got {len(self.params)}")

    @property
    def size(self) -> int:
        return self.type.orbit_size

    def generator(self) -> np.ndarray:
        return generating_point(self.type, self.params)

    def points(self) -> np.ndarray:
        """Barycentric coordinates of all points, shape (orbit_size, 4)."""
        return expand_orbit(self)

    def is_inside(self, tol: float = 1e-12) -> bool:
        return bool(np.all(self.generator() >= -tol))


def expand_orbit(orbit: SymmetricOrbit, tol: float = DEGENERACY_TOL) -> np.ndarray:
    """All points of a symmetric orbit as barycentric rows.

    Raises
    ------
    DegenerateOrbit
        if two of the expanded points coincide, e.g. ``[3,1]`` with ``c = 1/4``.
    """
    base = orbit.generator()
    perms = ORBIT_PERMS[orbit.type.tag]
    pts = base[np.array(perms)]
    if len(pts) > 1:
        diff = np.abs(pts[:, None, :] - pts[None, :, :]).max(axis=2)
        iu = np.triu_indices(len(pts), 1)
        if diff[iu].min() < tol:
            raise DegenerateOrbit(
                f"orbit {orbit.type.tag} with params {orbit.params} collapses")
    return pts


def integrate_monomial(exponents: Sequence[int]) -> float:
    """Exact integral of x1^a x2^b x3^c x4^d over the reference tetrahedron.

    Uses a!b!c!d!/(a+b+c+d+3)!, evaluated in exact rational arithmetic.
    Three exponents are accepted too and mean a Cartesian monomial (d = 0).
    """
    return float(_monomial_fraction(tuple(int(e) for e in exponents)))


def _monomial_fraction(exps: tuple[int, ...]) -> Fraction:
    if any(e < 0 for e in exps):
        raise ValueError("exponents must be nonnegative")
    num = 1
    for e in exps:
        num *= math.factorial(e)
    return Fraction(num, math.factorial(sum(exps) + 3))


def to_barycentric(xyz) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=float)
    return np.concatenate([xyz, 1.0 - xyz.sum(axis=-1, keepdims=True)], axis=-1)


def classify_point(p, tol: float = 1e-10) -> tuple[OrbitType, tuple[float, ...]]:
    """Coarsest orbit type (and its canonical parameters) containing point ``p``.

    ``p`` may be given as 3 Cartesian or 4 barycentric coordinates.
    """
    b = np.asarray(p, dtype=float)
    if b.shape == (3,):
        b = to_barycentric(b)
    vals = np.sort(b)
    groups: list[list[float]] = [[vals[0]]]
    for v in vals[1:]:
        if abs(v - groups[-1][-1]) <= tol:
            groups[-1].append(v)
        else:
            groups.append([v])
    sizes = sorted((len(g) for g in groups), reverse=True)
    means = {len(g): float(np.mean(g)) for g in groups}
    singles = sorted(float(np.mean(g)) for g in groups if len(g) == 1)
    if sizes == [4]:
        return T4, ()
    if sizes == [3, 1]:
        return T31, (means[3],)
    if sizes == [2, 2]:
        return T22, (min(float(np.mean(g)) for g in groups),)
    if sizes == [2, 1, 1]:
        return T211, (means[2], singles[0])
    return T1111, tuple(float(v) for v in vals[:3])


def canonical_orbit(orbit: SymmetricOrbit) -> SymmetricOrbit:
    """Rewrite an orbit with its canonical parameters (same point set)."""
    t, params = classify_point(orbit.generator(), tol=1e-13)
    if t is not orbit.type:
        # accidental coincidence; keep the declared type
        return orbit
    return SymmetricOrbit(t, params)
