"""Plane-wave dispersion analysis on the periodic tetrahedral honeycomb.

The operator is assembled once per method as a lumped mass diagonal on the
owned cell nodes plus one stiffness block per neighbouring cell shift
k in {-1, 0, 1}^3.  For a wave vector kappa the spatial eigenvalues are
those of ``M^-1/2 (sum_k exp(i kappa . T k) A_k) M^-1/2``.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateFit, NotHermitian
from .mesh import HONEYCOMB_VOLUME, PeriodicCell, build_honeycomb_cell
from .refelement import Element, build_element

log = logging.getLogger(__name__)

# stability constants of the order-2K Dablain scheme, K = 1..4
C_K = {1: 4.0, 2: 12.0, 3: 7.57, 4: 21.48}
SHIFTS = np.array(list(itertools.product((-1, 0, 1), repeat=3)))


@dataclass(frozen=True, eq=False)
class BlochOperator:
    mass: np.ndarray        # (n0,)
    blocks: np.ndarray      # (27, n0, n0), ordered as SHIFTS
    transform: np.ndarray
    label: str = ""

    @property
    def n0(self) -> int:
        return len(self.mass)

    def block(self, shift) -> np.ndarray:
        idx = int(np.flatnonzero((SHIFTS == np.asarray(shift)).all(axis=1))[0])
        return self.blocks[idx]


@dataclass
class DispersionResult:
    label: str
    K: int
    dt: float | None
    wavelengths: np.ndarray
    n_elements: np.ndarray
    errors: np.ndarray
    s_max: float | None = None
    dt_max: float | None = None
    fit: tuple[float, float] | None = None
    extra: dict = field(default_factory=dict)


def parse_method(method: str) -> tuple[str, str]:
    """'2n15' -> ('p2n15', 'exact'); '2n15q14' -> builtin rule; 'q15' -> mass rule."""
    m = re.fullmatch(r"p?(\d)n(\d+)(?:q(\d+))?", method)
    if not m:
        raise ValueError(f"cannot parse method {method!r}")
    element_id = f"p{m.group(1)}n{m.group(2)}"
    if m.group(3) is None:
        return element_id, "exact"
    if int(m.group(3)) == int(m.group(2)):
        return element_id, "mass"
    return element_id, "rule"


def element_stiffness(element: Element, geom: kernels.ElementGeometry,
                      mode: str, c: float = 1.0) -> np.ndarray:
    """Element stiffness matrix, obtained by applying the kernels to unit vectors."""
    eye = np.eye(element.n)
    if mode == "exact":
        ct = c * kernels.reference_coefficient(geom)
        return kernels.batch_exact_scalar(element.tables, ct[None].repeat(element.n, 0), eye)
    rule = element.tables.stiffness_rule
    samples = kernels.transform_scalar(np.full(rule.n_points, c), geom, rule.weights())
    return kernels.batch_quad_scalar(element.tables, samples[None].repeat(element.n, 0), eye)


def assemble_bloch_operator(element: Element | str, mode: str | None = None,
                            cell: PeriodicCell | None = None, label: str = "") -> BlochOperator:
    """Mass diagonal and shifted stiffness blocks for rho = c = 1.

    ``element`` may be a method string such as '2n15q14'.
    """
    if isinstance(element, str):
        label = label or element
        element_id, mode = parse_method(element)
        element = build_element(element_id, "exact" if mode == "exact" else mode)
    mode = mode or "rule"
    if cell is None or cell.owner is None:
        cell = build_honeycomb_cell(element.nodes)
    n0 = cell.n0
    mass = np.zeros(n0)
    blocks = np.zeros((27, n0, n0))
    for e in range(cell.mesh.n_tets):
        geom = cell.mesh.geometry(e)
        ke = element_stiffness(element, geom, "exact" if mode == "exact" else "rule")
        own, sh = cell.owner[e], cell.shift[e]
        np.add.at(mass, own, kernels.mass_diagonal(element.tables.mass_weights, geom, 1.0))
        rel = sh[None, :, :] - sh[:, None, :]                  # (n, n, 3) in {-1, 0, 1}
        idx = ((rel[..., 0] + 1) * 9 + (rel[..., 1] + 1) * 3 + (rel[..., 2] + 1))
        rows = np.broadcast_to(own[:, None], idx.shape)
        cols = np.broadcast_to(own[None, :], idx.shape)
        np.add.at(blocks, (idx, rows, cols), ke)
    return BlochOperator(mass, blocks, cell.transform, label)


def bloch_matrix(op: BlochOperator, kappa) -> np.ndarray:
    """Hermitian similarity transform of the Bloch operator at wave vector kappa."""
    phase = np.exp(1j * (SHIFTS @ op.transform.T) @ np.asarray(kappa, dtype=float))
    a = np.tensordot(phase, op.blocks, axes=1)
    r = 1.0 / np.sqrt(op.mass)
    h = r[:, None] * a * r[None, :]
    return 0.5 * (h + h.conj().T)


def hermitian_eigenvalues(h, tol: float = 1e-10) -> np.ndarray:
    """Sorted eigenvalues of a Hermitian matrix.

    Raises
    ------
    NotHermitian
        if ``h`` deviates from its conjugate transpose by more than ``tol``
        relative to its largest entry.
    """
    h = np.asarray(h)
    scale = max(float(np.max(np.abs(h))), 1.0) if h.size else 1.0
    if h.size and np.max(np.abs(h - h.conj().T)) > tol * scale:
        raise NotHermitian("matrix is not Hermitian")
    return np.linalg.eigvalsh(h)


def numerical_omega(s, dt: float, K: int):
    """Angular frequency of the order-2K Dablain scheme; NaN where unstable."""
    if K not in C_K:
        raise ValueError("K must be 1, 2, 3 or 4")
    s = np.asarray(s, dtype=float)
    z = -dt * dt * s
    # y = 1 - cos-polynomial, summed directly; arccos(1 - y) = 2 asin(sqrt(y / 2))
    # keeps full relative accuracy for small dt^2 s
    y = -sum(z ** k / math.factorial(2 * k) for k in range(1, K + 1))
    with np.errstate(invalid="ignore"):
        out = np.where((y >= -1e-14) & (y <= 2.0 + 1e-14),
                       2.0 * np.arcsin(np.sqrt(np.clip(y, 0.0, 2.0) / 2.0)) / dt, np.nan)
    return out if out.ndim else float(out)


def fibonacci_directions(n: int) -> np.ndarray:
    """Deterministic, nearly uniform unit vectors on the sphere."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def elements_per_wavelength(wavelength) -> np.ndarray:
    return np.cbrt(np.asarray(wavelength, dtype=float) ** 3 / HONEYCOMB_VOLUME)


def wavelength_for(n_elements) -> np.ndarray:
    return np.cbrt(np.asarray(n_elements, dtype=float) ** 3 * HONEYCOMB_VOLUME)


def _branch_error(s, kappa_norm, dt, K, window):
    omega = np.sqrt(np.maximum(s, 0.0)) if dt is None else numerical_omega(s, dt, K)
    if np.any(np.isnan(omega)):
        return np.inf
    rel = omega / kappa_norm
    inside = (rel >= 1.0 / window) & (rel <= window)
    pool = rel[inside] if np.any(inside) else rel
    return float(np.min(np.abs(1.0 - pool)))


DEFAULT_DIRECTIONS = 256
DEFAULT_N_ELEMENTS = tuple(np.geomspace(16.0, 128.0, 7))
# degree >= 3 errors reach the double precision floor (~1e-11) beyond N ~ 50
DEFAULT_N_ELEMENTS_HIGH = tuple(np.geomspace(8.0, 32.0, 7))


def default_n_elements(degree: int) -> tuple[float, ...]:
    return DEFAULT_N_ELEMENTS if degree <= 2 else DEFAULT_N_ELEMENTS_HIGH


def dispersion_error(op: BlochOperator, wavelength: float, K: int = 2, dt: float | None = None,
                     n_directions: int = DEFAULT_DIRECTIONS, window: float = 3.0) -> float:
    """Relative speed error, maximised over directions, minimised over branches.

    ``dt=None`` uses the semi-discrete frequencies sqrt(s) (no time error).
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    k = 2.0 * np.pi / wavelength
    worst = 0.0
    for d in fibonacci_directions(n_directions):
        s = hermitian_eigenvalues(bloch_matrix(op, k * d))
        worst = max(worst, _branch_error(s, k, dt, K, window))
    return worst


def max_spatial_eigenvalue(op: BlochOperator, resolution: int = 16) -> tuple[float, np.ndarray]:
    """Largest spatial eigenvalue over the Brillouin cell, with one local refinement.

    Wave vectors are kappa = 2 pi T^-t m with m on a grid over [0, 1)^3.
    Returns the value and the maximising m.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    tinv_t = np.linalg.inv(op.transform).T

    def top(m):
        return hermitian_eigenvalues(bloch_matrix(op, 2.0 * np.pi * tinv_t @ m))[-1]

    grid = np.arange(resolution) / resolution
    best, arg = -np.inf, None
    for m in itertools.product(grid, repeat=3):
        v = top(np.array(m))
        if v > best:
            best, arg = v, np.array(m)
    h = 0.5 / resolution
    for off in itertools.product((-1, 0, 1), repeat=3):
        m = arg + h * np.array(off)
        v = top(m)
        if v > best:
            best, arg = v, m
    return float(best), arg


def max_time_step(s_max: float, K: int) -> float:
    return math.sqrt(C_K[K] / s_max)


def fit_power_law(points, threshold: float = 1e-1, floor: float = 1e-10) -> tuple[float, float]:
    """Fit e = C N^-r by least squares in log-log space.

    Only points with ``floor < e < threshold`` are used; below the floor the
    error is rounding noise.  Returns (C, r).

    Raises
    ------
    DegenerateFit
        if fewer than 3 usable points remain or their N values coincide.
    """
    pts = np.array([(n, e) for n, e in points if floor < e < threshold and n > 0], dtype=float)
    if len(pts) < 3 or np.ptp(np.log(pts[:, 0])) == 0:
        raise DegenerateFit("need at least 3 resolved points with distinct N")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    return float(np.exp(intercept)), float(-slope)


def analyse(method: str, K: int | None = None, n_elements=None,
            n_directions: int = DEFAULT_DIRECTIONS,
            resolution: int = 16, time_error: bool = True) -> DispersionResult:
    """Full analysis of one method: s_max, dt_max, e_disp sweep and fit.

    With ``time_error`` the sweep uses the Dablain frequencies at dt_max,
    otherwise the semi-discrete ones.  ``extra['asymptotic']`` holds
    e * N^(2p) at the largest N, the constant the power law tends to.
    """
    op = assemble_bloch_operator(method)
    element_id, _ = parse_method(method)
    K = K or int(element_id[1])
    s_max, _ = max_spatial_eigenvalue(op, resolution)
    dt = max_time_step(s_max, K)
    if n_elements is None:
        n_elements = default_n_elements(int(element_id[1]))
    n_elements = np.asarray(n_elements, dtype=float)
    lam = wavelength_for(n_elements)
    errs = np.array([dispersion_error(op, l, K, dt if time_error else None, n_directions)
                     for l in lam])
    try:
        fit = fit_power_law(zip(n_elements, errs))
    except DegenerateFit:
        fit = None
    log.info("%s: s_max=%.6g dt_max=%.4f fit=%s", method, s_max, dt, fit)
    p = int(element_id[1])
    asym = float(errs[-1] * n_elements[-1] ** (2 * p))
    return DispersionResult(method, K, dt if time_error else None, lam, n_elements, errs,
                            s_max, dt, fit, {"asymptotic": asym})


def write_dispersion_csv(stream, results) -> None:
    w = csv.writer(stream)
    w.writerow(["method", "lambda", "N_E", "e_disp"])
    for r in results:
        for l, n, e in zip(r.wavelengths, r.n_elements, r.errors):
            w.writerow([r.label, f"{l:.10g}", f"{n:.10g}", f"{e:.10g}"])


def write_timestep_csv(stream, results) -> None:
    w = csv.writer(stream)
    w.writerow(["method", "K", "s_hmax", "dt_max"])
    for r in results:
        w.writerow([r.label, r.K, f"{r.s_max:.10g}", f"{r.dt_max:.10g}"])
