"""Explicit time stepping of the mass-lumped scheme on tetrahedral meshes.

The global stiffness operator is never assembled: every application gathers
element vectors, runs the batched element kernels and scatters back with
``np.bincount`` in a fixed element order, so results are bitwise identical
for any number of worker threads.
"""
from __future__ import annotations

import csv
import json
import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels
from .errors import NoConvergence, NonpositiveDensity, ParseError
from .mesh import DofMap, TetMesh, build_block_mesh, enumerate_global_dofs, read_mesh
from .refelement import Element, build_element

Field = Callable[[np.ndarray], np.ndarray]
C_K = {1: 4.0, 2: 12.0, 3: 7.57, 4: 21.48}

SNAPSHOT_MAGIC = b"MLTSNAP1"


# -- problem setup -------------------------------------------------------------

@dataclass(eq=False)
class WaveProblem:
    """Discrete wave operator rho u_tt = div(c grad u) (scalar) or its elastic analogue.

    ``mode`` is 'rule' (quadrature kernels) or 'exact' (exact kernels with an
    element-constant coefficient).  ``policy`` selects how materials are
    sampled: 'pointwise' puts rho at the mass nodes and c at the quadrature
    points; 'piecewise-constant' samples both at element centroids.  Exact
    mode always uses a centroid coefficient for the stiffness.
    """

    mesh: TetMesh
    element: Element
    mode: str
    rho: Field
    c: Field | None = None
    lame: tuple[Field, Field] | None = None
    boundary: str = "neumann"
    policy: str = "pointwise"
    threads: int = 1
    chunk: int = 4096
    dofmap: DofMap = field(init=False)
    mass: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.mode not in ("rule", "exact"):
            raise ValueError("mode must be 'rule' or 'exact'")
        if self.policy not in ("pointwise", "piecewise-constant"):
            raise ValueError("policy must be 'pointwise' or 'piecewise-constant'")
        if self.boundary not in ("neumann", "dirichlet"):
            raise ValueError("boundary must be 'neumann' or 'dirichlet'")
        if (self.c is None) == (self.lame is None):
            raise ValueError("give exactly one of c (scalar) or lame (elastic)")
        if self.mode == "rule" and self.element.tables.D is None:
            raise ValueError("rule mode needs an element built with a stiffness rule")
        self.dofmap = enumerate_global_dofs(self.mesh, self.element.nodes)
        self._setup_mass()
        self._setup_stiffness()

    @property
    def elastic(self) -> bool:
        return self.lame is not None

    @property
    def components(self) -> int:
        return 3 if self.elastic else 1

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_global * self.components

    @property
    def free_mask(self) -> np.ndarray:
        keep = ~self.dofmap.boundary if self.boundary == "dirichlet" else \
            np.ones(self.dofmap.n_global, dtype=bool)
        return np.tile(keep, self.components)

    def _centroid_values(self, f: Field) -> np.ndarray:
        return np.asarray(f(self.mesh.centroids()), dtype=float)

    def _setup_mass(self):
        el, mesh = self.element, self.mesh
        if self.policy == "pointwise":
            pts = mesh.map_points(el.nodes)                    # (E, n, 3)
            rho = np.asarray(self.rho(pts.reshape(-1, 3)), dtype=float).reshape(pts.shape[:2])
        else:
            rho = np.repeat(self._centroid_values(self.rho)[:, None], el.n, axis=1)
        if np.any(rho <= 0):
            raise NonpositiveDensity("density must be positive at every sample")
        local = mesh.dets[:, None] * el.tables.mass_weights[None, :] * rho
        m = np.bincount(self.dofmap.local_to_global.ravel(), local.ravel(),
                        minlength=self.dofmap.n_global)
        self.mass = np.tile(m, self.components)

    def _material_points(self):
        rule = self.element.tables.stiffness_rule
        return self.mesh.map_points(rule.points()), rule.weights()

    def _setup_stiffness(self):
        mesh = self.mesh
        jinv, det = mesh.inverse_jacobians, mesh.dets
        exact_coef = self.mode == "exact" or self.policy == "piecewise-constant"
        if not self.elastic:
            kref = det[:, None, None] * np.einsum("eap,ebp->eab", jinv, jinv)
            if self.mode == "exact":
                c = self._centroid_values(self.c)
                self._check_positive(c, "c")
                self._ctensor = c[:, None, None] * kref
                self._bhat = np.array(list(self.element.tables.Bhat.values()))
            else:
                pts, w = self._material_points()
                if exact_coef:
                    c = np.repeat(self._centroid_values(self.c)[:, None], len(w), axis=1)
                else:
                    c = np.asarray(self.c(pts.reshape(-1, 3)), dtype=float).reshape(pts.shape[:2])
                self._check_positive(c, "c")
                self._samples = (w[None, :] * c)[..., None, None] * kref[:, None]
        else:
            lam_f, mu_f = self.lame
            if self.mode == "exact":
                self._lam = self._centroid_values(lam_f)
                self._mu = self._centroid_values(mu_f)
                self._check_positive(self._mu, "mu")
            else:
                pts, w = self._material_points()
                flat = pts.reshape(-1, 3)
                if exact_coef:
                    n = len(w)
                    self._lam = np.repeat(self._centroid_values(lam_f)[:, None], n, axis=1)
                    self._mu = np.repeat(self._centroid_values(mu_f)[:, None], n, axis=1)
                else:
                    self._lam = np.asarray(lam_f(flat), dtype=float).reshape(pts.shape[:2])
                    self._mu = np.asarray(mu_f(flat), dtype=float).reshape(pts.shape[:2])
                self._check_positive(self._mu, "mu")
                self._weights = w

    @staticmethod
    def _check_positive(v, name):
        if np.any(np.asarray(v) <= 0):
            raise ValueError(f"material parameter {name} must be positive")

    # -- operator application ----------------------------------------------------------

    def _element_block(self, sl: slice, U: np.ndarray) -> np.ndarray:
        tables = self.element.tables
        if not self.elastic:
            if self.mode == "exact":
                return kernels.batch_exact_scalar(tables, self._ctensor[sl], U, self._bhat)
            return kernels.batch_quad_scalar(tables, self._samples[sl], U)
        jinv, det = self.mesh.inverse_jacobians[sl], self.mesh.dets[sl]
        if self.mode == "exact":
            return batch_exact_elastic_isotropic(tables, self._lam[sl], self._mu[sl], jinv, det, U)
        return kernels.batch_quad_elastic_isotropic(
            tables, self._lam[sl], self._mu[sl], jinv, det, self._weights, U)

    def apply_stiffness(self, u: np.ndarray) -> np.ndarray:
        """Global A u without assembling A."""
        l2g = self.dofmap.local_to_global
        ng = self.dofmap.n_global
        u = np.asarray(u, dtype=float)
        if self.boundary == "dirichlet":
            u = np.where(self.free_mask, u, 0.0)
        uc = u.reshape(self.components, ng)
        E = self.mesh.n_tets
        slices = [slice(s, min(s + self.chunk, E)) for s in range(0, E, self.chunk)]

        def work(sl):
            U = uc[:, l2g[sl]]                          # (comp, e, n)
            U = U[0] if not self.elastic else np.transpose(U, (1, 0, 2))
            return self._element_block(sl, U)

        if self.threads > 1 and len(slices) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(work, slices))
        else:
            parts = [work(sl) for sl in slices]
        V = np.concatenate(parts, axis=0)
        idx = l2g.ravel()
        if not self.elastic:
            out = np.bincount(idx, V.ravel(), minlength=ng)
        else:
            out = np.concatenate([np.bincount(idx, V[:, i, :].ravel(), minlength=ng)
                                  for i in range(3)])
        if self.boundary == "dirichlet":
            out = np.where(self.free_mask, out, 0.0)
        return out

    def apply_L(self, u: np.ndarray) -> np.ndarray:
        """M^-1 A u."""
        return self.apply_stiffness(u) / self.mass

    def interpolate(self, f: Field) -> np.ndarray:
        vals = np.asarray(f(self.dofmap.coords), dtype=float)
        if self.elastic:
            vals = vals.reshape(-1, 3).T.reshape(-1)
        if self.boundary == "dirichlet":
            vals = np.where(self.free_mask, vals, 0.0)
        return vals


def batch_exact_elastic_isotropic(tables, lam, mu, jinv, det, U):
    """Isotropic A1*-A2* for many elements with element-constant Lame parameters."""
    eps = np.einsum("abmn,ejn->eabjm", tables.B, U)     # eps[e, a, b, component, node]
    k = np.einsum("eap,ebp->eab", jinv, jinv)
    v = (lam[:, None, None] * np.einsum("eai,ebj,eabjm->eim", jinv, jinv, eps)
         + mu[:, None, None] * np.einsum("eaj,ebi,eabjm->eim", jinv, jinv, eps)
         + mu[:, None, None] * np.einsum("eab,eabim->eim", k, eps))
    return det[:, None, None] * v


# -- time stepping ------------------------------------------------------------------

def dablain_increment(apply_L, u, dt: float, K: int) -> np.ndarray:
    """2 sum_{k=1..K} dt^(2k)/(2k)! (-L)^k u."""
    out = np.zeros_like(u)
    term = u
    for k in range(1, K + 1):
        term = -apply_L(term)
        out += (2.0 * dt ** (2 * k) / math.factorial(2 * k)) * term
    return out


def dablain_start(apply_L, u0, v0, dt: float, K: int) -> np.ndarray:
    """u(-dt) from the truncated Taylor series of cos(dt sqrt L) u0 - sin(dt sqrt L)/sqrt L v0."""
    prev = u0.copy()
    tu, tv = u0, v0
    prev = prev - dt * v0
    for k in range(1, K + 1):
        tu = -apply_L(tu)
        tv = -apply_L(tv)
        prev += dt ** (2 * k) / math.factorial(2 * k) * tu
        prev -= dt ** (2 * k + 1) / math.factorial(2 * k + 1) * tv
    return prev


def dablain_step(apply_L, u, u_prev, dt: float, K: int) -> np.ndarray:
    """Order-2K step: u_next = 2u - u_prev + 2 sum dt^2k/(2k)! (-L)^k u."""
    return 2.0 * u - u_prev + dablain_increment(apply_L, u, dt, K)


def discrete_energy(apply_L, mass, u_next, u, dt: float, K: int) -> float:
    """Quantity conserved by the scheme between steps n and n+1.

    E = 1/2 |(u_next - u)/dt|_M^2 - 1/2 u_next^T M inc(u) / dt^2, with inc the
    Dablain increment; M inc is symmetric, so E is exactly conserved and is
    positive when dt is below the stability limit.
    """
    v = (u_next - u) / dt
    inc = dablain_increment(apply_L, u, dt, K)
    return float(0.5 * v @ (mass * v) - 0.5 * u_next @ (mass * inc) / dt ** 2)


def estimate_sigma_max(apply_A, mass, free_mask=None, tol: float = 1e-6,
                       max_iter: int = 20000, seed: int = 0) -> float:
    """Largest eigenvalue of M^-1 A by power iteration on M^-1/2 A M^-1/2.

    Stops when the Rayleigh quotient changes by less than ``tol`` (relative)
    over 10 consecutive iterations.

    Raises
    ------
    NoConvergence
        when ``max_iter`` is reached first.
    """
    r = 1.0 / np.sqrt(mass)
    x = np.random.default_rng(seed).standard_normal(len(mass))
    if free_mask is not None:
        x = np.where(free_mask, x, 0.0)
    x /= np.linalg.norm(x)
    prev, calm = 0.0, 0
    for _ in range(max_iter):
        y = r * apply_A(r * x)
        if free_mask is not None:
            y = np.where(free_mask, y, 0.0)
        sigma = float(x @ y)
        x = y / np.linalg.norm(y)
        calm = calm + 1 if abs(sigma - prev) <= tol * abs(sigma) else 0
        if calm >= 10:
            return sigma
        prev = sigma
    raise NoConvergence(f"power iteration did not reach tol={tol} in {max_iter} iterations")


def max_stable_dt(sigma_max: float, K: int) -> float:
    return math.sqrt(C_K[K] / sigma_max)


@dataclass
class RunResult:
    u: np.ndarray
    steps: int
    dt: float
    t_final: float
    energy: list[tuple[int, float, float]] = field(default_factory=list)


def run(problem: WaveProblem, u0, v0, t_final: float, dt_max: float, K: int = 2,
        safety: float = 0.99, energy_every: int = 0, snapshot_every: int = 0,
        snapshot_dir=None) -> RunResult:
    """Integrate to ``t_final`` with ceil(T / (safety dt_max)) equal steps."""
    steps = max(1, math.ceil(t_final / (safety * dt_max)))
    dt = t_final / steps
    L = problem.apply_L
    u_prev = dablain_start(L, u0, v0, dt, K)
    u = np.array(u0, dtype=float)
    result = RunResult(u, steps, dt, t_final)
    for n in range(steps):
        u_next = dablain_step(L, u, u_prev, dt, K)
        if energy_every and n % energy_every == 0:
            result.energy.append((n, n * dt, discrete_energy(L, problem.mass, u_next, u, dt, K)))
        if snapshot_every and snapshot_dir is not None and n % snapshot_every == 0:
            write_snapshot(Path(snapshot_dir) / f"snap_{n:06d}.bin", u)
        u_prev, u = u, u_next
    result.u = u
    return result


# -- snapshots ------------------------------------------------------------------------

def write_snapshot(path, u: np.ndarray) -> None:
    """8-byte magic + uint64 length (little-endian), then float64 values."""
    data = np.ascontiguousarray(u, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC + struct.pack("<Q", data.size))
        fh.write(data.tobytes())


def read_snapshot(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != SNAPSHOT_MAGIC:
        raise ParseError("not a snapshot file", line=None)
    (n,) = struct.unpack("<Q", raw[8:16])
    data = np.frombuffer(raw[16:], dtype="<f8")
    if data.size != n:
        raise ParseError(f"snapshot declares {n} values but holds {data.size}")
    return data.copy()


# -- heterogeneous acoustic test problem --------------------------------------------

@dataclass(frozen=True)
class AcousticManufactured:
    """Standing wave in the distorted coordinates X_i = x_i + a_i/m_i cos(m_i x_i).

    On (-L, L)^3 with rho = rho0 g1 g2 g3 and
    c = c0 sqrt(|k|^2 / sum k_i^2 g_i^2), the field
    p = cos(omega t) prod sin(k_i X_i) solves the acoustic equation with zero
    Neumann data, where g_i = 1 - a_i sin(m_i x_i) and m_i = pi / (2 L_i).
    """

    L: tuple[float, float, float] = (1.0, 1.0, 1.0)
    a: tuple[float, float, float] = (0.2, 0.2, 0.2)
    k_over_m: float = 3.0
    c0: float = 2.0
    rho0: float = 2.0

    @property
    def m(self) -> np.ndarray:
        return 0.5 * np.pi / np.asarray(self.L)

    @property
    def k(self) -> np.ndarray:
        return self.k_over_m * self.m

    @property
    def omega(self) -> float:
        return self.c0 * float(np.linalg.norm(self.k))

    @property
    def period_pair(self) -> float:
        """Two oscillations, 4 pi / omega."""
        return 4.0 * np.pi / self.omega

    @property
    def box(self):
        return tuple((-l, l) for l in self.L)

    def g(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return 1.0 - np.asarray(self.a) * np.sin(self.m * x)

    def X(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return x + np.asarray(self.a) / self.m * np.cos(self.m * x)

    def density(self, x) -> np.ndarray:
        return self.rho0 * np.prod(self.g(x), axis=1)

    def speed(self, x) -> np.ndarray:
        g = self.g(x)
        k2 = self.k ** 2
        return self.c0 * np.sqrt(k2.sum() / (g ** 2 @ k2))

    def pressure(self, x, t: float) -> np.ndarray:
        return math.cos(self.omega * t) * np.prod(np.sin(self.k * self.X(x)), axis=1)

    # the acoustic equation as rho_eq u_tt = div(c_eq grad u)
    def rho_eq(self, x) -> np.ndarray:
        return 1.0 / (self.density(x) * self.speed(x) ** 2)

    def c_eq(self, x) -> np.ndarray:
        return 1.0 / self.density(x)


def manufactured_problem(n_cells: int, element_id: str = "p2n15", mode: str = "rule",
                         policy: str | None = None, distortion: float = 0.15,
                         case: AcousticManufactured | None = None, threads: int = 1):
    case = case or AcousticManufactured()
    policy = policy or ("pointwise" if mode == "rule" else "piecewise-constant")
    mesh = build_block_mesh(n_cells, n_cells, n_cells, case.box, distortion)
    el = build_element(element_id, "rule" if mode == "rule" else "exact")
    prob = WaveProblem(mesh, el, mode, rho=case.rho_eq, c=case.c_eq, policy=policy,
                       threads=threads)
    return prob, case


@dataclass
class ConvergenceRow:
    element: str
    mode: str
    policy: str
    n_cells: int
    n_dofs: int
    h: float
    rms: float
    steps: int
    seconds: float
    sigma_max: float


def rms_error(problem: WaveProblem, u: np.ndarray, exact: np.ndarray) -> float:
    mask = problem.free_mask
    d = (u - exact)[mask]
    return float(np.sqrt(np.mean(d * d)))


def run_manufactured(n_cells: int, element_id: str = "p2n15", mode: str = "rule",
                     policy: str | None = None, distortion: float = 0.15, K: int = 2,
                     case: AcousticManufactured | None = None, threads: int = 1,
                     sigma_tol: float = 1e-6) -> ConvergenceRow:
    t0 = time.perf_counter()
    prob, case = manufactured_problem(n_cells, element_id, mode, policy, distortion, case, threads)
    sigma = estimate_sigma_max(prob.apply_stiffness, prob.mass, tol=sigma_tol)
    u0 = prob.interpolate(lambda x: case.pressure(x, 0.0))
    v0 = np.zeros_like(u0)
    T = case.period_pair
    res = run(prob, u0, v0, T, max_stable_dt(sigma, K), K)
    err = rms_error(prob, res.u, prob.interpolate(lambda x: case.pressure(x, T)))
    return ConvergenceRow(element_id, mode, prob.policy, n_cells, prob.n_dofs, prob.mesh.h,
                          err, res.steps, time.perf_counter() - t0, sigma)


def observed_order(rows) -> float:
    """Least-squares slope of log(rms) against log(N^-1/3)."""
    n = np.array([r.n_dofs for r in rows], dtype=float)
    e = np.array([r.rms for r in rows])
    slope, _ = np.polyfit(np.log(n ** (-1.0 / 3.0)), np.log(e), 1)
    return float(slope)


def run_convergence_study(sizes=(4, 8, 16), element_id: str = "p2n15", mode: str = "rule",
                          policy: str | None = None, distortion: float = 0.15, K: int = 2,
                          threads: int = 1, log_fn=None) -> tuple[list[ConvergenceRow], float]:
    rows = []
    for n in sizes:
        row = run_manufactured(n, element_id, mode, policy, distortion, K, threads=threads)
        if log_fn:
            log_fn(row)
        rows.append(row)
    return rows, observed_order(rows) if len(rows) >= 2 else float("nan")


def write_convergence_csv(stream, rows) -> None:
    w = csv.writer(stream)
    w.writerow(["element", "mode", "N", "h", "rms", "steps", "seconds"])
    for r in rows:
        w.writerow([r.element, f"{r.mode}/{r.policy}", r.n_dofs, f"{r.h:.6g}",
                    f"{r.rms:.10g}", r.steps, f"{r.seconds:.3f}"])


# -- simulation spec files ----------------------------------------------------------

def _constant(v: float) -> Field:
    return lambda x: np.full(len(np.atleast_2d(x)), float(v))


def load_simulation_spec(path) -> dict:
    """Read a JSON simulation spec; JSON errors are reported with their line."""
    text = Path(path).read_text()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(spec, dict):
        raise ParseError("top level must be an object", line=1)
    return spec


def build_simulation(spec: dict, threads: int = 1):
    """Problem, initial state and end time from a spec dictionary.

    Keys: ``mesh`` (path) or ``block`` {n, box, distortion}; ``element``;
    ``mode``; ``material``: 'manufactured', 'zero', {'rho', 'c'} or
    {'rho', 'vp', 'vs'} (elastic); ``T``; ``K``.
    """
    element_id = spec.get("element", "p2n15")
    mode = spec.get("mode", "rule")
    material = spec.get("material", "manufactured")
    case = AcousticManufactured()
    if "mesh" in spec:
        mesh = read_mesh(spec["mesh"])
    else:
        blk = spec.get("block", {})
        n = int(blk.get("n", 2))
        box = blk.get("box", case.box if material == "manufactured" else [[0, 1]] * 3)
        mesh = build_block_mesh(n, n, n, box, float(blk.get("distortion", 0.0)))
    el = build_element(element_id, "rule" if mode == "rule" else "exact")
    boundary = spec.get("boundary", "neumann")
    T = float(spec.get("T", case.period_pair))
    zero = _constant(0.0)
    if material == "manufactured":
        prob = WaveProblem(mesh, el, mode, rho=case.rho_eq, c=case.c_eq, boundary=boundary,
                           threads=threads)
        u0 = prob.interpolate(lambda x: case.pressure(x, 0.0))
    elif material == "zero":
        prob = WaveProblem(mesh, el, mode, rho=_constant(1.0), c=_constant(1.0),
                           boundary=boundary, threads=threads)
        u0 = np.zeros(prob.n_dofs)
    elif isinstance(material, dict) and "vp" in material:
        rho = float(material["rho"])
        mu = rho * float(material["vs"]) ** 2
        lam = rho * float(material["vp"]) ** 2 - 2.0 * mu
        prob = WaveProblem(mesh, el, mode, rho=_constant(rho), lame=(_constant(lam), _constant(mu)),
                           boundary=boundary, threads=threads)
        centre = mesh.vertices.mean(axis=0)
        width = 0.1 * (mesh.vertices.max() - mesh.vertices.min())

        def pulse(x):
            r2 = np.sum((np.atleast_2d(x) - centre) ** 2, axis=1)
            return np.exp(-r2 / width ** 2)[:, None] * np.array([1.0, 0.0, 0.0])
        u0 = prob.interpolate(pulse)
    elif isinstance(material, dict):
        prob = WaveProblem(mesh, el, mode, rho=_constant(material["rho"]),
                           c=_constant(material["c"]), boundary=boundary, threads=threads)
        u0 = prob.interpolate(lambda x: np.cos(np.pi * np.atleast_2d(x)[:, 0]))
    else:
        raise ParseError(f"unknown material {material!r}")
    v0 = np.zeros_like(u0)
    return prob, u0, v0, T, int(spec.get("K", 2))
