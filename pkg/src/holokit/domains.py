"""Bounded convex domains as first-class objects.

A domain is described by a real-valued defining polynomial rho(z, zbar) with
rho < 0 inside; gradients and real Hessians are differentiated exactly on the
monomial table.  The catalog: ball(q), siegel(q) (unbounded, exact metric),
egg (|z1|^2 + |z2|^4 < 1), diagonal ellipsoids, and custom polynomials.

Kobayashi distances dispatch to exact formulas where a biholomorphism to the
ball is known (ball, Siegel, diagonal ellipsoids); everywhere else a sandwich
[lower, upper] is produced from distance-decreasing maps:

  lower:  half-plane projections through supporting hyperplanes, plus, on
          balanced domains, linear functionals whose image is a disc of
          computable radius;
  upper:  round discs inscribed in the affine slice through the two points.

The sandwich is sound by construction but not tight in general; exactness on
ball-like kinds comes from the exact dispatch, and the generic machinery is
cross-checked against it in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .ball import (
    BallAutomorphism,
    _k_from_s,
    ball_distance,
    mobius_to_origin,
    siegel_distance,
)
from .errors import (
    DegenerateBoundaryError,
    InvariantViolationError,
    NonConvergentLimitError,
    OutOfDomainError,
    PreconditionError,
)
from .numerics import SeededSampler, as_cpoint, detect_limit

_DIRECTION_SEED = 20_1711


# ---------------------------------------------------------------------------
# defining polynomials
# ---------------------------------------------------------------------------

class DefiningPolynomial:
    """Real-valued polynomial in (z, zbar) stored as a monomial table.

    Terms map (alpha, beta) multi-indices to complex coefficients; reality
    requires coeff(alpha, beta) = conj(coeff(beta, alpha)).
    """

    def __init__(self, q: int, terms: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], complex]):
        self.q = q
        self.terms = {(tuple(a), tuple(b)): complex(c) for (a, b), c in terms.items()
                      if abs(complex(c)) > 0}

    def __call__(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        zb = np.conj(z)
        out = np.zeros(z.shape[0], dtype=complex)
        for (a, b), c in self.terms.items():
            term = np.full(z.shape[0], c, dtype=complex)
            for j, e in enumerate(a):
                if e:
                    term = term * z[:, j] ** e
            for j, e in enumerate(b):
                if e:
                    term = term * zb[:, j] ** e
            out += term
        out = out.real
        return float(out[0]) if out.size == 1 else out

    def diff(self, var: int, conjugated: bool) -> "DefiningPolynomial":
        """Exact partial derivative d/dz_var or d/dzbar_var (complex-valued)."""
        new: Dict = {}
        for (a, b), c in self.terms.items():
            idx = list(b if conjugated else a)
            if idx[var] == 0:
                continue
            coeff = c * idx[var]
            idx[var] -= 1
            key = (tuple(a), tuple(idx)) if conjugated else (tuple(idx), tuple(b))
            new[key] = new.get(key, 0.0) + coeff
        return DefiningPolynomial(self.q, new)

    def eval_complex(self, z):
        """Evaluate without taking the real part (for derivative tables)."""
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        zb = np.conj(z)
        out = np.zeros(z.shape[0], dtype=complex)
        for (a, b), c in self.terms.items():
            term = np.full(z.shape[0], c, dtype=complex)
            for j, e in enumerate(a):
                if e:
                    term = term * z[:, j] ** e
            for j, e in enumerate(b):
                if e:
                    term = term * zb[:, j] ** e
            out += term
        return out[0] if out.size == 1 else out

    def holomorphic_gradient(self, z) -> np.ndarray:
        """(d rho / d z_j)_j at a point."""
        return np.array([self.diff(j, False).eval_complex(z) for j in range(self.q)])

    def real_gradient(self, z) -> np.ndarray:
        """Gradient in coordinates (x_1..x_q, y_1..y_q)."""
        gz = self.holomorphic_gradient(z)
        return np.concatenate([2.0 * gz.real, -2.0 * gz.imag])

    def real_hessian(self, z) -> np.ndarray:
        """Hessian in coordinates (x_1..x_q, y_1..y_q).

        With A = rho_zz and B = rho_{z zbar} (B Hermitian for real rho):
        H_xx = 2 Re(A+B), H_xy = 2 Im(B-A), H_yy = 2 Re(B-A).
        """
        q = self.q
        A = np.zeros((q, q), dtype=complex)
        B = np.zeros((q, q), dtype=complex)
        for i in range(q):
            di = self.diff(i, False)
            for j in range(q):
                A[i, j] = di.diff(j, False).eval_complex(z)
                B[i, j] = di.diff(j, True).eval_complex(z)
        Hxx = 2.0 * (A + B).real
        Hxy = 2.0 * (B - A).imag
        Hyy = 2.0 * (B - A).real
        return np.block([[Hxx, Hxy], [Hxy.T, Hyy]])


# ---------------------------------------------------------------------------
# the domain object
# ---------------------------------------------------------------------------

@dataclass
class DomainSpec:
    kind: str
    dimension: int
    rho: Optional[DefiningPolynomial]
    center: np.ndarray
    circumradius: float
    balanced: bool = False
    coefficients: Optional[np.ndarray] = None
    bounded: bool = True
    _hyperplanes: Optional[tuple] = field(default=None, repr=False)
    _boundary_cache: dict = field(default_factory=dict, repr=False)

    # -- membership ---------------------------------------------------------
    def contains(self, z) -> np.ndarray:
        if self.kind == "siegel":
            z = np.atleast_2d(np.asarray(z, dtype=complex))
            h = z[:, 0].imag - np.sum(np.abs(z[:, 1:]) ** 2, axis=1)
            out = h > 0
        else:
            out = np.atleast_1d(self.rho(z)) < 0
        return bool(out[0]) if np.size(out) == 1 else out

    def rho_values(self, z) -> np.ndarray:
        if self.kind == "siegel":
            z = np.atleast_2d(np.asarray(z, dtype=complex))
            return np.sum(np.abs(z[:, 1:]) ** 2, axis=1) - z[:, 0].imag
        return np.atleast_1d(self.rho(z))

    def require_interior(self, z, label: str = "point"):
        if not np.all(np.atleast_1d(self.contains(z))):
            raise OutOfDomainError(f"{label} outside the domain")

    # -- boundary geometry ---------------------------------------------------
    def boundary_distance(self, z) -> float:
        """Euclidean distance to the boundary (exact for the ball, numeric
        local projection elsewhere)."""
        z = as_cpoint(z, self.dimension)
        if self.kind == "ball":
            return 1.0 - float(np.linalg.norm(z))
        if self.kind == "ellipsoid":
            # lower bound via the scaled ball: exact distance needs projection
            b = self.project_to_boundary(z)
            return float(np.linalg.norm(b - z))
        if self.kind == "siegel":
            b = self.project_to_boundary(z)
            return float(np.linalg.norm(b - z))
        b = self.project_to_boundary(z)
        return float(np.linalg.norm(b - z))

    def project_to_boundary(self, z) -> np.ndarray:
        """Nearest boundary point by Newton projection plus a constrained
        polish of |b - z| over rho(b) = 0."""
        z = as_cpoint(z, self.dimension)
        rho = self._rho_or_siegel()
        # start on the boundary: ray exit through z (interior critical points
        # of rho would stall a bare Newton projection)
        ray = z - self.center
        if np.linalg.norm(ray) < 1e-12:
            ray = np.eye(self.dimension, dtype=complex)[0]
        b = self.boundary_point_toward(ray) if self.bounded else self._newton_project(z)
        x0 = _to_real(b)
        zr = _to_real(z)

        def objective(x):
            return float(np.sum((x - zr) ** 2)), 2.0 * (x - zr)

        def constraint(x):
            return float(rho(_to_complex(x)))

        def constraint_grad(x):
            return rho.real_gradient(_to_complex(x))

        res = optimize.minimize(
            objective, x0, jac=True, method="SLSQP",
            constraints=[{"type": "eq", "fun": constraint, "jac": constraint_grad}],
            options={"maxiter": 80, "ftol": 1e-16})
        out = _to_complex(res.x)
        return self._newton_project(out)

    def _rho_or_siegel(self) -> DefiningPolynomial:
        if self.rho is not None:
            return self.rho
        # Siegel: |z'|^2 - Im z1 as a polynomial: Im z1 = (z1 - zbar1)/(2i)
        q = self.dimension
        terms: Dict = {}
        e0 = tuple([0] * q)

        def unit(j):
            v = [0] * q
            v[j] = 1
            return tuple(v)

        terms[(unit(0), e0)] = 1j / 2.0
        terms[(e0, unit(0))] = -1j / 2.0
        for j in range(1, q):
            terms[(unit(j), unit(j))] = 1.0
        poly = DefiningPolynomial(q, terms)
        return poly

    def _newton_project(self, z, tol: float = 1e-13, max_iter: int = 60) -> np.ndarray:
        rho = self._rho_or_siegel()
        x = _to_real(as_cpoint(z, self.dimension))
        for _ in range(max_iter):
            val = float(rho(_to_complex(x)))
            if abs(val) <= tol:
                break
            g = rho.real_gradient(_to_complex(x))
            gn = float(g @ g)
            if gn < 1e-24:
                raise DegenerateBoundaryError("vanishing gradient during Newton projection")
            x = x - val * g / gn
        return _to_complex(x)

    def boundary_point_toward(self, direction) -> np.ndarray:
        """Boundary point hit by the ray from the center in a real direction
        of C^q (bisection then Newton polish)."""
        d = as_cpoint(direction, self.dimension)
        d = d / np.linalg.norm(d)
        lo, hi = 0.0, max(1.0, self.circumradius)
        while bool(np.atleast_1d(self.contains(self.center + hi * d))[0]):
            hi *= 2.0
            if hi > 1e6:
                raise PreconditionError("domain appears unbounded in this direction")
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if bool(np.atleast_1d(self.contains(self.center + mid * d))[0]):
                lo = mid
            else:
                hi = mid
        return self._newton_project(self.center + 0.5 * (lo + hi) * d)

    def interior_margin(self, z) -> np.ndarray:
        """Cheap positive-inside guard quantity: exact boundary gap for the
        ball, the height for H^q, and -rho as a proxy otherwise."""
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        if self.kind == "ball":
            out = 1.0 - np.linalg.norm(z, axis=1)
        elif self.kind == "siegel":
            out = z[:, 0].imag - np.sum(np.abs(z[:, 1:]) ** 2, axis=1)
        else:
            out = -np.atleast_1d(self.rho(z))
        return float(out[0]) if out.size == 1 else out

    def metric_roundoff(self, z) -> np.ndarray:
        """Absolute floating-point noise floor of distances involving z.

        Near the boundary 1-|z|^2 (or the Siegel height) is formed by
        cancellation, so distance values carry noise ~ eps / margin."""
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        eps = 4e-16
        if self.kind == "ball":
            margin = np.maximum(1.0 - np.linalg.norm(z, axis=1), 1e-300)
            out = eps / margin
        elif self.kind == "siegel":
            rho = np.maximum(z[:, 0].imag - np.sum(np.abs(z[:, 1:]) ** 2, axis=1), 1e-300)
            scale = np.maximum.reduce([np.abs(z[:, 0]), np.sum(np.abs(z[:, 1:]) ** 2, axis=1),
                                       np.ones(z.shape[0])])
            out = eps * scale / rho
        else:
            out = np.zeros(z.shape[0])
        return float(out[0]) if out.size == 1 else out

    def interior_samples(self, n: int, seed: int = 23) -> np.ndarray:
        """n deterministic interior points (rejection from the bounding ball
        for bounded kinds; constructed directly for the half-space)."""
        sampler = SeededSampler(seed, self.dimension)
        if self.kind == "siegel":
            zp = sampler.spawn(1, self.dimension - 1).complex_ball(n) if self.dimension > 1 \
                else np.zeros((n, 0), dtype=complex)
            heights = np.exp(sampler.reals(n, np.log(0.05), np.log(5.0)))
            x = sampler.reals(n, -2.0, 2.0)
            z = np.zeros((n, self.dimension), dtype=complex)
            z[:, 0] = x + 1j * (np.sum(np.abs(zp) ** 2, axis=1) + heights)
            z[:, 1:] = zp
            return z
        out = []
        batch = max(2 * n, 64)
        while sum(len(o) for o in out) < n:
            cand = self.center[None, :] + 0.999 * self.circumradius * sampler.complex_ball(batch)
            mask = np.atleast_1d(self.contains(cand))
            out.append(cand[mask])
        return np.concatenate(out, axis=0)[:n]

    def boundary_samples(self, n: int, seed: int = _DIRECTION_SEED) -> np.ndarray:
        key = (n, seed)
        if key not in self._boundary_cache:
            dirs = SeededSampler(seed, self.dimension).complex_sphere(n)
            pts = np.array([self.boundary_point_toward(d) for d in dirs])
            self._boundary_cache[key] = pts
        return self._boundary_cache[key]

    # -- exact metric dispatch -----------------------------------------------
    @property
    def has_exact_metric(self) -> bool:
        return self.kind in ("ball", "siegel", "ellipsoid")

    def exact_distance(self, z, w):
        if self.kind == "ball":
            return ball_distance(z, w)
        if self.kind == "siegel":
            return siegel_distance(z, w)
        if self.kind == "ellipsoid":
            scale = np.sqrt(self.coefficients)
            return ball_distance(np.asarray(z, dtype=complex) * scale,
                                 np.asarray(w, dtype=complex) * scale)
        raise PreconditionError(f"no exact Kobayashi distance for kind {self.kind!r}")

    def distance_with_gap(self, z, w) -> Tuple[float, float]:
        """(distance estimate, gap): exact metric has gap 0; otherwise the
        sandwich midpoint with gap = upper - lower."""
        if self.has_exact_metric:
            return float(self.exact_distance(z, w)), 0.0
        sb = kobayashi_sandwich(self, z, w)
        return 0.5 * (sb.lower + sb.upper), sb.gap

    # -- support data ---------------------------------------------------------
    def functional_radius(self, u) -> float:
        """sup over the domain of |<w, u>| (balanced kinds only; the image of
        the functional is then the full disc of this radius)."""
        if not self.balanced:
            raise PreconditionError("functional_radius requires a balanced domain")
        u = as_cpoint(u, self.dimension)
        if self.kind == "ball":
            return float(np.linalg.norm(u))
        if self.kind == "ellipsoid":
            return float(np.sqrt(np.sum(np.abs(u) ** 2 / self.coefficients)))
        if self.kind == "egg":
            a1, a2 = abs(u[0]), abs(u[1])

            def neg(r2):
                return -(a1 * np.sqrt(max(1.0 - r2 ** 4, 0.0)) + a2 * r2)

            res = optimize.minimize_scalar(neg, bounds=(0.0, 1.0), method="bounded",
                                           options={"xatol": 1e-12})
            return float(-res.fun) * (1.0 + 1e-12)
        # generic balanced custom domain: maximize over boundary samples + pad
        pts = self.boundary_samples(512)
        vals = np.abs(pts @ np.conj(u))
        return float(vals.max()) * 1.01

    def supporting_hyperplanes(self, n: int = 64) -> Tuple[np.ndarray, np.ndarray]:
        """(points, normals): supporting real hyperplanes at Newton-projected
        boundary points of a fixed deterministic direction set.  Normals are
        the holomorphic gradients, so Re <z - b, N> < 0 on the open domain."""
        if self._hyperplanes is not None and self._hyperplanes[0].shape[0] == n:
            return self._hyperplanes[0], self._hyperplanes[1]
        rho = self._rho_or_siegel()
        dirs = SeededSampler(_DIRECTION_SEED, self.dimension).complex_sphere(n)
        pts = np.array([self.boundary_point_toward(d) for d in dirs])
        normals = np.array([np.conj(rho.holomorphic_gradient(p)) for p in pts])
        object.__setattr__(self, "_hyperplanes", (pts, normals))
        return pts, normals


def _to_real(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag])


def _to_complex(x: np.ndarray) -> np.ndarray:
    n = x.size // 2
    return x[:n] + 1j * x[n:]


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def _unit_index(q: int, j: int, power: int = 1) -> Tuple[int, ...]:
    v = [0] * q
    v[j] = power
    return tuple(v)


def ball_domain(q: int) -> DomainSpec:
    terms = {(( _unit_index(q, j)), (_unit_index(q, j))): 1.0 for j in range(q)}
    terms[(tuple([0] * q), tuple([0] * q))] = -1.0
    return DomainSpec(kind="ball", dimension=q, rho=DefiningPolynomial(q, terms),
                      center=np.zeros(q, dtype=complex), circumradius=1.0, balanced=True)


def siegel_domain(q: int) -> DomainSpec:
    base = np.zeros(q, dtype=complex)
    base[0] = 1j
    return DomainSpec(kind="siegel", dimension=q, rho=None, center=base,
                      circumradius=np.inf, balanced=False, bounded=False)


def egg_domain() -> DomainSpec:
    q = 2
    terms = {
        ((1, 0), (1, 0)): 1.0,
        ((0, 2), (0, 2)): 1.0,
        ((0, 0), (0, 0)): -1.0,
    }
    return DomainSpec(kind="egg", dimension=q, rho=DefiningPolynomial(q, terms),
                      center=np.zeros(q, dtype=complex), circumradius=np.sqrt(1.25),
                      balanced=True)


def ellipsoid_domain(coefficients: Sequence[float]) -> DomainSpec:
    coeffs = np.asarray(coefficients, dtype=float)
    if np.any(coeffs <= 0):
        raise PreconditionError("ellipsoid coefficients must be positive")
    q = coeffs.size
    terms = {((_unit_index(q, j)), (_unit_index(q, j))): float(coeffs[j]) for j in range(q)}
    terms[(tuple([0] * q), tuple([0] * q))] = -1.0
    return DomainSpec(kind="ellipsoid", dimension=q, rho=DefiningPolynomial(q, terms),
                      center=np.zeros(q, dtype=complex),
                      circumradius=float(1.0 / np.sqrt(coeffs.min())),
                      balanced=True, coefficients=coeffs)


def custom_domain(q: int, terms: Dict, circumradius: float,
                  center=None, balanced: bool = False) -> DomainSpec:
    center = np.zeros(q, dtype=complex) if center is None else as_cpoint(center, q)
    return DomainSpec(kind="custom", dimension=q, rho=DefiningPolynomial(q, terms),
                      center=center, circumradius=float(circumradius), balanced=balanced)


# ---------------------------------------------------------------------------
# strong convexity
# ---------------------------------------------------------------------------

def strong_convexity_check(domain: DomainSpec, zeta) -> Tuple[bool, float]:
    """Positive-definiteness of the real Hessian of rho on the real tangent
    space at the (Newton-projected) boundary point; returns the minimal
    tangential eigenvalue."""
    rho = domain._rho_or_siegel()
    zeta = domain._newton_project(as_cpoint(zeta, domain.dimension), tol=1e-14)
    g = rho.real_gradient(zeta)
    gn = np.linalg.norm(g)
    if gn < 1e-10:
        raise DegenerateBoundaryError("defining-function gradient vanishes at the boundary point")
    H = rho.real_hessian(zeta)
    # orthonormal basis of the real tangent space (complement of g)
    n = g.size
    M = np.concatenate([(g / gn)[:, None], np.eye(n)], axis=1)
    Q, _ = np.linalg.qr(M)
    B = Q[:, 1:n]
    eigs = np.linalg.eigvalsh(B.T @ H @ B)
    lam = float(eigs.min())
    return lam > 1e-10, lam


# ---------------------------------------------------------------------------
# sandwich bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SandwichBound:
    lower: float
    upper: float
    lower_witness: dict
    upper_witness: dict

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


def _halfplane_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kobayashi distance of {Re < 0} between arrays of values."""
    ua = -1j * a
    ub = -1j * b
    s = 4.0 * ua.imag * ub.imag / np.abs(ua - np.conj(ub)) ** 2
    return _k_from_s(s)


def _disc_distance(z: complex, w: complex, c: complex, r: float) -> float:
    a = np.array([(z - c) / r], dtype=complex)
    b = np.array([(w - c) / r], dtype=complex)
    s = (1.0 - np.abs(a) ** 2) * (1.0 - np.abs(b) ** 2) / np.abs(1.0 - a * np.conj(b)) ** 2
    return float(_k_from_s(s)[0])


def _slice_disc_radius(domain: DomainSpec, z: np.ndarray, d: np.ndarray,
                       c: complex, n_angles: int = 64, r_max: float = None) -> float:
    """Largest r with {z + (c + r e^{i theta}) d} inside the domain, by a
    vectorized bisection over sampled angles, shrunk by the inscribed-polygon
    factor cos(pi/n) which convexity makes sound."""
    if r_max is None:
        r_max = 4.0 * domain.circumradius / max(np.linalg.norm(d), 1e-30)
    thetas = np.exp(2j * np.pi * np.arange(n_angles) / n_angles)
    lo = np.zeros(n_angles)
    hi = np.full(n_angles, r_max)
    base = z + c * d
    if not bool(np.atleast_1d(domain.contains(base))[0]):
        return 0.0
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        pts = base[None, :] + (mid * thetas)[:, None] * d[None, :]
        inside = np.atleast_1d(domain.contains(pts))
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return float(lo.min()) * np.cos(np.pi / n_angles)


def _upper_disc_bound(domain: DomainSpec, z: np.ndarray, w: np.ndarray):
    """min over inscribed slice discs containing both points of the disc
    distance; +inf when no candidate disc contains both (thin slices)."""
    d = w - z

    def induced(cvec) -> float:
        c = complex(cvec[0], cvec[1])
        r = _slice_disc_radius(domain, z, d, c)
        if r <= 0 or abs(0 - c) >= r or abs(1 - c) >= r:
            return np.inf
        return _disc_distance(0.0, 1.0, c, r)

    best_val = np.inf
    best_c = None
    for c0 in (0.5, 0.0, 1.0, 0.25, 0.75):
        v = induced(np.array([c0, 0.0]))
        if v < best_val:
            best_val, best_c = v, np.array([c0, 0.0])
    if best_c is not None:
        res = optimize.minimize(induced, best_c, method="Nelder-Mead",
                                options={"maxiter": 120, "xatol": 1e-10, "fatol": 1e-12})
        if res.fun < best_val:
            best_val, best_c = float(res.fun), res.x
    if not np.isfinite(best_val):
        return np.inf, {"kind": "no-containing-disc"}
    return float(best_val), {"kind": "slice-disc",
                             "center": [float(best_c[0]), float(best_c[1])]}


def _upper_chain(domain: DomainSpec, z: np.ndarray, w: np.ndarray, depth: int):
    """Triangle-inequality chaining of disc bounds over a bisected segment,
    for pairs whose joint slice is too thin for a single containing disc."""
    val, _ = _upper_disc_bound(domain, z, w)
    if np.isfinite(val):
        return val, 1
    if depth <= 0:
        return np.inf, 0
    mid = 0.5 * (z + w)
    left, nl = _upper_chain(domain, z, mid, depth - 1)
    if not np.isfinite(left):
        return np.inf, 0
    right, nr = _upper_chain(domain, mid, w, depth - 1)
    if not np.isfinite(right):
        return np.inf, 0
    return left + right, nl + nr


def kobayashi_sandwich(domain: DomainSpec, z, w, n_hyperplanes: int = 64,
                       use_exact: bool = True) -> SandwichBound:
    """Certified bounds lower <= k_Omega(z,w) <= upper.

    On kinds with an exact metric both bounds collapse to the exact value
    (witnessed as such); pass use_exact=False to exercise the generic
    machinery on those domains.
    """
    z = as_cpoint(z, domain.dimension)
    w = as_cpoint(w, domain.dimension)
    domain.require_interior(z, "z")
    domain.require_interior(w, "w")
    if np.allclose(z, w, atol=1e-15):
        return SandwichBound(0.0, 0.0, {"kind": "coincident"}, {"kind": "coincident"})
    if domain.has_exact_metric and use_exact:
        d = float(domain.exact_distance(z, w))
        return SandwichBound(d, d, {"kind": "exact"}, {"kind": "exact"})

    # ---- lower bound -----------------------------------------------------
    lower = 0.0
    lower_witness = {"kind": "none"}
    pts, normals = domain.supporting_hyperplanes(n_hyperplanes)
    Lz = np.sum((z[None, :] - pts) * np.conj(normals), axis=1)
    Lw = np.sum((w[None, :] - pts) * np.conj(normals), axis=1)
    ok = (Lz.real < 0) & (Lw.real < 0)
    if ok.any():
        vals = _halfplane_distance(Lz[ok], Lw[ok])
        j = int(np.argmax(vals))
        if float(vals[j]) > lower:
            lower = float(vals[j])
            lower_witness = {"kind": "half-plane",
                             "boundary_point": pts[ok][j].tolist()}
    if domain.balanced:
        dirs = [w - z]
        dirs += [np.eye(domain.dimension, dtype=complex)[j] for j in range(domain.dimension)]
        gz = domain._rho_or_siegel().holomorphic_gradient(0.5 * (z + w))
        if np.linalg.norm(gz) > 1e-12:
            dirs.append(np.conj(gz))
        for u in dirs:
            nu = np.linalg.norm(u)
            if nu < 1e-14:
                continue
            u = u / nu
            s = domain.functional_radius(u)
            a, b = complex(z @ np.conj(u)), complex(w @ np.conj(u))
            if max(abs(a), abs(b)) >= s:
                continue
            val = _disc_distance(a, b, 0.0, s)
            if val > lower:
                lower = val
                lower_witness = {"kind": "functional-disc", "direction": u.tolist(),
                                 "radius": s}

    # ---- upper bound -----------------------------------------------------
    upper, upper_witness = _upper_disc_bound(domain, z, w)
    if not np.isfinite(upper):
        chained, segments = _upper_chain(domain, z, w, depth=12)
        if np.isfinite(chained):
            upper = chained
            upper_witness = {"kind": "disc-chain", "segments": segments}
        else:
            upper_witness = {"kind": "no-containing-disc"}

    if lower > upper + 1e-9:
        raise InvariantViolationError(
            f"sandwich crossed: lower {lower:.12f} > upper {upper:.12f}",
            witness={"z": z.tolist(), "w": w.tolist()})
    lower = min(lower, upper)
    return SandwichBound(lower, upper, lower_witness, upper_witness)


# ---------------------------------------------------------------------------
# squeezing function lower bounds
# ---------------------------------------------------------------------------

@dataclass
class SqueezeCertificate:
    """Verified witness S_Omega(z) >= inner_radius.

    embed = mobius o affine with affine(w) = linear @ (w - shift); the image
    of the domain lies in B^q (checked on boundary samples) and preimages of
    the sphere of radius inner_radius lie in the domain (checked by sampling).
    """

    inner_radius: float
    description: str
    shift: np.ndarray
    linear: np.ndarray
    mobius: Optional[BallAutomorphism]
    witness: dict

    def embed(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=complex))
        out = (pts - self.shift[None, :]) @ self.linear.T
        if self.mobius is not None:
            out = self.mobius(out)
        return out

    def embed_inverse(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=complex))
        if self.mobius is not None:
            pts = self.mobius.inverse()(pts)
        return pts @ np.linalg.inv(self.linear).T + self.shift[None, :]


def _verify_certificate(domain: DomainSpec, cert: SqueezeCertificate,
                        n_samples: int = 10_000, seed: int = 7) -> float:
    """Re-verify: image of boundary samples inside B^q, then bisect the
    largest sphere whose preimage stays inside the domain."""
    boundary = domain.boundary_samples(min(n_samples, 4096))
    inner = domain.center[None, :] + (1 - 1e-9) * (boundary - domain.center[None, :])
    img_norm = np.linalg.norm(cert.embed(inner), axis=1).max()
    if img_norm > 1.0 + 1e-9:
        return 0.0
    sphere = SeededSampler(seed, domain.dimension).complex_sphere(n_samples)
    lo, hi = 0.0, 1.0 - 1e-12
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        pre = cert.embed_inverse(mid * sphere)
        if np.all(np.atleast_1d(domain.contains(pre))):
            lo = mid
        else:
            hi = mid
    return lo


def _outer_tangent_ball(domain: DomainSpec, z: np.ndarray):
    """Smallest ball tangent at the boundary point nearest z that contains
    all boundary samples; None when no reasonable such ball exists (flat
    boundary directions make the required radius blow up)."""
    b = domain.project_to_boundary(z)
    g = domain._rho_or_siegel().real_gradient(b)
    nrm = _to_complex(g)
    nrm = nrm / np.linalg.norm(nrm)
    pts = domain.boundary_samples(2048)
    rel = pts - b[None, :]
    denom = -np.real(rel @ np.conj(nrm))  # <b - w, n> per sample
    num = np.sum(np.abs(rel) ** 2, axis=1)
    good = num > 1e-14
    if np.any(denom[good] <= 1e-12):
        return None
    req = num[good] / (2.0 * denom[good])
    R = float(req.max()) * 1.05
    if not np.isfinite(R) or R > 50.0 * domain.circumradius:
        return None
    return b - R * nrm, R


def squeeze_lower(domain: DomainSpec, z, n_verify: int = 10_000) -> SqueezeCertificate:
    """Verified lower bound for the squeezing function at z.

    Candidates: the exact ball/ellipsoid witness, the scaling embedding, and
    an outer-tangent-ball embedding recentred by a Mobius map (which is what
    drives the bound toward 1 at strongly convex boundary points).  The best
    sampled-verified candidate wins; the scaling baseline is the floor.
    """
    z = as_cpoint(z, domain.dimension)
    domain.require_interior(z)
    if not domain.bounded:
        raise PreconditionError("squeezing is defined for bounded domains")
    candidates: List[SqueezeCertificate] = []
    q = domain.dimension

    if domain.kind == "ball":
        candidates.append(SqueezeCertificate(
            inner_radius=1.0, description="ball-automorphism",
            shift=np.zeros(q, dtype=complex), linear=np.eye(q, dtype=complex),
            mobius=mobius_to_origin(z), witness={"exact": True}))
    elif domain.kind == "ellipsoid":
        T = np.diag(np.sqrt(domain.coefficients)).astype(complex)
        candidates.append(SqueezeCertificate(
            inner_radius=1.0, description="ellipsoid-linear-automorphism",
            shift=np.zeros(q, dtype=complex), linear=T,
            mobius=mobius_to_origin(T @ z), witness={"exact": True}))

    dist = domain.boundary_distance(z)
    reach = float(np.linalg.norm(z - domain.center)) + domain.circumradius
    candidates.append(SqueezeCertificate(
        inner_radius=max(dist / reach, 0.0), description="scaling",
        shift=z.copy(), linear=np.eye(q, dtype=complex) / reach,
        mobius=None, witness={}))

    tangent = _outer_tangent_ball(domain, z)
    if tangent is not None:
        c, R = tangent
        a = (z - c) / R
        if np.linalg.norm(a) < 1.0:
            candidates.append(SqueezeCertificate(
                inner_radius=0.0, description="outer-ball-mobius",
                shift=c, linear=np.eye(q, dtype=complex) / R,
                mobius=mobius_to_origin(a), witness={}))

    best = None
    for cand in candidates:
        if cand.witness.get("exact"):
            verified = 1.0
        else:
            verified = _verify_certificate(domain, cand, n_samples=n_verify)
        cand.inner_radius = max(float(verified), cand.inner_radius if cand.description == "scaling" else 0.0)
        cand.witness.update({"verified_radius": float(verified), "n_samples": n_verify})
        if best is None or cand.inner_radius > best.inner_radius:
            best = cand
    return best


@dataclass(frozen=True)
class SqueezeTrendPoint:
    boundary_distance: float
    lower_bound: float
    description: str


@dataclass(frozen=True)
class SqueezeTrend:
    points: Tuple[SqueezeTrendPoint, ...]
    center_strongly_convex: bool
    flag: Optional[str]


def squeeze_trend(domain: DomainSpec, zeta, n_points: int = 8,
                  start_distance: float = 0.3, ratio: float = 0.5,
                  ray=None) -> SqueezeTrend:
    """squeeze_lower along a geometric approach to the boundary point zeta.

    At weakly convex centers the trend is recorded and flagged; no limit is
    asserted anywhere (only the trend data is returned)."""
    zeta = domain._newton_project(as_cpoint(zeta, domain.dimension))
    if ray is None:
        g = domain._rho_or_siegel().real_gradient(zeta)
        inward = -_to_complex(g)
        inward = inward / np.linalg.norm(inward)
    else:
        inward = as_cpoint(ray, domain.dimension)
        inward = inward / np.linalg.norm(inward)
    ok, _ = strong_convexity_check(domain, zeta)
    pts = []
    for j in range(n_points):
        d = start_distance * ratio ** j
        zj = zeta + d * inward
        if not bool(np.atleast_1d(domain.contains(zj))[0]):
            continue
        cert = squeeze_lower(domain, zj, n_verify=4096)
        pts.append(SqueezeTrendPoint(boundary_distance=float(domain.boundary_distance(zj)),
                                     lower_bound=cert.inner_radius,
                                     description=cert.description))
    flag = None if ok else "weakly convex center"
    return SqueezeTrend(points=tuple(pts), center_strongly_convex=ok, flag=flag)


# ---------------------------------------------------------------------------
# horosphere values on general domains
# ---------------------------------------------------------------------------

def horo_value_general(domain: DomainSpec, pole, center, z,
                       j_max: int = 16, window: int = 4, tol: float = 2e-3):
    """exp(lim [k(z,w_j) - k(p,w_j)]) along w_j = zeta + 2^-j (pole - zeta).

    Distances come from the exact metric when available and from sandwich
    midpoints otherwise; the sandwich gap widens the convergence tolerance.
    Raises NonConvergentLimitError with the partial evidence on failure.
    """
    p = as_cpoint(pole, domain.dimension)
    z = as_cpoint(z, domain.dimension)
    zeta = domain._newton_project(as_cpoint(center, domain.dimension))
    domain.require_interior(p, "pole")
    domain.require_interior(z, "z")
    seq = []
    gaps = 0.0
    for j in range(1, j_max + 1):
        wj = zeta + 2.0 ** (-j) * (p - zeta)
        dz, g1 = domain.distance_with_gap(z, wj)
        dp, g2 = domain.distance_with_gap(p, wj)
        seq.append(dz - dp)
        gaps = max(gaps, g1 + g2)
    report = detect_limit(seq, window=window, tol=tol + gaps)
    if not report.converged:
        raise NonConvergentLimitError("boundary-approach sequence did not settle",
                                      report=report)
    return float(np.exp(report.limit)), report, gaps
