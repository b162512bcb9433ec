"""Boundary normal forms: truncated series algebra, the 4th-order flattening
chart at a strongly convex boundary point, the projective push toward a
horosphere, and certified inclusion / distance-comparison experiments.

The chart is produced as the inverse polynomial map psi (w -> z - zeta) of
degree <= 4 solving, coefficientwise through degree 4,

    rho(zeta + psi(w)) = (1 + mu(w, wbar)) (-Im w1 + |w'|^2 - P4),

with mu a real series vanishing at 0 and P4 a real homogeneous quartic in
(Re w1, w', wbar').  The linear part is pinned analytically (normal direction
to the w1 axis, tangential Levi block to the identity); the remaining
coefficients come from one linear-least-squares solve, which realizes the
classical removability of the cubic terms (minimal-norm tie break).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .ball import ball_distance, horo_value
from .domains import DomainSpec, strong_convexity_check
from .errors import (
    ChartConstructionError,
    InsufficientPrecisionError,
    InvalidRadiusError,
    NonInvertibleSubstitutionError,
    PreconditionError,
)
from .numerics import SeededSampler, as_cpoint


# ---------------------------------------------------------------------------
# truncated multivariate series in (w, wbar)
# ---------------------------------------------------------------------------

class TruncatedSeries:
    """Dense-dict polynomial in q holomorphic and q conjugate symbols,
    truncated at a fixed total degree; multiplication and substitution count
    the mass they discard."""

    __slots__ = ("q", "max_degree", "terms", "discarded")

    def __init__(self, q: int, max_degree: int = 4,
                 terms: Optional[Dict] = None, discarded: float = 0.0):
        self.q = q
        self.max_degree = max_degree
        self.terms: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], complex] = {}
        self.discarded = float(discarded)
        if terms:
            for (a, b), c in terms.items():
                self._add_term(tuple(a), tuple(b), complex(c))

    # -- basics --------------------------------------------------------------
    def _add_term(self, a, b, c):
        if abs(c) == 0.0:
            return
        if sum(a) + sum(b) > self.max_degree:
            self.discarded += abs(c)
            return
        key = (a, b)
        val = self.terms.get(key, 0.0) + c
        if abs(val) < 1e-300:
            self.terms.pop(key, None)
        else:
            self.terms[key] = val

    @staticmethod
    def constant(q: int, c: complex, max_degree: int = 4) -> "TruncatedSeries":
        e = tuple([0] * q)
        return TruncatedSeries(q, max_degree, {(e, e): c})

    @staticmethod
    def symbol(q: int, j: int, conjugated: bool = False, max_degree: int = 4) -> "TruncatedSeries":
        a = [0] * q
        b = [0] * q
        (b if conjugated else a)[j] = 1
        return TruncatedSeries(q, max_degree, {(tuple(a), tuple(b)): 1.0})

    def copy(self) -> "TruncatedSeries":
        return TruncatedSeries(self.q, self.max_degree, dict(self.terms), self.discarded)

    # -- ring operations -------------------------------------------------------
    def __add__(self, other):
        out = self.copy()
        if isinstance(other, TruncatedSeries):
            out.discarded += other.discarded
            for (a, b), c in other.terms.items():
                out._add_term(a, b, c)
        else:
            e = tuple([0] * self.q)
            out._add_term(e, e, complex(other))
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (other * (-1.0) if isinstance(other, TruncatedSeries) else -complex(other))

    def __mul__(self, other):
        if not isinstance(other, TruncatedSeries):
            out = TruncatedSeries(self.q, self.max_degree, discarded=self.discarded * abs(complex(other)))
            for (a, b), c in self.terms.items():
                out._add_term(a, b, c * complex(other))
            return out
        out = TruncatedSeries(self.q, self.max_degree,
                              discarded=self.discarded + other.discarded)
        for (a1, b1), c1 in self.terms.items():
            for (a2, b2), c2 in other.terms.items():
                a = tuple(x + y for x, y in zip(a1, a2))
                b = tuple(x + y for x, y in zip(b1, b2))
                out._add_term(a, b, c1 * c2)
        return out

    __rmul__ = __mul__

    def conjugate(self) -> "TruncatedSeries":
        out = TruncatedSeries(self.q, self.max_degree, discarded=self.discarded)
        for (a, b), c in self.terms.items():
            out._add_term(b, a, np.conj(c))
        return out

    # -- structure -------------------------------------------------------------
    def homogeneous_part(self, degree: int) -> "TruncatedSeries":
        out = TruncatedSeries(self.q, self.max_degree)
        for (a, b), c in self.terms.items():
            if sum(a) + sum(b) == degree:
                out._add_term(a, b, c)
        return out

    def coefficient(self, a, b) -> complex:
        return complex(self.terms.get((tuple(a), tuple(b)), 0.0))

    def sup_coefficient(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def reality_defect(self) -> float:
        """sup |c(a,b) - conj(c(b,a))|: zero for real-valued series."""
        worst = 0.0
        for (a, b), c in self.terms.items():
            worst = max(worst, abs(c - np.conj(self.terms.get((b, a), 0.0))))
        return worst

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
        return out[0] if out.size == 1 else out

    # -- substitution -----------------------------------------------------------
    def substitute(self, components: Sequence["TruncatedSeries"]) -> "TruncatedSeries":
        """Holomorphic substitution: w_j -> components[j] (series in new
        holomorphic symbols only), wbar_j -> conjugate(components[j]).

        The substitution's linear part must be invertible.
        """
        q_new = components[0].q
        L = np.zeros((self.q, q_new), dtype=complex)
        for i, comp in enumerate(components):
            for j in range(q_new):
                a = [0] * q_new
                a[j] = 1
                L[i, j] = comp.coefficient(a, [0] * q_new)
            for (a, b), _ in comp.terms.items():
                if sum(b):
                    raise NonInvertibleSubstitutionError(
                        "substitution components must be holomorphic")
        if self.q == q_new:
            s = np.linalg.svd(L, compute_uv=False)
            if s.min() < 1e-12 * max(s.max(), 1.0):
                raise NonInvertibleSubstitutionError(
                    "substitution has a singular linear part")
        conj_components = [c.conjugate() for c in components]
        out = TruncatedSeries(q_new, self.max_degree, discarded=self.discarded)
        cache: Dict[Tuple[int, int, bool], TruncatedSeries] = {}

        def power(j: int, e: int, conjugated: bool) -> TruncatedSeries:
            key = (j, e, conjugated)
            if key not in cache:
                basis = conj_components[j] if conjugated else components[j]
                acc = TruncatedSeries.constant(q_new, 1.0, self.max_degree)
                for _ in range(e):
                    acc = acc * basis
                cache[key] = acc
            return cache[key]

        for (a, b), c in self.terms.items():
            term = TruncatedSeries.constant(q_new, c, self.max_degree)
            for j, e in enumerate(a):
                if e:
                    term = term * power(j, e, False)
            for j, e in enumerate(b):
                if e:
                    term = term * power(j, e, True)
            out = out + term
        return out


def hol_monomials(q: int, degree: int) -> List[Tuple[int, ...]]:
    """Exponent multi-indices of holomorphic monomials of exact degree."""
    out = []
    for combo in itertools.combinations_with_replacement(range(q), degree):
        a = [0] * q
        for j in combo:
            a[j] += 1
        out.append(tuple(a))
    return out


def series_from_polynomial(q: int, terms: Dict, max_degree: int = 4) -> TruncatedSeries:
    return TruncatedSeries(q, max_degree, terms)


def recenter(series: TruncatedSeries, zeta: np.ndarray) -> TruncatedSeries:
    """Exact shift z = zeta + u: expands each monomial binomially."""
    q = series.q
    comps = []
    for j in range(q):
        s = TruncatedSeries.symbol(q, j, max_degree=series.max_degree)
        comps.append(s + complex(zeta[j]))
    return series.substitute(comps)


# ---------------------------------------------------------------------------
# normal-form chart
# ---------------------------------------------------------------------------

def _normal_form_base(q: int, max_degree: int = 4) -> TruncatedSeries:
    """-Im w1 + |w'|^2 as a series."""
    w1 = TruncatedSeries.symbol(q, 0, max_degree=max_degree)
    out = (0.5j) * w1 + (-0.5j) * w1.conjugate()
    for j in range(1, q):
        wj = TruncatedSeries.symbol(q, j, max_degree=max_degree)
        out = out + wj * wj.conjugate()
    return out


def _p4_parameterization(q: int) -> List[Tuple[Tuple[int, ...], Tuple[int, ...], int, str]]:
    """Independent real parameters of a real homogeneous quartic in
    (Re w1, w', wbar'): entries (alpha, beta, t, kind) with kind 'real'
    (beta == alpha-partner, one real coefficient) or 'complex' (two reals)."""
    params = []
    seen = set()
    for t in range(5):
        for beta in _prime_monomials(q - 1, 4 - t):
            for gamma in _prime_monomials(q - 1, 4 - t - sum(beta)):
                if sum(beta) + sum(gamma) + t != 4:
                    continue
                key = (t, beta, gamma)
                mirror = (t, gamma, beta)
                if mirror in seen:
                    continue
                seen.add(key)
                if beta == gamma:
                    params.append((beta, gamma, t, "real"))
                else:
                    params.append((beta, gamma, t, "complex"))
    return params


def _prime_monomials(nvars: int, max_deg: int) -> List[Tuple[int, ...]]:
    out = []
    for d in range(max_deg + 1):
        if nvars == 0:
            if d == 0:
                out.append(())
            continue
        out.extend(hol_monomials(nvars, d))
    return out


def _p4_series(q: int, theta: np.ndarray, params, max_degree: int = 4) -> TruncatedSeries:
    """Assemble P4 from its parameter vector; Re w1 powers are expanded into
    (w1 + wbar1)/2."""
    x = 0.5 * (TruncatedSeries.symbol(q, 0, max_degree=max_degree)
               + TruncatedSeries.symbol(q, 0, conjugated=True, max_degree=max_degree))
    xpow = [TruncatedSeries.constant(q, 1.0, max_degree)]
    for _ in range(4):
        xpow.append(xpow[-1] * x)
    out = TruncatedSeries(q, max_degree)
    idx = 0
    for beta, gamma, t, kind in params:
        if kind == "real":
            coeff = complex(theta[idx]); idx += 1
        else:
            coeff = complex(theta[idx], theta[idx + 1]); idx += 2
        mono = xpow[t]
        for j, e in enumerate(beta):
            for _ in range(e):
                mono = mono * TruncatedSeries.symbol(q, j + 1, max_degree=max_degree)
        for j, e in enumerate(gamma):
            for _ in range(e):
                mono = mono * TruncatedSeries.symbol(q, j + 1, conjugated=True, max_degree=max_degree)
        out = out + mono * coeff
        if kind == "complex":
            mirror = xpow[t]
            for j, e in enumerate(gamma):
                for _ in range(e):
                    mirror = mirror * TruncatedSeries.symbol(q, j + 1, max_degree=max_degree)
            for j, e in enumerate(beta):
                for _ in range(e):
                    mirror = mirror * TruncatedSeries.symbol(q, j + 1, conjugated=True, max_degree=max_degree)
            out = out + mirror * np.conj(coeff)
    return out


def _mu_parameterization(q: int) -> List[Tuple[Tuple[int, ...], Tuple[int, ...], str]]:
    """Independent real parameters of a real series of degrees 1..3."""
    params = []
    seen = set()
    for d in range(1, 4):
        for da in range(d + 1):
            for a in hol_monomials(q, da):
                for b in hol_monomials(q, d - da):
                    if (b, a) in seen:
                        continue
                    seen.add((a, b))
                    params.append((a, b, "real" if a == b else "complex"))
    return params


def _mu_series(q: int, theta: np.ndarray, params, max_degree: int = 4) -> TruncatedSeries:
    out = TruncatedSeries(q, max_degree)
    idx = 0
    for a, b, kind in params:
        if kind == "real":
            c = complex(theta[idx]); idx += 1
            out._add_term(a, b, c)
        else:
            c = complex(theta[idx], theta[idx + 1]); idx += 2
            out._add_term(a, b, c)
            out._add_term(b, a, np.conj(c))
    return out


@dataclass
class NormalFormChart:
    """Degree-4 flattening data at a boundary point.

    psi_components: the inverse chart w -> z - zeta (holomorphic series);
    linear_forward: A with w = A (z - zeta) + O(2); P4 with constants C, D
    of the quartic sandwich; mu: the defining-function multiplier; remainder
    data certify a validity radius in w-coordinates.
    """

    zeta: np.ndarray
    psi_components: List[TruncatedSeries]
    linear_forward: np.ndarray
    P4: TruncatedSeries
    mu: TruncatedSeries
    C: float
    D: float
    residual: float
    remainder_mass: float
    validity_radius: float
    verification: dict = field(default_factory=dict)

    @property
    def q(self) -> int:
        return self.zeta.size

    def psi(self, w) -> np.ndarray:
        """Inverse chart: w-coordinates -> domain points."""
        w = np.atleast_2d(np.asarray(w, dtype=complex))
        cols = [comp(w) for comp in self.psi_components]
        return self.zeta[None, :] + np.stack([np.atleast_1d(c) for c in cols], axis=1)

    def forward(self, z, tol: float = 1e-13, max_iter: int = 60) -> np.ndarray:
        """Chart map z -> w by Newton inversion of the polynomial psi."""
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        w = (z - self.zeta[None, :]) @ self.linear_forward.T
        for _ in range(max_iter):
            err = self.psi(w) - z
            if np.max(np.abs(err)) < tol:
                break
            for i in range(w.shape[0]):
                J = self._psi_jacobian(w[i])
                w[i] = w[i] - np.linalg.solve(J, err[i])
        return w

    def _psi_jacobian(self, w: np.ndarray) -> np.ndarray:
        q = self.q
        J = np.zeros((q, q), dtype=complex)
        for i, comp in enumerate(self.psi_components):
            for (a, b), c in comp.terms.items():
                for j in range(q):
                    if a[j] == 0:
                        continue
                    d = list(a)
                    d[j] -= 1
                    term = c * a[j]
                    for l, e in enumerate(d):
                        if e:
                            term = term * w[l] ** e
                    J[i, j] += term
        return J


def fefferman_chart(domain: DomainSpec, zeta, coeff_tol: float = 1e-9) -> NormalFormChart:
    """4th-order boundary flattening at a strongly convex boundary point."""
    q = domain.dimension
    zeta = domain._newton_project(as_cpoint(zeta, q))
    ok, lam_min = strong_convexity_check(domain, zeta)
    if not ok:
        raise PreconditionError(
            f"boundary point is not strongly convex (min tangential eigenvalue {lam_min:.3e})")
    rho_series = TruncatedSeries(q, 4, domain.rho.terms)
    rho_c = recenter(rho_series, zeta)

    # pinned linear part, built through its inverse B (u = B w):
    #   column 0: the complex normal scaled so that row 0 of A is -2i grad
    #   (making the linear term of rho exactly -Im w1);
    #   columns 1..q-1: an H-orthonormal basis of the complex tangent space,
    #   H_{jk} = rho_{z_j zbar_k}(zeta), so the tangential Hermitian
    #   quadratic part becomes exactly |w'|^2.
    grad = domain.rho.holomorphic_gradient(zeta)
    H = np.zeros((q, q), dtype=complex)
    for i in range(q):
        di = domain.rho.diff(i, False)
        for j in range(q):
            H[i, j] = di.diff(j, True).eval_complex(zeta)
    M = np.concatenate([np.conj(grad)[:, None] / np.linalg.norm(grad),
                        np.eye(q, dtype=complex)], axis=1)
    Qb, _ = np.linalg.qr(M)
    P = Qb[:, 1:q]                       # columns: complex tangent basis
    G0 = P.T @ H @ np.conj(P)            # Hermitian form b^T H conj(c) on the tangent
    G0 = 0.5 * (G0 + G0.conj().T)
    evals = np.linalg.eigvalsh(G0)
    if np.any(evals <= 0):
        raise PreconditionError("tangential Levi form is not positive definite")
    L = np.linalg.cholesky(G0)
    B = np.zeros((q, q), dtype=complex)
    B[:, 0] = 1j * np.conj(grad) / (2.0 * np.linalg.norm(grad) ** 2)
    B[:, 1:] = P @ np.linalg.inv(L).T
    A = np.linalg.inv(B)

    mu_params = _mu_parameterization(q)
    p4_params = _p4_parameterization(q)
    psi_monos = [(d, a) for d in (2, 3, 4) for a in hol_monomials(q, d)]
    n_psi = 2 * q * len(psi_monos)
    n_mu = sum(1 if k == "real" else 2 for *_, k in mu_params)
    n_p4 = sum(1 if k == "real" else 2 for *_, k in p4_params)
    nf_base = _normal_form_base(q)

    def build_psi(theta_psi) -> List[TruncatedSeries]:
        comps = []
        idx = 0
        for i in range(q):
            s = TruncatedSeries(q, 4)
            for j in range(q):
                a = [0] * q
                a[j] = 1
                s._add_term(tuple(a), tuple([0] * q), B[i, j])
            for d, a in psi_monos:
                c = complex(theta_psi[idx], theta_psi[idx + 1])
                idx += 2
                s._add_term(a, tuple([0] * q), c)
            comps.append(s)
        return comps

    def assemble(theta):
        comps = build_psi(theta[:n_psi])
        mu = _mu_series(q, theta[n_psi:n_psi + n_mu], mu_params)
        p4 = _p4_series(q, theta[n_psi + n_mu:], p4_params)
        lhs = rho_c.substitute(comps)
        rhs = (TruncatedSeries.constant(q, 1.0) + mu) * (nf_base - p4)
        return comps, mu, p4, lhs - rhs

    # fixed-length residual over the complete degree-2..4 monomial basis
    basis = []
    for d in (2, 3, 4):
        for da in range(d + 1):
            for a in hol_monomials(q, da):
                for b in hol_monomials(q, d - da):
                    basis.append((a, b))

    def residual_eq(theta):
        *_, diff = assemble(theta)
        out = np.zeros(2 * len(basis))
        for i, (a, b) in enumerate(basis):
            c = diff.coefficient(a, b)
            out[2 * i] = c.real
            out[2 * i + 1] = c.imag
        return out

    def residual_penalized(theta):
        # soft preference for the P4-minimal representative: among exact
        # solutions the penalty picks the canonical quartic
        return np.concatenate([residual_eq(theta), 1e-3 * theta[n_psi + n_mu:]])

    theta0 = np.zeros(n_psi + n_mu + n_p4)
    sol1 = optimize.least_squares(residual_penalized, theta0, method="lm",
                                  xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    # polish the equations to machine precision from the canonical start
    sol = optimize.least_squares(residual_eq, sol1.x, method="lm",
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    res = float(np.max(np.abs(residual_eq(sol.x))))
    comps, mu, p4, diff = assemble(sol.x)
    if res > coeff_tol:
        bad = {f"{a}|{b}": complex(diff.coefficient(a, b))
               for (a, b) in basis if abs(diff.coefficient(a, b)) > coeff_tol}
        raise ChartConstructionError(
            f"normal-form reduction left coefficients up to {res:.3e}",
            coefficients=bad)

    # constants C, D on the direction sphere (10% safety margin)
    sampler = SeededSampler(41, q)
    dirs = sampler.complex_sphere(4096)
    x = dirs[:, 0].real
    wp = dirs[:, 1:]
    denom = np.abs(x) ** 4 + np.sum(np.abs(wp) ** 2, axis=1) ** 2
    pts = np.concatenate([x[:, None].astype(complex), wp], axis=1)
    p4_vals = np.real(np.atleast_1d(p4(pts)))
    ratio = p4_vals / np.maximum(denom, 1e-30)
    rmin = float(ratio.min())
    C = 0.9 * rmin if rmin >= 0 else 1.1 * rmin
    D = 2.0 * 1.1 * max(float(ratio.max()), 1e-12)

    # remainder above degree 4: recompose at degree 8 and sum the mass of
    # degrees 5..8 plus whatever the truncation discarded (conservative)
    rho8 = TruncatedSeries(q, 8, domain.rho.terms)
    rho8_c = recenter(rho8, zeta)
    comps8 = []
    for comp in comps:
        c8 = TruncatedSeries(q, 8)
        for (a, b), c in comp.terms.items():
            c8._add_term(a, b, c)
        comps8.append(c8)
    full = rho8_c.substitute(comps8)
    tail_mass = full.discarded
    for (a, b), c in full.terms.items():
        if sum(a) + sum(b) >= 5:
            tail_mass += abs(c)
    # validity: remainder mass r^5 must stay below a tenth of the linear scale r
    r = min(0.5, float((0.1 / max(tail_mass, 1e-9)) ** 0.25))
    return NormalFormChart(zeta=zeta, psi_components=comps, linear_forward=A,
                           P4=p4, mu=mu, C=C, D=D, residual=res,
                           remainder_mass=tail_mass, validity_radius=r,
                           verification={"min_tangential_eigenvalue": lam_min,
                                         "linear_condition": float(np.linalg.cond(A))})


# ---------------------------------------------------------------------------
# the projective push and the localized chart
# ---------------------------------------------------------------------------

def t_push(R: float, w):
    """T(w) = (R w1/(R - i w1), R w'/(R - i w1)); maps H^q onto the
    horosphere E_{H^q}(I, 0, R) and fixes the line w1 = 0."""
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    denom = R - 1j * w[:, 0]
    out = R * w / denom[:, None]
    return out[0] if out.shape[0] == 1 and np.asarray(w).ndim == 2 else out


def t_push_inverse(R: float, eta):
    eta = np.atleast_2d(np.asarray(eta, dtype=complex))
    denom = R + 1j * eta[:, 0]
    out = R * eta / denom[:, None]
    return out


def cayley_tilde_inverse(w):
    """inverse of C~(z) = (i(1-z1)/(1+z1), z'/(1+z1)): H^q -> B^q, 0 -> e1."""
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    denom = 1j + w[:, 0]
    z = np.empty_like(w)
    z[:, 0] = (1j - w[:, 0]) / denom
    z[:, 1:] = 2j * w[:, 1:] / denom[:, None]
    return z


def cayley_tilde(z):
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    denom = 1.0 + z[:, 0]
    w = np.empty_like(z)
    w[:, 0] = 1j * (1.0 - z[:, 0]) / denom
    w[:, 1:] = z[:, 1:] / denom[:, None]
    return w


def _t_inverse_series(q: int, R: float, max_degree: int = 4) -> List[TruncatedSeries]:
    """Degree-4 Taylor components of T^{-1}(eta) = R eta/(R + i eta1)."""
    eta1 = TruncatedSeries.symbol(q, 0, max_degree=max_degree)
    geom = TruncatedSeries.constant(q, 1.0, max_degree)
    power = TruncatedSeries.constant(q, 1.0, max_degree)
    for _ in range(max_degree):
        power = power * eta1 * (-1j / R)
        geom = geom + power
    comps = []
    for j in range(q):
        comps.append(TruncatedSeries.symbol(q, j, max_degree=max_degree) * geom)
    return comps


@dataclass
class LocalizedChart:
    """chart composed with the projective push and the Cayley transform:
    domain points near zeta map to ball points near e1."""

    chart: NormalFormChart
    R: float
    series_residual: float
    mu_tilde: TruncatedSeries
    imaginary_dependence: float

    @property
    def q(self) -> int:
        return self.chart.q

    def to_ball(self, z) -> np.ndarray:
        w = self.chart.forward(z)
        return cayley_tilde_inverse(t_push(self.R, w))

    def from_ball(self, y) -> np.ndarray:
        eta = cayley_tilde(y)
        w = t_push_inverse(self.R, eta)
        return self.chart.psi(w)

    def chart_radius_of(self, y) -> np.ndarray:
        """|w|-coordinates of ball points: the chart is certified only inside
        its validity radius."""
        eta = cayley_tilde(y)
        w = t_push_inverse(self.R, eta)
        return np.linalg.norm(w, axis=1)


def _imaginary_dependence(series: TruncatedSeries) -> float:
    """sup coefficient of d/d(Im w1) applied to the series (degree >= 2)."""
    out = TruncatedSeries(series.q, series.max_degree)
    for (a, b), c in series.terms.items():
        if sum(a) + sum(b) < 2:
            continue
        if a[0]:
            d = list(a)
            d[0] -= 1
            out._add_term(tuple(d), b, 1j * c * a[0])
        if b[0]:
            d = list(b)
            d[0] -= 1
            out._add_term(a, tuple(d), -1j * c * b[0])
    return out.sup_coefficient()


def localized_chart(chart: NormalFormChart, R: float,
                    coeff_tol: float = 1e-9) -> LocalizedChart:
    """Compose the chart with T and verify the localized defining series:
    (1+mu~)(-Im eta1 + |eta'|^2 + |eta1|^2/R - P4) through degree 4."""
    if not 0 < R < 1.0 / max(chart.D, 1e-12):
        raise InvalidRadiusError(f"R must lie in (0, 1/D) = (0, {1.0 / max(chart.D, 1e-12):.3e})")
    q = chart.q
    # rho o psi as a series equals (1+mu)(NF - P4); compose with T^{-1}
    base = (TruncatedSeries.constant(q, 1.0) + chart.mu) * \
        (_normal_form_base(q) - chart.P4)
    tinv = _t_inverse_series(q, R)
    S = base.substitute(tinv)

    eta1 = TruncatedSeries.symbol(q, 0)
    target_core = _normal_form_base(q) + eta1 * eta1.conjugate() * (1.0 / R) - chart.P4

    mu_params = _mu_parameterization(q)
    basis = []
    for d in range(2, 5):
        for da in range(d + 1):
            for a in hol_monomials(q, da):
                for b in hol_monomials(q, d - da):
                    basis.append((a, b))

    def resid(theta):
        mu_t = _mu_series(q, theta, mu_params)
        diff = S - (TruncatedSeries.constant(q, 1.0) + mu_t) * target_core
        out = np.zeros(2 * len(basis))
        for i, (a, b) in enumerate(basis):
            c = diff.coefficient(a, b)
            out[2 * i] = c.real
            out[2 * i + 1] = c.imag
        return out

    n_mu = sum(1 if k == "real" else 2 for *_, k in mu_params)
    sol = optimize.least_squares(resid, np.zeros(n_mu), method="lm",
                                 xtol=1e-15, ftol=1e-15, max_nfev=8000)
    res = float(np.max(np.abs(resid(sol.x))))
    if res > coeff_tol:
        raise ChartConstructionError(
            f"localized series does not match the pushed normal form "
            f"(residual {res:.3e})", coefficients=None)
    mu_t = _mu_series(q, sol.x, mu_params)
    remainder = S - (TruncatedSeries.constant(q, 1.0) + mu_t) * \
        (_normal_form_base(q) + eta1 * eta1.conjugate() * (1.0 / R))
    imag_dep = _imaginary_dependence(remainder)
    return LocalizedChart(chart=chart, R=R, series_residual=res,
                          mu_tilde=mu_t, imaginary_dependence=imag_dep)


# ---------------------------------------------------------------------------
# certification experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InclusionCertificate:
    R: float
    rho_ball: float
    n_samples: int
    horosphere_violations: int
    ball_violations: int
    certified_R: float
    certified_rho: float


def verify_inclusions(localized: LocalizedChart, domain: DomainSpec,
                      R: Optional[float] = None, rho_ball: float = 0.3,
                      n_samples: int = 20000, seed: int = 6) -> InclusionCertificate:
    """Sample E(0, e1, R) c image(Omega) and image(Omega) n B(e1, rho) c B^q.

    Violations are data, not errors; the certified (R, rho) pair is the
    largest (by bisection) with zero violations on the sample budget."""
    from .dynamics import sample_horosphere

    q = localized.q
    R = localized.R if R is None else R

    def horo_violations(Rtest: float) -> int:
        y = sample_horosphere(q, Rtest, n_samples, seed=seed)
        keep = np.linalg.norm(y, axis=1) < 1 - 1e-11
        y = y[keep]
        radii = localized.chart_radius_of(y)
        valid = radii <= localized.chart.validity_radius
        z = localized.from_ball(y[valid])
        inside = np.atleast_1d(domain.contains(z))
        return int((~valid).sum() + (~inside).sum())

    def ball_violations(rho_test: float) -> int:
        sampler = SeededSampler(seed + 1, q)
        w = sampler.complex_ball(n_samples, radius=localized.chart.validity_radius,
                                boundary_bias=0.3)
        z = localized.chart.psi(w)
        inside = np.atleast_1d(domain.contains(z))
        y = cayley_tilde_inverse(t_push(localized.R, w[inside]))
        y = np.atleast_2d(y)
        near = np.linalg.norm(y - np.eye(q, dtype=complex)[0][None, :], axis=1) < rho_test
        return int(np.sum(np.linalg.norm(y[near], axis=1) >= 1.0))

    nh = horo_violations(R)
    nb = ball_violations(rho_ball)

    cert_R = R
    if nh:
        lo, hi = 0.0, R
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            if mid > 0 and horo_violations(mid) == 0:
                lo = mid
            else:
                hi = mid
        cert_R = lo
    cert_rho = rho_ball
    if nb:
        lo, hi = 0.0, rho_ball
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            if ball_violations(mid) == 0:
                lo = mid
            else:
                hi = mid
        cert_rho = lo
    return InclusionCertificate(R=R, rho_ball=rho_ball, n_samples=n_samples,
                                horosphere_violations=nh, ball_violations=nb,
                                certified_R=cert_R, certified_rho=cert_rho)


@dataclass(frozen=True)
class DistanceComparison:
    epsilon: float
    R_epsilon: float
    n_pairs: int
    worst_upper_margin: float
    worst_lower_margin: float
    max_gap: float


def distance_comparison(domain: DomainSpec, localized: LocalizedChart,
                        epsilon: float, n_pairs: int = 200, seed: int = 9,
                        max_halvings: int = 18) -> DistanceComparison:
    """Find R_eps with k_B(z,w) - eps <= k_Omega <= k_B(z,w) + eps for
    sampled pairs in E(0, e1, R_eps) (chart coordinates).

    Domain distances use the exact metric when available; otherwise the
    sandwich, whose gap must stay below eps (insufficient-precision error)."""
    from .dynamics import sample_horosphere

    q = localized.q
    R_try = localized.R

    def margins(Rtest: float):
        y1 = sample_horosphere(q, Rtest, n_pairs, seed=seed)
        y2 = sample_horosphere(q, Rtest, n_pairs, seed=seed + 1)
        keep = (np.linalg.norm(y1, axis=1) < 1 - 1e-11) & (np.linalg.norm(y2, axis=1) < 1 - 1e-11)
        y1, y2 = y1[keep], y2[keep]
        r1 = localized.chart_radius_of(y1)
        r2 = localized.chart_radius_of(y2)
        ok = (r1 <= localized.chart.validity_radius) & (r2 <= localized.chart.validity_radius)
        if not ok.all():
            return None
        z1 = localized.from_ball(y1)
        z2 = localized.from_ball(y2)
        dB = np.atleast_1d(ball_distance(y1, y2, guard=False))
        upper_viol = -np.inf
        lower_viol = -np.inf
        gap_max = 0.0
        for i in range(z1.shape[0]):
            d, gap = domain.distance_with_gap(z1[i], z2[i])
            gap_max = max(gap_max, gap)
            if gap > epsilon:
                raise InsufficientPrecisionError(
                    f"sandwich gap {gap:.3f} exceeds epsilon {epsilon}", gap=gap)
            upper_viol = max(upper_viol, (d + gap / 2) - (dB[i] + epsilon))
            lower_viol = max(lower_viol, (dB[i] - epsilon) - (d - gap / 2))
        return upper_viol, lower_viol, gap_max

    for _ in range(max_halvings):
        out = margins(R_try)
        if out is not None and out[0] <= 0 and out[1] <= 0:
            return DistanceComparison(epsilon=epsilon, R_epsilon=R_try,
                                      n_pairs=n_pairs, worst_upper_margin=out[0],
                                      worst_lower_margin=out[1], max_gap=out[2])
        R_try /= 2.0
    raise InsufficientPrecisionError(
        f"no admissible R_eps found above {R_try:.3e} for epsilon {epsilon}",
        gap=None)
