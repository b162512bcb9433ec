"""Orbit analytics for holomorphic self-maps: iteration, forward steps,
divergence rate, boundary dilation, Denjoy-Wolff classification and Julia's
inequality checks.

Maps are HoloMap objects (vectorized evaluator + optional exact Jacobian);
constructors for the catalog (disc/ball automorphisms, Siegel affine normal
forms, polynomial maps, Cayley conjugates, compositions) live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import siegel as sgl
from .ball import (
    BallAutomorphism,
    ball_distance,
    cayley,
    cayley_inverse,
    geodesic,
    horo_value,
    mobius_to_origin,
    unitary_taking,
)
from .domains import DomainSpec, ball_domain, siegel_domain
from .errors import (
    MetricInconsistencyError,
    NonConvergentLimitError,
    OutOfDomainError,
    PreconditionError,
)
from .numerics import ConvergenceReport, SeededSampler, as_cpoint, detect_limit, monotone_liminf

_INTERIOR_FIXED_TOL = 1e-10
_BOUNDARY_CLUSTER_TOL = 1e-8


# ---------------------------------------------------------------------------
# HoloMap
# ---------------------------------------------------------------------------

class HoloMap:
    """Holomorphic map between domains with a vectorized evaluator.

    On construction the evaluator is checked on 10^3 interior samples:
    every image must land in the codomain.
    """

    def __init__(self, domain: DomainSpec, codomain: DomainSpec,
                 evaluator: Callable, jacobian: Optional[Callable] = None,
                 is_automorphism: bool = False, name: str = "map",
                 inverse_evaluator: Optional[Callable] = None,
                 verify: bool = True, n_verify: int = 1000, seed: int = 11):
        self.domain = domain
        self.codomain = codomain
        self.evaluator = evaluator
        self.jacobian = jacobian
        self.is_automorphism = is_automorphism
        self.name = name
        self.inverse_evaluator = inverse_evaluator
        if verify:
            pts = domain.interior_samples(n_verify, seed=seed)
            img = self(pts)
            ok = np.atleast_1d(codomain.contains(img))
            if not np.all(ok):
                bad = int((~ok).sum())
                raise PreconditionError(
                    f"{name}: {bad}/{n_verify} sampled images left the codomain")

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        single = z.ndim == 1
        out = np.atleast_2d(self.evaluator(np.atleast_2d(z)))
        return out[0] if single else out

    def iterate_point(self, z, n: int) -> np.ndarray:
        z = as_cpoint(z, self.domain.dimension)
        for _ in range(n):
            z = self(z)
        return z


# ---------------------------------------------------------------------------
# map catalog
# ---------------------------------------------------------------------------

def from_ball_automorphism(aut: BallAutomorphism, name: str = "ball-automorphism") -> HoloMap:
    dom = ball_domain(aut.q)
    inv = aut.inverse()
    return HoloMap(dom, dom, evaluator=aut, jacobian=aut.jacobian,
                   is_automorphism=True, name=name, inverse_evaluator=inv)


def disc_automorphism(a: complex) -> HoloMap:
    """f(z) = (z + a)/(1 + conj(a) z) on the unit disc."""
    a = complex(a)
    if abs(a) >= 1:
        raise OutOfDomainError("|a| must be < 1")
    M = np.array([[1.0, a], [np.conj(a), 1.0]], dtype=complex)
    return from_ball_automorphism(BallAutomorphism(M), name=f"disc-automorphism(a={a})")


def siegel_linear(q: int, factors: Sequence[complex], name: Optional[str] = None) -> HoloMap:
    """Diagonal map (c_1 z_1, c_2 z'_1, ...) on H^q; self-map validity is
    checked by sampling.  Automorphism iff c_1 > 0 and |c_j|^2 = c_1."""
    factors = np.asarray(factors, dtype=complex)
    if factors.size != q:
        raise PreconditionError("need one factor per coordinate")
    dom = siegel_domain(q)
    c1 = factors[0]
    is_auto = abs(c1.imag) < 1e-14 and c1.real > 0 and \
        np.all(np.abs(np.abs(factors[1:]) ** 2 - c1.real) < 1e-12)

    def ev(Z):
        return Z * factors[None, :]

    inv = (lambda Z: Z / factors[None, :]) if is_auto else None
    return HoloMap(dom, dom, evaluator=ev,
                   jacobian=lambda z: np.diag(factors),
                   is_automorphism=bool(is_auto),
                   name=name or f"siegel-linear{tuple(factors.tolist())}",
                   inverse_evaluator=inv)


def siegel_translation(q: int, a: complex, b=None, name: Optional[str] = None) -> HoloMap:
    """z -> (z1 + a + 2i<z',b>, z' + b); self-map iff Im a >= |b|^2,
    automorphism iff equality."""
    b = np.zeros(q - 1, dtype=complex) if b is None else np.asarray(b, dtype=complex)
    a = complex(a)
    slack = a.imag - float(np.sum(np.abs(b) ** 2))
    if slack < -1e-14:
        raise PreconditionError("needs Im a >= |b|^2 to map H^q into itself")
    dom = siegel_domain(q)
    is_auto = abs(slack) < 1e-14

    def ev(Z):
        out = Z.copy()
        out[:, 0] = Z[:, 0] + a + 2j * (Z[:, 1:] @ np.conj(b))
        out[:, 1:] = Z[:, 1:] + b[None, :]
        return out

    inv = None
    if is_auto:
        ainv = -a + 2j * float(np.sum(np.abs(b) ** 2))

        def inv(Z):
            out = Z.copy()
            out[:, 0] = Z[:, 0] + ainv + 2j * (Z[:, 1:] @ np.conj(-b))
            out[:, 1:] = Z[:, 1:] - b[None, :]
            return out

    return HoloMap(dom, dom, evaluator=ev, jacobian=lambda z: np.eye(q, dtype=complex),
                   is_automorphism=is_auto,
                   name=name or f"siegel-translation(a={a})", inverse_evaluator=inv)


def siegel_normal_form(q: int, kind: str, lam: float = None,
                       angles: Sequence[float] = (), sign: int = +1) -> HoloMap:
    """The affine automorphism normal forms of H^q.

    kind 'hyperbolic': (z1/lam, e^{i t_j} z'_j / sqrt(lam)) with the stated
    dilation lam at the Denjoy-Wolff point; 'parabolic-translation':
    (z1 +- 1, e^{i t_j} z'_j); 'parabolic-shear' (q >= 2):
    (z1 - 2 z'_1 + i, z'_1 - i, e^{i t_j} z'_j ...).
    """
    angles = tuple(angles)
    if kind == "hyperbolic":
        if lam is None or not 0 < lam < 1:
            raise PreconditionError("hyperbolic normal form needs 0 < lam < 1 (the Denjoy-Wolff dilation)")
        phases = np.exp(1j * np.asarray(angles)) if angles else np.ones(q - 1)
        factors = np.concatenate([[1.0 / lam], phases / np.sqrt(lam)])
        return siegel_linear(q, factors, name=f"siegel-hyperbolic(lam={lam})")
    if kind == "parabolic-translation":
        phases = np.exp(1j * np.asarray(angles)) if angles else np.ones(q - 1)
        dom = siegel_domain(q)

        def ev(Z):
            out = Z.copy()
            out[:, 0] = Z[:, 0] + sign
            out[:, 1:] = Z[:, 1:] * phases[None, :]
            return out

        def inv(Z):
            out = Z.copy()
            out[:, 0] = Z[:, 0] - sign
            out[:, 1:] = Z[:, 1:] / phases[None, :]
            return out

        return HoloMap(dom, dom, evaluator=ev, jacobian=lambda z: np.diag(np.concatenate([[1.0], phases])),
                       is_automorphism=True, name=f"siegel-parabolic({sign:+d})",
                       inverse_evaluator=inv)
    if kind == "parabolic-shear":
        if q < 2:
            raise PreconditionError("the shear normal form needs q >= 2")
        phases = np.exp(1j * np.asarray(angles)) if angles else np.ones(max(q - 2, 0))
        dom = siegel_domain(q)

        def ev(Z):
            out = Z.copy()
            out[:, 0] = Z[:, 0] - 2.0 * Z[:, 1] + 1j
            out[:, 1] = Z[:, 1] - 1j
            if q > 2:
                out[:, 2:] = Z[:, 2:] * phases[None, :]
            return out

        return HoloMap(dom, dom, evaluator=ev, jacobian=None, is_automorphism=True,
                       name="siegel-parabolic-shear")
    raise PreconditionError(f"unknown normal form kind {kind!r}")


class _PolynomialComponents:
    """Vector of holomorphic polynomials z -> C^q given as monomial tables."""

    def __init__(self, q: int, tables: Sequence[dict]):
        self.q = q
        self.tables = [dict(t) for t in tables]

    def __call__(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=complex))
        out = np.zeros((Z.shape[0], len(self.tables)), dtype=complex)
        for i, table in enumerate(self.tables):
            acc = np.zeros(Z.shape[0], dtype=complex)
            for alpha, coeff in table.items():
                term = np.full(Z.shape[0], coeff, dtype=complex)
                for j, e in enumerate(alpha):
                    if e:
                        term = term * Z[:, j] ** e
                acc += term
            out[:, i] = acc
        return out

    def jacobian(self, z):
        z = as_cpoint(z, self.q)
        J = np.zeros((len(self.tables), self.q), dtype=complex)
        for i, table in enumerate(self.tables):
            for alpha, coeff in table.items():
                for j, e in enumerate(alpha):
                    if e:
                        d = list(alpha)
                        d[j] -= 1
                        term = coeff * e
                        for l, el in enumerate(d):
                            if el:
                                term = term * z[l] ** el
                        J[i, j] += term
        return J


def polynomial_self_map(domain: DomainSpec, tables: Sequence[dict],
                        name: str = "polynomial-map", **kw) -> HoloMap:
    comp = _PolynomialComponents(domain.dimension, tables)
    return HoloMap(domain, domain, evaluator=comp, jacobian=comp.jacobian,
                   name=name, **kw)


def cayley_conjugate_map(siegel_self_map: HoloMap, anchor=None,
                         name: Optional[str] = None) -> HoloMap:
    """Ball self-map C^{-1} o G o C from a Siegel self-map G; `anchor` is the
    boundary point of the ball sent to infinity (default e1)."""
    q = siegel_self_map.domain.dimension
    dom = ball_domain(q)
    e1 = np.eye(q, dtype=complex)[0]
    if anchor is None:
        U = np.eye(q, dtype=complex)
    else:
        U = unitary_taking(as_cpoint(anchor, q), e1)

    def ev(Z):
        # rows transform as Z @ M.T for M applied to points: U in, U^H out
        return cayley_inverse(siegel_self_map(cayley(np.atleast_2d(Z) @ U.T))) @ np.conj(U)

    inv_ev = None
    if siegel_self_map.inverse_evaluator is not None:
        def inv_ev(Z):
            return cayley_inverse(siegel_self_map.inverse_evaluator(
                cayley(np.atleast_2d(Z) @ U.T))) @ np.conj(U)

    out = HoloMap(dom, dom, evaluator=ev,
                  is_automorphism=siegel_self_map.is_automorphism,
                  name=name or f"cayley-conjugate({siegel_self_map.name})",
                  inverse_evaluator=inv_ev)
    # model extraction re-uses the unbounded realization directly: iterating
    # through the ball squanders precision once orbits crowd the sphere
    out.siegel_form = siegel_self_map
    out.siegel_anchor_unitary = U
    return out


def compose_maps(maps: Sequence[HoloMap], name: Optional[str] = None) -> HoloMap:
    """Left-to-right composition: compose_maps([f, g]) evaluates g(f(z))."""
    if not maps:
        raise PreconditionError("need at least one map")

    def ev(Z):
        out = np.atleast_2d(Z)
        for m in maps:
            out = m(out)
        return out

    return HoloMap(maps[0].domain, maps[-1].codomain, evaluator=ev,
                   is_automorphism=all(m.is_automorphism for m in maps),
                   name=name or "composition(" + ",".join(m.name for m in maps) + ")")


# ---------------------------------------------------------------------------
# orbits
# ---------------------------------------------------------------------------

@dataclass
class OrbitRecord:
    points: np.ndarray
    direction: str
    base: np.ndarray
    dist_to_base: np.ndarray
    steps: np.ndarray
    horo: Optional[np.ndarray]
    exited: bool
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.points.shape[0]


def _domain_horo(domain: DomainSpec, pole, center, z):
    if domain.kind == "ball":
        return horo_value(pole, center, z)
    if domain.kind == "siegel":
        return sgl.siegel_horo_value(pole, center, z)
    raise PreconditionError("closed-form horosphere values exist on ball/Siegel only")


def iterate(f: HoloMap, x, n: int, pole=None, center=None,
            guard: float = 1e-12, with_stats: bool = True) -> OrbitRecord:
    """Forward orbit with per-index Kobayashi statistics.

    Truncates with an exit flag when the orbit leaves the numerical interior
    (margin below `guard`).  Horosphere values are tracked when a (pole,
    center) pair is supplied (ball/Siegel domains).  with_stats=False skips
    the distance columns (useful on sandwich-metric domains).
    """
    if n < 1:
        raise PreconditionError("n must be >= 1")
    x = as_cpoint(x, f.domain.dimension)
    f.domain.require_interior(x)
    pts = [x]
    exited = False
    z = x
    for _ in range(n):
        z = f(z)
        # leave before boundary underflow or coordinate blow-up can poison stats
        if f.domain.interior_margin(z) < guard or np.max(np.abs(z)) > 1e100:
            exited = True
            break
        pts.append(z)
    P = np.array(pts)
    dists = np.zeros(len(pts))
    steps = np.zeros(max(len(pts) - 1, 0))
    gaps = 0.0
    if with_stats:
        for i in range(1, len(pts)):
            dists[i], g = f.domain.distance_with_gap(x, P[i])
            gaps = max(gaps, g)
        for i in range(len(pts) - 1):
            steps[i], g = f.domain.distance_with_gap(P[i], P[i + 1])
            gaps = max(gaps, g)
    horo = None
    if pole is not None and center is not None:
        horo = np.array([_domain_horo(f.domain, pole, center, p) for p in pts])
    return OrbitRecord(points=P, direction="forward", base=x, dist_to_base=dists,
                       steps=steps, horo=horo, exited=exited,
                       metadata={"requested": n, "metric_gap": gaps})


def forward_step(f: HoloMap, x, m: int, n_terms: int = 48,
                 window: int = 8, tol: float = 1e-6) -> ConvergenceReport:
    """s_m(x) = lim_n k(f^n x, f^{n+m} x); the pre-limit sequence must be
    non-increasing (within slack + metric gap)."""
    if m < 1:
        raise PreconditionError("m must be >= 1")
    x = as_cpoint(x, f.domain.dimension)
    orbit = iterate(f, x, n_terms + m)
    P = orbit.points
    count = P.shape[0] - m
    if count < 2:
        raise PreconditionError("orbit exited too early to estimate the step")
    noise = np.atleast_1d(f.domain.metric_roundoff(P))
    pair_noise = np.maximum(noise[:count], noise[m:m + count])
    # keep only indices where the metric noise floor is well below tol
    loud = np.nonzero(pair_noise > tol / 20.0)[0]
    count_eff = count if loud.size == 0 else max(int(loud[0]), window + 2)
    count_eff = min(count_eff, count)
    vals = np.zeros(count_eff)
    gaps = 0.0
    for i in range(count_eff):
        vals[i], g = f.domain.distance_with_gap(P[i], P[i + m])
        gaps = max(gaps, g)
    slack = 1e-9 + 2.0 * gaps + 20.0 * (pair_noise[:count_eff - 1] + pair_noise[1:count_eff])
    bad = np.nonzero(np.diff(vals) > slack)[0]
    if bad.size:
        raise MetricInconsistencyError(
            f"forward step sequence increased by {np.diff(vals)[bad[0]]:.3e} at index {int(bad[0]) + 1}",
            index=int(bad[0]) + 1)
    tail_noise = float(pair_noise[max(count_eff - window, 0):count_eff].max())
    return detect_limit(vals, window=min(window, count_eff),
                        tol=tol + 2.0 * gaps + 40.0 * tail_noise)


@dataclass(frozen=True)
class DivergenceRate:
    value: float
    report: ConvergenceReport
    second_value: Optional[float] = None


def divergence_rate(f: HoloMap, x, m_max: int, window: int = 8,
                    tol: float = 1e-3, second_base=None) -> DivergenceRate:
    """c(f) = inf_m k(f^m x, x)/m, reported with the tail trend of the
    normalized sequence (the limit equals the inf)."""
    if m_max < 8:
        raise PreconditionError("m_max must be >= 8")
    x = as_cpoint(x, f.domain.dimension)
    orbit = iterate(f, x, m_max)
    ms = np.arange(1, len(orbit))
    vals = orbit.dist_to_base[1:] / ms
    value = float(vals.min())
    report = detect_limit(vals, window=min(window, vals.size), tol=tol)
    second = None
    if second_base is not None:
        second = divergence_rate(f, second_base, m_max, window=window, tol=tol).value
    return DivergenceRate(value=value, report=report, second_value=second)


# ---------------------------------------------------------------------------
# dilation
# ---------------------------------------------------------------------------

def _boundary_ray(domain: DomainSpec, pole, zeta):
    """t -> point running from the pole to the boundary point zeta at unit
    speed (exact on ball/Siegel, radial geometric approach otherwise)."""
    if domain.kind == "ball":
        gamma = geodesic(pole, zeta, "ray")
        return lambda t: gamma.point_at(np.atleast_1d(t))
    if domain.kind == "siegel":
        ray = sgl.ray_toward(pole, zeta)
        return lambda t: np.atleast_2d(ray.point_at(t))
    p = as_cpoint(pole, domain.dimension)
    zt = domain._newton_project(as_cpoint(zeta, domain.dimension))

    def ray(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return zt[None, :] + np.exp(-t)[:, None] * (p - zt)[None, :]

    return ray


@dataclass(frozen=True)
class DilationEstimate:
    lam: float
    log_lam_liminf: float
    step_report: ConvergenceReport
    method: str
    klimit_ok: bool


def dilation(f: HoloMap, zeta, pole=None, method: str = "both",
             t_step: float = 0.5, n_points: int = 40) -> DilationEstimate:
    """Boundary dilation at a fixed candidate zeta (None = infinity on H^q).

    liminf route: liminf-tail of k(p, z_t) - k(p, f(z_t)) along the geodesic
    ray toward zeta; geodesic-step route: exp(+-lim k(z_t, f(z_t))) with the
    sign taken from the liminf route.
    """
    dom = f.domain
    if pole is None:
        pole = dom.center
    pole = as_cpoint(pole, dom.dimension)
    ray = _boundary_ray(dom, pole, zeta)
    ts = t_step * np.arange(1, n_points + 1)
    pts = ray(ts)
    images = f(pts)

    # K-limit sanity: images must approach zeta euclideanly along the ray
    if zeta is None:
        klimit_ok = bool(np.abs(images[-1][0]) > np.abs(pts[-1][0]) * 0.1)
    else:
        zt = as_cpoint(zeta, dom.dimension)
        d_img = np.linalg.norm(images - zt[None, :], axis=1)
        d_pt = np.linalg.norm(pts - zt[None, :], axis=1)
        klimit_ok = bool(d_img[-1] <= max(1e-3, 50.0 * d_pt[-1]))
    if not klimit_ok:
        raise PreconditionError("zeta does not behave as a boundary fixed point along the ray")

    diffs = np.zeros(n_points)
    steps = np.zeros(n_points)
    gaps = 0.0
    for i in range(n_points):
        d1, g1 = dom.distance_with_gap(pole, pts[i])
        d2, g2 = dom.distance_with_gap(pole, images[i])
        d3, g3 = dom.distance_with_gap(pts[i], images[i])
        diffs[i] = d1 - d2
        steps[i] = d3
        gaps = max(gaps, g1 + g2, g3)
    log_lam_liminf = monotone_liminf(diffs, "liminf-tail")
    step_report = detect_limit(steps, window=8, tol=1e-6 + 2 * gaps)
    step_limit = step_report.limit if step_report.converged else float(np.mean(steps[-8:]))
    sign = 1.0 if log_lam_liminf >= 0 else -1.0
    if method == "liminf":
        lam = float(np.exp(log_lam_liminf))
    else:
        lam = float(np.exp(sign * abs(step_limit)))
    return DilationEstimate(lam=lam, log_lam_liminf=float(log_lam_liminf),
                            step_report=step_report, method=method, klimit_ok=klimit_ok)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass
class ClassificationResult:
    type: str
    denjoy_wolff: Optional[np.ndarray]
    dilation: Optional[float]
    divergence_rate: Optional[float]
    evidence: dict


def classify(f: HoloMap, x, n_max: int = 400, m_max: int = 200) -> ClassificationResult:
    """Elliptic / hyperbolic / parabolic(zero|nonzero-step) classification.

    Interior convergence (trailing 16 orbit points within 1e-10) gives
    elliptic; otherwise the Euclidean boundary cluster point is the
    Denjoy-Wolff candidate and dilation/divergence-rate decide the type,
    cross-checked through log(lam) = -c(f).
    """
    x = as_cpoint(x, f.domain.dimension)
    orbit = iterate(f, x, n_max)
    P = orbit.points
    tail = P[-16:]
    diam = 0.0
    if tail.shape[0] >= 2:
        diam = float(np.max(np.linalg.norm(tail[None, :, :] - tail[:, None, :], axis=2)))
    evidence = {"orbit_exited": orbit.exited, "tail_diameter": diam}
    if not orbit.exited and diam < _INTERIOR_FIXED_TOL:
        return ClassificationResult(type="elliptic", denjoy_wolff=P[-1],
                                    dilation=None, divergence_rate=None,
                                    evidence=evidence)

    # boundary cluster point
    window = P[-min(12, len(P)):]
    cluster = window.mean(axis=0)
    if f.domain.kind == "siegel":
        heights = np.atleast_1d(f.domain.interior_margin(window))
        zeta = None if heights[-1] > 10.0 or np.linalg.norm(window[-1]) > 100.0 \
            else f.domain._newton_project(cluster)
    else:
        zeta = f.domain._newton_project(cluster) if f.domain.bounded else cluster
        spread = float(np.max(np.linalg.norm(window - (zeta if zeta is not None else cluster), axis=1)))
        evidence["cluster_spread"] = spread
        if spread > 0.05:
            return ClassificationResult(type="inconclusive", denjoy_wolff=None,
                                        dilation=None, divergence_rate=None,
                                        evidence=evidence)
    dil = dilation(f, zeta)
    dr = divergence_rate(f, x, m_max=m_max)
    s1 = forward_step(f, x, 1)
    s1_val = s1.limit if s1.converged else float(s1.tail().mean())
    evidence.update({"dilation_liminf": dil.log_lam_liminf,
                     "divergence_rate": dr.value,
                     "s1": s1_val,
                     "ugualedil_residual": abs(np.log(dil.lam) + dr.value)})
    if dil.lam < 1.0 - 1e-3:
        kind = "hyperbolic"
    elif s1_val > 1e-3:
        kind = "parabolic-nonzero-step"
    else:
        kind = "parabolic-zero-step"
    return ClassificationResult(type=kind, denjoy_wolff=zeta, dilation=dil.lam,
                                divergence_rate=dr.value, evidence=evidence)


# ---------------------------------------------------------------------------
# Julia's inequality
# ---------------------------------------------------------------------------

def sample_horosphere(q: int, R: float, n: int, seed: int = 5,
                      center=None, pole=None) -> np.ndarray:
    """Deterministic samples of E(pole, center, R) in B^q, boundary-deep:
    heights above the horosphere cut are log-uniform over 18 octaves, so the
    set is stressed both near the pole side and far into the Koranyi throat."""
    e1 = np.eye(q, dtype=complex)[0]
    center = e1 if center is None else as_cpoint(center, q)
    pole = np.zeros(q, dtype=complex) if pole is None else as_cpoint(pole, q)
    # threshold in the pole-0 gauge
    R0 = R * float(horo_value(np.zeros(q, dtype=complex), center, pole)) if np.linalg.norm(pole) else R
    sampler = SeededSampler(seed, max(q - 1, 1))
    heights = (1.0 / R0) * np.exp(sampler.reals(n, np.log(1.0 + 1e-6), np.log(1e8)))
    x = sampler.reals(n, -3.0, 3.0)
    if q > 1:
        zp = sampler.complex_ball(n) * np.sqrt(np.maximum(heights, 1.0))[:, None]
    else:
        zp = np.zeros((n, 0))
    w = np.zeros((n, q), dtype=complex)
    w[:, 0] = x + 1j * (np.sum(np.abs(zp) ** 2, axis=1) + heights)
    w[:, 1:] = zp
    z = cayley_inverse(w)
    U = unitary_taking(e1, center)
    return z @ U.T


@dataclass(frozen=True)
class JuliaReport:
    lam: float
    n_samples: int
    violations: int
    worst_ratio: float
    radii: Tuple[float, ...]


def julia_check(f: HoloMap, zeta, pole=None, R_values: Sequence[float] = (0.5, 1.0, 2.0),
                n_samples: int = 300, lam: Optional[float] = None,
                seed: int = 5) -> JuliaReport:
    """Verify h_{zeta,p}(f(z)) <= lam * h_{zeta,p}(z) * (1 + 1e-6) on samples
    of the horospheres E(p, zeta, R)."""
    dom = f.domain
    if dom.kind != "ball":
        raise PreconditionError("julia_check runs on ball-domain maps (closed-form horospheres)")
    q = dom.dimension
    pole = np.zeros(q, dtype=complex) if pole is None else as_cpoint(pole, q)
    if lam is None:
        lam = dilation(f, zeta, pole=pole).lam
    zeta = as_cpoint(zeta, q)
    violations = 0
    worst = 0.0
    for i, R in enumerate(R_values):
        z = sample_horosphere(q, R, n_samples, seed=seed + i, center=zeta, pole=pole)
        keep = 1.0 - np.linalg.norm(z, axis=1) > 1e-11
        z = z[keep]
        hz = np.atleast_1d(horo_value(pole, zeta, z))
        inside = hz < R
        z, hz = z[inside], hz[inside]
        fz = f(z)
        hfz = np.atleast_1d(horo_value(pole, zeta, fz))
        ratio = hfz / hz
        worst = max(worst, float(ratio.max()))
        violations += int(np.sum(ratio > lam * (1.0 + 1e-6)))
    return JuliaReport(lam=float(lam), n_samples=n_samples * len(R_values),
                       violations=violations, worst_ratio=worst,
                       radii=tuple(float(r) for r in R_values))
